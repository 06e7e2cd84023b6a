pub mod eval;
pub mod nmf;
pub mod synth;
pub mod train;
pub mod watch;
