fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = sentinel_cli::run(std::env::args_os(), &|k| std::env::var(k).ok());
    std::process::exit(code);
}
