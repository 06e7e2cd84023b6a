use sentinel_core::synth::{gen_ramp, to_jsonl, xafs_benchmark, xpcs_benchmark, RampSpec, CANONICAL_SEED};
use sha2::{Digest, Sha256};

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[test]
fn canonical_datasets_are_pinned() {
    let xpcs = to_jsonl(&xpcs_benchmark(CANONICAL_SEED).unwrap().records());
    let xafs = to_jsonl(&xafs_benchmark(CANONICAL_SEED).unwrap().records());
    let ramp = to_jsonl(&gen_ramp(&RampSpec::default(), CANONICAL_SEED).unwrap().records());
    assert_eq!(digest(&xpcs), "6f911717ef1ab3354e4ada0a37053ac04e6bd0dc8c93d65e4451953e51a70954");
    assert_eq!(digest(&xafs), "aa8432fcc256843265674f62aae0ff24b7295013e4e0b011f8d3ae073374c43e");
    assert_eq!(digest(&ramp), "9e408a9141fb80eb125e66eb1eb979d3768928af7f29182c7e8b8c142d62e96e");
}

#[test]
fn same_seed_same_bytes() {
    let a = to_jsonl(&xafs_benchmark(3).unwrap().records());
    let b = to_jsonl(&xafs_benchmark(3).unwrap().records());
    assert_eq!(a, b);
    assert_ne!(a, to_jsonl(&xafs_benchmark(4).unwrap().records()));
}
