#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::grammar::{parse_score, CORRECTNESS_MARKER, RELIABILITY_MARKER};

fuzz_target!(|data: &str| {
    let _ = parse_score(data, CORRECTNESS_MARKER);
    let _ = parse_score(data, RELIABILITY_MARKER);
});
