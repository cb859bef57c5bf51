#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::grammar::parse_init_distribution;

fuzz_target!(|data: &str| {
    for k in 1..=5 {
        let d = parse_init_distribution(data, k);
        assert_eq!(d.weights.len(), k);
        assert!(d.weights.iter().all(|w| (0.0..=1.0).contains(w)));
    }
});
