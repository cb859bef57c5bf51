#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::bench::parse_decimal;

fuzz_target!(|data: &str| {
    let _ = parse_decimal(data);
});
