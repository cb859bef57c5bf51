#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::cases::{case_fixtures, case_script, parse_case};
use verisearch_core::domain::Taxonomy;

fuzz_target!(|data: &str| {
    if let Ok(c) = parse_case(data) {
        let _ = case_script(&c, &Taxonomy::mmfakebench());
        let _ = case_fixtures(&c);
    }
});
