#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::grammar::parse_planner_completion;

fuzz_target!(|data: &str| {
    let _ = parse_planner_completion(data);
});
