#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::toolkit::fixture::parse_fixture_line;

fuzz_target!(|data: &str| {
    for line in data.lines() {
        let _ = parse_fixture_line(line);
    }
});
