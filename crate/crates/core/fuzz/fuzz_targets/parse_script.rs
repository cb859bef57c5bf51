#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::reasoner::scripted::parse_script;

fuzz_target!(|data: &str| {
    let _ = parse_script(data);
});
