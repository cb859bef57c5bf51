#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use verisearch_core::profile::Profile;

fuzz_target!(|data: &str| {
    let _ = Profile::parse(data, Path::new("/nonexistent-fuzz-base"));
});
