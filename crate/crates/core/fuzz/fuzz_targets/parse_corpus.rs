#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use verisearch_core::bench::parse_corpus;
use verisearch_core::domain::Taxonomy;

fuzz_target!(|data: &str| {
    let _ = parse_corpus(data, Path::new("."), &Taxonomy::mmfakebench());
    let _ = parse_corpus(data, Path::new("."), &Taxonomy::amg());
});
