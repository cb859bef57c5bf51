#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::reasoner::transcript::{parse_transcript, render_transcript};

fuzz_target!(|data: &str| {
    if let Ok(t) = parse_transcript(data) {
        let back = parse_transcript(&render_transcript(&t)).expect("rendered transcript parses");
        assert_eq!(back.records, t.records);
    }
});
