#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::search::log::EpisodeLog;

fuzz_target!(|data: &str| {
    let _ = EpisodeLog::from_jsonl(data);
});
