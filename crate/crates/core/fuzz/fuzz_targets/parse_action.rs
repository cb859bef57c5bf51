#![no_main]

use libfuzzer_sys::fuzz_target;
use verisearch_core::grammar::{parse_action, render_action};

fuzz_target!(|data: &str| {
    let verbs = ["Google", "Wikipedia", "VQA", "Detect", "Finish"];
    if let Ok(a) = parse_action(data, &verbs) {
        let again = parse_action(&render_action(&a), &verbs).expect("rendered action parses");
        assert_eq!(again, a);
    }
});
