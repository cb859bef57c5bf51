//! Runs every checked-in fuzz seed through its parser with the same checks as the fuzz targets.

use std::fs;
use std::path::Path;

use verisearch_core::bench::{parse_corpus, parse_decimal};
use verisearch_core::cases::{case_fixtures, case_script, parse_case};
use verisearch_core::domain::Taxonomy;
use verisearch_core::grammar::{
    parse_action, parse_init_distribution, parse_planner_completion, parse_score, render_action,
    CORRECTNESS_MARKER, RELIABILITY_MARKER,
};
use verisearch_core::profile::Profile;
use verisearch_core::reasoner::live::parse_response;
use verisearch_core::reasoner::scripted::parse_script;
use verisearch_core::reasoner::transcript::{parse_transcript, render_transcript};
use verisearch_core::search::log::EpisodeLog;
use verisearch_core::toolkit::fixture::parse_fixture_line;

fn check(target: &str, data: &[u8]) {
    let text = String::from_utf8_lossy(data);
    let s = text.as_ref();
    match target {
        "parse_action" => {
            let verbs = ["Google", "Wikipedia", "VQA", "Detect", "Finish"];
            if let Ok(a) = parse_action(s, &verbs) {
                assert_eq!(parse_action(&render_action(&a), &verbs).unwrap(), a);
            }
        }
        "parse_planner" => {
            let _ = parse_planner_completion(s);
        }
        "parse_init" => {
            for k in 1..=5 {
                let d = parse_init_distribution(s, k);
                assert_eq!(d.weights.len(), k);
                assert!(d.weights.iter().all(|w| (0.0..=1.0).contains(w)));
            }
        }
        "parse_score" => {
            let _ = parse_score(s, CORRECTNESS_MARKER);
            let _ = parse_score(s, RELIABILITY_MARKER);
        }
        "parse_corpus" => {
            let _ = parse_corpus(s, Path::new("."), &Taxonomy::mmfakebench());
            let _ = parse_corpus(s, Path::new("."), &Taxonomy::amg());
        }
        "parse_transcript" => {
            if let Ok(t) = parse_transcript(s) {
                assert_eq!(
                    parse_transcript(&render_transcript(&t)).unwrap().records,
                    t.records
                );
            }
        }
        "parse_case" => {
            if let Ok(c) = parse_case(s) {
                let _ = case_script(&c, &Taxonomy::mmfakebench());
                let _ = case_fixtures(&c);
            }
        }
        "parse_profile" => {
            let _ = Profile::parse(s, Path::new("/nonexistent-fuzz-base"));
        }
        "parse_fixture" => {
            for line in s.lines() {
                let _ = parse_fixture_line(line);
            }
        }
        "parse_script" => {
            let _ = parse_script(s);
        }
        "parse_decimal" => {
            let _ = parse_decimal(s);
        }
        "parse_log" => {
            let _ = EpisodeLog::from_jsonl(s);
        }
        "parse_response" => {
            if let Ok(v) = serde_json::from_slice::<serde_json::Value>(data) {
                let _ = parse_response(&v, "m");
            }
        }
        other => panic!("seed directory {other} has no matching parser"),
    }
}

#[test]
fn every_seed_parses_without_panicking() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus");
    let mut seen = 0;
    for dir in fs::read_dir(&root).unwrap() {
        let dir = dir.unwrap();
        let target = dir.file_name().to_string_lossy().into_owned();
        for seed in fs::read_dir(dir.path()).unwrap() {
            let data = fs::read(seed.unwrap().path()).unwrap();
            check(&target, &data);
            seen += 1;
        }
    }
    assert!(seen >= 13);
}

#[test]
fn known_seeds_parse_as_expected() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus");
    let log = fs::read_to_string(root.join("parse_log/good_case")).unwrap();
    assert_eq!(
        EpisodeLog::from_jsonl(&log).unwrap().iterations().count(),
        3
    );
    let case = fs::read_to_string(root.join("parse_case/bad")).unwrap();
    assert_eq!(parse_case(&case).unwrap().iterations.len(), 3);
}
