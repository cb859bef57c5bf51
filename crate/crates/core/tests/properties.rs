mod common;

use proptest::prelude::*;
use verisearch_core::bench::{confusion_matrix, macro_f1};
use verisearch_core::decision::{early_stop, fuse, SubtaskOutcome};
use verisearch_core::domain::{NewsItem, Polarity, Taxonomy};
use verisearch_core::grammar::{parse_action, parse_init_distribution, render_action};
use verisearch_core::reasoner::transcript::parse_transcript;
use verisearch_core::search::tree::{NodeKind, ROOT};
use verisearch_core::toolkit::{builtin_cards, CardProfile};

fn polarity() -> impl Strategy<Value = Polarity> {
    prop_oneof![
        Just(Polarity::Authentic),
        Just(Polarity::Forged),
        Just(Polarity::Unconfirmed)
    ]
}

fn outcomes() -> impl Strategy<Value = Vec<SubtaskOutcome>> {
    let keys = ["text", "image", "match"];
    (
        proptest::sample::subsequence(keys.to_vec(), 1..=3),
        prop::collection::vec((polarity(), 0u8..=10), 3),
    )
        .prop_map(|(subs, cells)| {
            subs.into_iter()
                .zip(cells)
                .map(|(s, (p, c))| SubtaskOutcome {
                    subtask: s.to_string(),
                    polarity: p,
                    answer: String::new(),
                    trajectory_score: 0.5,
                    confidence: c as f64 / 10.0,
                    reward: 0.5,
                    iteration: 0,
                    trajectory: Vec::new(),
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_is_permutation_invariant(outs in outcomes(), seed in any::<u64>()) {
        let tax = Taxonomy::mmfakebench();
        let a = fuse(&outs, &tax).unwrap();
        let mut shuffled = outs.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed as usize) % n);
        if seed % 2 == 0 {
            shuffled.reverse();
        }
        let b = fuse(&shuffled, &tax).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn p_real_is_bounded_by_complements(outs in outcomes()) {
        let v = fuse(&outs, &Taxonomy::mmfakebench()).unwrap();
        if v.p_fake.is_empty() {
            prop_assert!(!v.reliable);
        } else {
            let lo = v.p_fake.values().map(|p| 1.0 - p).fold(f64::INFINITY, f64::min);
            let hi = v.p_fake.values().map(|p| 1.0 - p).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v.p_real >= lo - 1e-12 && v.p_real <= hi + 1e-12);
        }
    }

    #[test]
    fn early_stop_needs_confident_forgery(outs in outcomes(), tau in 0u8..=10) {
        let tax = Taxonomy::mmfakebench();
        let tau = tau as f64 / 10.0;
        for o in &outs {
            let stop = early_stop(o, tau, &tax).unwrap();
            prop_assert_eq!(stop.is_some(), o.polarity == Polarity::Forged && o.confidence >= tau);
        }
    }

    #[test]
    fn rendered_actions_parse_back(raw in "(Google|VQA|Finish|Detect)?\\[?[ -~]{0,30}\\]?[ -~]{0,5}") {
        let verbs = ["Google", "VQA", "Detect", "Finish"];
        if let Ok(a) = parse_action(&raw, &verbs) {
            prop_assert_eq!(parse_action(&render_action(&a), &verbs).unwrap(), a);
        }
    }

    #[test]
    fn init_weights_stay_in_unit_interval(raw in "[ -~]{0,60}", k in 1usize..6) {
        let d = parse_init_distribution(&raw, k);
        prop_assert_eq!(d.weights.len(), k);
        prop_assert!(d.weights.iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn transcript_parser_never_panics(raw in "\\PC{0,200}") {
        let _ = parse_transcript(&raw);
    }

    #[test]
    fn macro_f1_ignores_label_names(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), perm in Just([2usize, 0, 3, 1])) {
        let classes: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let renamed: Vec<String> = (0..4).map(|i| format!("k{}", perm[i])).collect();
        let preds: Vec<&str> = pairs.iter().map(|(p, _)| classes[*p].as_str()).collect();
        let golds: Vec<&str> = pairs.iter().map(|(_, g)| classes[*g].as_str()).collect();
        let preds2: Vec<&str> = pairs.iter().map(|(p, _)| renamed[*p].as_str()).collect();
        let golds2: Vec<&str> = pairs.iter().map(|(_, g)| renamed[*g].as_str()).collect();
        let a = macro_f1(&preds, &golds, &classes).unwrap();
        let b = macro_f1(&preds2, &golds2, &renamed).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let m = confusion_matrix(&preds, &golds, &classes).unwrap();
        prop_assert_eq!(m.iter().flatten().sum::<u64>(), pairs.len() as u64);
    }
}

#[test]
fn logged_backprop_keeps_running_means() {
    let item = NewsItem::new("item", "A claim.");
    for seed in 0..200u64 {
        let engine = common::random_engine(seed);
        let ep = engine.run_episode(&item).unwrap();
        let mut rewards: std::collections::HashMap<usize, Vec<f64>> = Default::default();
        for it in ep.log.iterations() {
            for d in &it.backprop {
                let rs = rewards.entry(d.node).or_default();
                rs.push(it.reward);
                let mean = rs.iter().sum::<f64>() / rs.len() as f64;
                assert!(
                    (d.value_after - mean).abs() < 1e-12,
                    "seed {seed} node {}",
                    d.node
                );
                assert_eq!(d.visits_after, rs.len() as u64);
            }
        }
        // every visit of a subtask node is also a visit of the root
        let root = ep.tree.node(ROOT).visits;
        let subtask_visits: u64 = ep.tree.subtask_nodes().map(|n| n.visits).sum();
        assert_eq!(root, subtask_visits, "seed {seed}");
        assert_eq!(root as usize, ep.iterations);
        for n in ep.tree.nodes() {
            if n.kind == NodeKind::Step {
                let child_visits: u64 = n.children.iter().map(|&c| ep.tree.node(c).visits).sum();
                assert!(child_visits <= n.visits, "seed {seed} node {}", n.id);
            }
        }
    }
}

#[test]
fn actions_stay_within_the_subtask_whitelist() {
    let item = NewsItem::new("item", "A claim.");
    let tax = Taxonomy::mmfakebench();
    let cards = builtin_cards(&tax, CardProfile::Offline);
    for seed in 0..200u64 {
        let ep = common::random_engine(seed).run_episode(&item).unwrap();
        for it in ep.log.iterations() {
            let allowed: Vec<&str> = cards
                .iter()
                .filter(|c| c.subtask_scopes.iter().any(|s| *s == it.subtask))
                .map(|c| c.name.as_str())
                .chain(["Finish"])
                .collect();
            for s in &it.steps {
                if let Some(a) = &s.step.parsed {
                    assert!(
                        allowed.contains(&a.name.as_str()),
                        "seed {seed}: {} in {}",
                        a.name,
                        it.subtask
                    );
                }
            }
        }
    }
}
