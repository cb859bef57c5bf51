#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use verisearch_core::domain::{EngineConfig, NewsItem, Taxonomy};
use verisearch_core::reasoner::{
    Reasoner, ReasonerError, ReasonerRequest, ReasonerResponse, Role, Usage,
};
use verisearch_core::search::Engine;
use verisearch_core::toolkit::{
    builtin_cards, CardProfile, Registry, Tool, ToolError, ToolOutput, Toolkit,
};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Reasoner that answers every request with seeded random, mostly well-formed text.
pub struct RandomReasoner {
    seed: u64,
    calls: AtomicU64,
    taxonomy: Taxonomy,
}

impl RandomReasoner {
    pub fn new(seed: u64, taxonomy: Taxonomy) -> Self {
        Self {
            seed,
            calls: AtomicU64::new(0),
            taxonomy,
        }
    }

    fn planner_line(&self, rng: &mut ChaCha8Rng, subtask: Option<&str>) -> String {
        let spec = subtask.and_then(|s| self.taxonomy.subtask(s));
        let action = match (rng.gen_range(0..10), spec) {
            (0..=2, Some(s)) => format!("Finish[{}]", s.forged_token),
            (3..=5, Some(s)) => format!("Finish[{}]", s.authentic_token),
            (6..=7, Some(s)) => format!(
                "{}[query {}]",
                s.default_verbs[rng.gen_range(0..s.default_verbs.len())],
                rng.gen::<u8>()
            ),
            (8, _) => "Finish[PERHAPS]".to_string(),
            _ => "look around".to_string(),
        };
        format!("Thought 1: considering.\nAction 1: {action}")
    }
}

impl Reasoner for RandomReasoner {
    fn complete(&self, req: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ call);
        let n = req.sample_count.max(1);
        let completions = (0..n)
            .map(|_| match req.role {
                Role::Initializer => {
                    let w: Vec<String> = self
                        .taxonomy
                        .subtasks
                        .iter()
                        .map(|_| format!("{:.1}", rng.gen_range(0..=10) as f64 / 10.0))
                        .collect();
                    format!("Thus, the possibility of each source is [{}]", w.join(", "))
                }
                Role::Planner => self.planner_line(&mut rng, req.subtask.as_deref()),
                Role::TrajectoryEvaluator => {
                    format!("Thus the correctness score is {}", rng.gen_range(0..=10))
                }
                Role::ConfidenceEvaluator => {
                    if rng.gen_range(0..20) == 0 {
                        "unsure".to_string()
                    } else {
                        format!("Thus the reliability score is {}", rng.gen_range(0..=10))
                    }
                }
                Role::Vision => "a picture".to_string(),
            })
            .collect();
        Ok(ReasonerResponse {
            completions,
            usage: Usage {
                input_tokens: 1,
                output_tokens: 1,
                model_name: "random".into(),
            },
        })
    }
}

pub struct EchoTool;

impl Tool for EchoTool {
    fn call(&self, verb: &str, argument: &str, item: &NewsItem) -> Result<ToolOutput, ToolError> {
        Ok(ToolOutput::text(format!(
            "{verb} on {} for {argument}",
            item.id
        )))
    }
}

pub fn echo_toolkit(taxonomy: &Taxonomy) -> Arc<Toolkit> {
    let mut reg = Registry::new();
    for card in builtin_cards(taxonomy, CardProfile::Offline) {
        reg = reg.register(card, Arc::new(EchoTool)).unwrap();
    }
    Arc::new(Toolkit::new(reg))
}

/// Seeded engine configuration covering the interesting ranges.
pub fn random_config(rng: &mut ChaCha8Rng) -> EngineConfig {
    let grid = [0.5, 0.6, 0.7, 0.8, 0.9];
    EngineConfig {
        n_actions: rng.gen_range(1..=3),
        depth_limit: rng.gen_range(1..=4),
        simulations: rng.gen_range(1..=8),
        tau_early: grid[rng.gen_range(0..grid.len())],
        tau_prune: grid[rng.gen_range(0..grid.len())],
        alpha: rng.gen_range(0..=10) as f64 / 10.0,
        continuation: if rng.gen() {
            verisearch_core::domain::Continuation::First
        } else {
            verisearch_core::domain::Continuation::Ranked
        },
        seed: rng.gen(),
        ..EngineConfig::default()
    }
}

pub fn random_engine(seed: u64) -> Engine {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taxonomy = Taxonomy::mmfakebench();
    let config = random_config(&mut rng);
    let toolkit = echo_toolkit(&taxonomy);
    Engine::new(
        taxonomy.clone(),
        config,
        toolkit,
        Arc::new(RandomReasoner::new(seed, taxonomy)),
    )
    .unwrap()
}
