//! Tree search over forgery sources.
//!
//! Each iteration picks the open subtask with the best exploration-biased
//! score, runs one rollout for it (plan, act, observe until `Finish` or the
//! depth limit), scores the result and backpropagates the combined reward.
//! Authentic answers given with high confidence retire their subtask; a
//! confident forged answer ends the search immediately. Otherwise the
//! collected outcomes are fused once the iteration budget is spent.

pub mod log;
pub mod memory;
pub mod tree;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use self::log::{
    CandidateRecord, EpisodeLog, IterationRecord, LogRecord, StepRecord, UctEntry, LOG_SCHEMA,
};
use self::memory::FailureMemory;
use self::tree::{NodeId, NodeKind, SearchTree, SelectError};
use crate::decision::{self, DecisionError, SubtaskOutcome, Verdict};
use crate::domain::{
    combine_value, Action, Continuation, DomainError, EngineConfig, NewsItem, Polarity,
    PriorSource, ScorePair, SubtaskSpec, Taxonomy, TrajectoryStep,
};
use crate::grammar::{parse_action, InitDistribution, PlannerUtterance};
use crate::reasoner::prompts::{PromptBook, TemplateError};
use crate::reasoner::session::{ReasoningSession, SessionError};
use crate::reasoner::{Phase, Reasoner, ReasonerError, UsageLedger};
use crate::toolkit::{Toolkit, ToolkitError};

/// Question put to the image tool when the reasoner cannot see images.
pub const CAPTION_QUESTION: &str = "Describe the image in one sentence.";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] DomainError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Toolkit(#[from] ToolkitError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
}

impl From<SessionError> for EngineError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Reasoner(r) => EngineError::Reasoner(r),
            SessionError::Template(t) => EngineError::Template(t),
        }
    }
}

/// Everything one episode produced.
#[derive(Debug, Clone)]
pub struct Episode {
    pub item: String,
    pub verdict: Verdict,
    /// Benchmark label of the verdict, e.g. `Mismatch`.
    pub label: String,
    pub iterations: usize,
    /// Outcomes in the order they were produced.
    pub outcomes: Vec<SubtaskOutcome>,
    pub tree: SearchTree,
    pub log: EpisodeLog,
    pub usage: UsageLedger,
}

/// Shareable engine; each [`Engine::run_episode`] call builds its own tree.
pub struct Engine {
    taxonomy: Taxonomy,
    config: EngineConfig,
    toolkit: Arc<Toolkit>,
    reasoner: Arc<dyn Reasoner>,
    prompts: PromptBook,
}

enum Rollout {
    Finished {
        leaf: NodeId,
        answer: Action,
        polarity: Polarity,
    },
    DepthExhausted {
        leaf: NodeId,
    },
}

impl Engine {
    pub fn new(
        taxonomy: Taxonomy,
        config: EngineConfig,
        toolkit: Arc<Toolkit>,
        reasoner: Arc<dyn Reasoner>,
    ) -> Result<Self, EngineError> {
        taxonomy.validate()?;
        config.validate()?;
        let prompts = PromptBook::new(&taxonomy, |s| toolkit.registry().cards_for(s))?;
        Ok(Self {
            taxonomy,
            config,
            toolkit,
            reasoner,
            prompts,
        })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn toolkit(&self) -> &Toolkit {
        &self.toolkit
    }

    fn image_note(&self, item: &NewsItem, usage: &mut UsageLedger) -> Result<String, EngineError> {
        if item.image.is_none() {
            return Ok("none".into());
        }
        if self.reasoner.supports_images() {
            return Ok("attached".into());
        }
        let vqa = self
            .toolkit
            .registry()
            .cards()
            .find(|c| c.input_schema == crate::toolkit::ArgumentKind::ImageQuestion)
            .map(|c| c.name.clone());
        match vqa {
            Some(verb) => {
                let inv = self.toolkit.invoke(&verb, CAPTION_QUESTION, item)?;
                if let Some(u) = &inv.usage {
                    usage.record(Phase::Vision, u);
                }
                Ok(format!("(caption) {}", inv.observation))
            }
            None => Ok("an image is attached but cannot be shown".into()),
        }
    }

    fn priors(
        &self,
        item: &NewsItem,
        session: &mut ReasoningSession<'_>,
    ) -> Result<InitDistribution, EngineError> {
        match self.config.priors {
            PriorSource::Reasoner => {
                Ok(session.init_priors(&self.taxonomy, &self.taxonomy.subtasks)?)
            }
            PriorSource::Random => {
                let h = Sha256::digest(item.id.as_bytes());
                let salt = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ salt);
                Ok(InitDistribution {
                    weights: self
                        .taxonomy
                        .subtasks
                        .iter()
                        .map(|_| rng.gen::<f64>())
                        .collect(),
                    fallback: false,
                    clamped: false,
                })
            }
        }
    }

    /// Runs the full search for one item.
    pub fn run_episode(&self, item: &NewsItem) -> Result<Episode, EngineError> {
        let cfg = &self.config;
        let keys: Vec<String> = self
            .taxonomy
            .subtasks
            .iter()
            .map(|s| s.key.clone())
            .collect();
        let mut log = EpisodeLog::default();
        log.push(LogRecord::Header {
            schema: LOG_SCHEMA,
            item: item.id.clone(),
            subtasks: keys.clone(),
            config: cfg.clone(),
        });

        let mut tool_usage = UsageLedger::default();
        let image_note = self.image_note(item, &mut tool_usage)?;
        let mut session = ReasoningSession::new(
            self.reasoner.as_ref(),
            &self.prompts,
            item,
            image_note.clone(),
            cfg.planner_temperature,
        );
        let init = self.priors(item, &mut session)?;
        log.push(LogRecord::Init {
            priors: init.weights.clone(),
            fallback: init.fallback,
            clamped: init.clamped,
            image_note,
        });

        let mut tree = SearchTree::new(&keys, &init.weights);
        let mut memory = FailureMemory::new(cfg.memory_capacity);
        let mut outcomes: Vec<SubtaskOutcome> = Vec::new();
        let mut latest: BTreeMap<String, SubtaskOutcome> = BTreeMap::new();
        let mut verdict = None;
        let mut iterations = 0;

        for iteration in 0..cfg.simulations {
            let uct: Vec<UctEntry> = tree
                .uct_scores(cfg.exploration)
                .into_iter()
                .map(|(id, score)| UctEntry {
                    subtask: subtask_key(&tree, id).to_string(),
                    score,
                })
                .collect();
            let node = match tree.select(cfg.exploration) {
                Ok(n) => n,
                Err(SelectError::AllSubtasksResolved) => break,
            };
            iterations += 1;
            let key = subtask_key(&tree, node).to_string();
            let spec = self
                .taxonomy
                .subtask(&key)
                .expect("tree subtasks come from the taxonomy")
                .clone();

            let mut steps = Vec::new();
            let rollout = self.simulate(
                item,
                &spec,
                node,
                &mut tree,
                &memory,
                &mut session,
                &mut steps,
                &mut tool_usage,
            )?;
            let trajectory: Vec<TrajectoryStep> =
                steps.iter().map(|s: &StepRecord| s.step.clone()).collect();

            let (leaf, polarity, answer, s_t, s_c) = match rollout {
                Rollout::Finished {
                    leaf,
                    answer,
                    polarity,
                } => {
                    let s_t = session.score_trajectory(&key, &trajectory)?;
                    let s_c = session.score_confidence(&key, &trajectory, &answer.to_string())?;
                    (leaf, polarity, answer.argument, s_t, s_c)
                }
                Rollout::DepthExhausted { leaf } => {
                    let s_t = if trajectory.is_empty() {
                        0.0
                    } else {
                        session.score_trajectory(&key, &trajectory)?
                    };
                    (leaf, Polarity::Unconfirmed, String::new(), s_t, 0.0)
                }
            };
            let reward = combine_value(ScorePair::new(s_t, s_c)?, cfg.alpha);
            let backprop = tree.backpropagate(leaf, reward);

            let outcome = SubtaskOutcome {
                subtask: key.clone(),
                polarity,
                answer: answer.clone(),
                trajectory_score: s_t,
                confidence: s_c,
                reward,
                iteration,
                trajectory: trajectory.clone(),
            };

            let memory_entry =
                (reward < cfg.tau_memory).then(|| memory.remember(&key, &trajectory, reward));
            let pruned = polarity == Polarity::Authentic && s_c >= cfg.tau_prune;
            if pruned {
                tree.prune(node);
            }
            let stop = decision::early_stop(&outcome, cfg.tau_early, &self.taxonomy)?;
            let early = stop.is_some();

            log.push(LogRecord::Iteration(IterationRecord {
                iteration,
                subtask: key.clone(),
                uct,
                steps,
                polarity,
                answer,
                trajectory_score: s_t,
                confidence: s_c,
                reward,
                backprop,
                pruned,
                early_stop: early,
                memory: memory_entry,
                warnings: session.take_warnings(),
            }));
            latest.insert(key, outcome.clone());
            outcomes.push(outcome);
            if let Some(v) = stop {
                verdict = Some(v);
                break;
            }
        }

        let verdict = match verdict {
            Some(v) => v,
            None => {
                let fused: Vec<SubtaskOutcome> = latest.into_values().collect();
                decision::fuse(&fused, &self.taxonomy)?
            }
        };
        let label = decision::to_benchmark_label(&verdict, &self.taxonomy)?;
        let mut usage = session.usage().clone();
        usage.merge(&tool_usage);
        log.push(LogRecord::Verdict {
            verdict: verdict.clone(),
            label: label.clone(),
            iterations,
            usage: usage.clone(),
        });
        Ok(Episode {
            item: item.id.clone(),
            verdict,
            label,
            iterations,
            outcomes,
            tree,
            log,
            usage,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        item: &NewsItem,
        spec: &SubtaskSpec,
        subtask_node: NodeId,
        tree: &mut SearchTree,
        memory: &FailureMemory,
        session: &mut ReasoningSession<'_>,
        steps: &mut Vec<StepRecord>,
        tool_usage: &mut UsageLedger,
    ) -> Result<Rollout, EngineError> {
        let cfg = &self.config;
        let whitelist = self.toolkit.registry().whitelist(&spec.key);
        let digests = memory.digests(&spec.key);
        let mut parent = subtask_node;
        let mut trajectory: Vec<TrajectoryStep> = Vec::new();

        for depth in 0..cfg.depth_limit {
            let candidates = session.plan(&spec.key, &trajectory, &digests, cfg.n_actions)?;
            let mut records: Vec<CandidateRecord> = Vec::with_capacity(candidates.len());
            for c in &candidates {
                let step = candidate_step(depth, c, &whitelist);
                let node = tree.add_child(parent, NodeKind::Step, Some(step));
                records.push(CandidateRecord {
                    node,
                    thought: c.thought_text.clone(),
                    action: c.action_text.clone(),
                    score: None,
                });
            }
            let chosen = self.choose(
                spec,
                &trajectory,
                &candidates,
                &whitelist,
                &mut records,
                session,
            )?;
            let node = records[chosen].node;
            let mut step = tree
                .node(node)
                .step
                .clone()
                .expect("step nodes carry their step");

            let mut cache_hit = None;
            let mut finished = None;
            match step.parsed.clone() {
                None => {
                    step.observation = invalid_action_note(&step.action, &whitelist);
                }
                Some(a) if a.is_finish() => match spec.polarity_of(&a.argument) {
                    Some(p) => finished = Some((a, p)),
                    None => {
                        step.observation = format!(
                            "Invalid answer {}. Answer with Finish[{}] or Finish[{}].",
                            a.argument, spec.forged_token, spec.authentic_token
                        );
                    }
                },
                Some(a) => {
                    let inv = self.toolkit.invoke(&a.name, &a.argument, item)?;
                    if let Some(u) = &inv.usage {
                        tool_usage.record(Phase::Vision, u);
                    }
                    cache_hit = Some(inv.cache_hit);
                    step.observation = inv.observation;
                }
            }
            tree.set_step(node, step.clone());
            trajectory.push(step.clone());
            steps.push(StepRecord {
                node,
                step,
                candidates: records,
                cache_hit,
            });
            if let Some((answer, polarity)) = finished {
                return Ok(Rollout::Finished {
                    leaf: node,
                    answer,
                    polarity,
                });
            }
            parent = node;
        }
        Ok(Rollout::DepthExhausted { leaf: parent })
    }

    fn choose(
        &self,
        spec: &SubtaskSpec,
        trajectory: &[TrajectoryStep],
        candidates: &[PlannerUtterance],
        whitelist: &[String],
        records: &mut [CandidateRecord],
        session: &mut ReasoningSession<'_>,
    ) -> Result<usize, EngineError> {
        if self.config.continuation == Continuation::First || candidates.len() < 2 {
            return Ok(0);
        }
        // identical samples need no ranking; score each distinct one once
        let mut distinct: Vec<usize> = Vec::new();
        for (i, c) in candidates.iter().enumerate() {
            if !distinct.iter().any(|&j| candidates[j] == *c) {
                distinct.push(i);
            }
        }
        if distinct.len() < 2 {
            return Ok(0);
        }
        let mut best = (distinct[0], f64::NEG_INFINITY);
        for &i in &distinct {
            let mut hypo = trajectory.to_vec();
            hypo.push(candidate_step(trajectory.len(), &candidates[i], whitelist));
            let s = session.score_trajectory(&spec.key, &hypo)?;
            records[i].score = Some(s);
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(best.0)
    }
}

fn subtask_key(tree: &SearchTree, id: NodeId) -> &str {
    match &tree.node(id).kind {
        NodeKind::Subtask(k) => k,
        _ => unreachable!("selection only returns subtask nodes"),
    }
}

fn candidate_step(index: usize, c: &PlannerUtterance, whitelist: &[String]) -> TrajectoryStep {
    TrajectoryStep {
        index,
        thought: c.thought_text.clone(),
        action: c.action_text.clone(),
        parsed: parse_action(&c.action_text, whitelist).ok(),
        observation: String::new(),
    }
}

fn invalid_action_note(raw: &str, whitelist: &[String]) -> String {
    let err = match parse_action(raw, whitelist) {
        Err(e) => e.to_string(),
        Ok(_) => "unusable action".into(),
    };
    let verbs = whitelist
        .iter()
        .map(|v| format!("{v}[...]"))
        .collect::<Vec<_>>()
        .join(", ");
    format!("Invalid action: {err}. Use one of {verbs}.")
}
