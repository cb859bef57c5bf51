//! The language model behind the planner, evaluator and initializer roles.
//!
//! Everything the search needs from a model goes through [`Reasoner`], a
//! single completion call. Backends:
//!
//! * [`live::ChatCompletionsReasoner`] talks to a chat-completions endpoint.
//! * [`scripted::ScriptedReasoner`] serves canned completions per item, role and subtask.
//! * [`transcript::RecordingReasoner`] / [`transcript::ReplayReasoner`] capture and
//!   re-serve completions keyed by a digest of the request.
//!
//! [`session::ReasoningSession`] layers the role-specific operations (plan,
//! score, initialize) over a backend for the duration of one episode.

pub mod live;
pub mod prompts;
pub mod scripted;
pub mod session;
pub mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The job a completion request serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Planner,
    #[serde(rename = "trajectory")]
    TrajectoryEvaluator,
    #[serde(rename = "confidence")]
    ConfidenceEvaluator,
    Initializer,
    /// Question answering about the news image on behalf of the VQA tool.
    Vision,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Planner => "planner",
            Role::TrajectoryEvaluator => "trajectory",
            Role::ConfidenceEvaluator => "confidence",
            Role::Initializer => "initializer",
            Role::Vision => "vision",
        }
    }

    pub fn phase(self) -> Phase {
        match self {
            Role::Planner => Phase::Plan,
            Role::TrajectoryEvaluator | Role::ConfidenceEvaluator => Phase::Evaluate,
            Role::Initializer => Phase::Init,
            Role::Vision => Phase::Vision,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cost-accounting bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Plan,
    Evaluate,
    Init,
    Vision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub role: Role,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<PathBuf>,
    pub temperature: f64,
    pub sample_count: usize,
    /// Routing hints for scripted backends; not part of the digest.
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<String>,
}

impl ReasonerRequest {
    /// Content digest over role, sample count and rendered prompt.
    pub fn digest(&self) -> String {
        request_digest(self.role, &self.prompt, self.sample_count)
    }
}

pub fn request_digest(role: Role, prompt: &str, sample_count: usize) -> String {
    let mut h = Sha256::new();
    h.update(role.as_str().as_bytes());
    h.update(b"\n");
    h.update(sample_count.to_string().as_bytes());
    h.update(b"\n");
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub model_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerResponse {
    pub completions: Vec<String>,
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("reasoner backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no recorded completion for {role} request {digest}")]
    ReplayMiss { role: Role, digest: String },
    #[error("script has no more {role} completions for item {item} (subtask {subtask:?})")]
    ScriptExhausted {
        item: String,
        role: Role,
        subtask: Option<String>,
    },
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("transcript error: {0}")]
    Transcript(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One completion call. Implementations must tolerate concurrent callers.
pub trait Reasoner: Send + Sync {
    /// Returns exactly `request.sample_count` completions.
    fn complete(&self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError>;

    /// Whether image attachments reach the model. When false, the engine
    /// substitutes a one-line caption.
    fn supports_images(&self) -> bool {
        true
    }
}

impl<R: Reasoner + ?Sized> Reasoner for std::sync::Arc<R> {
    fn complete(&self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        (**self).complete(request)
    }

    fn supports_images(&self) -> bool {
        (**self).supports_images()
    }
}

/// Pads or trims completions to the requested count, cycling through what exists.
pub(crate) fn fit_completions(mut completions: Vec<String>, n: usize) -> Vec<String> {
    if completions.is_empty() {
        return completions;
    }
    let have = completions.len();
    for i in have..n {
        completions.push(completions[i % have].clone());
    }
    completions.truncate(n.max(1));
    completions
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenCounts {
    fn add(&mut self, other: &TokenCounts) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

/// Token totals per (model, phase).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsageLedger {
    entries: BTreeMap<(String, Phase), TokenCounts>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub model: String,
    pub phase: Phase,
    #[serde(flatten)]
    pub counts: TokenCounts,
}

impl UsageLedger {
    pub fn record(&mut self, phase: Phase, usage: &Usage) {
        let slot = self
            .entries
            .entry((usage.model_name.clone(), phase))
            .or_default();
        slot.add(&TokenCounts {
            calls: 1,
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
        });
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for (k, v) in &other.entries {
            self.entries.entry(k.clone()).or_default().add(v);
        }
    }

    pub fn entries(&self) -> Vec<UsageEntry> {
        self.entries
            .iter()
            .map(|((model, phase), counts)| UsageEntry {
                model: model.clone(),
                phase: *phase,
                counts: *counts,
            })
            .collect()
    }

    pub fn total(&self) -> TokenCounts {
        let mut t = TokenCounts::default();
        for v in self.entries.values() {
            t.add(v);
        }
        t
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Serialize for UsageLedger {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.entries().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for UsageLedger {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let list = Vec::<UsageEntry>::deserialize(deserializer)?;
        let mut ledger = UsageLedger::default();
        for e in list {
            ledger
                .entries
                .entry((e.model, e.phase))
                .or_default()
                .add(&e.counts);
        }
        Ok(ledger)
    }
}
