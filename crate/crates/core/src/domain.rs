//! Domain types shared by the search engine, toolkit, decision and bench layers.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary veracity label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Veracity {
    Real,
    Fake,
}

impl fmt::Display for Veracity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Veracity::Real => f.write_str("Real"),
            Veracity::Fake => f.write_str("Fake"),
        }
    }
}

/// One claim under verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_binary: Option<Veracity>,
    /// Class key within the active [`Taxonomy`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_multiclass: Option<String>,
}

impl NewsItem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            image: None,
            gold_binary: None,
            gold_multiclass: None,
        }
    }

    pub fn with_image(mut self, path: impl Into<PathBuf>) -> Self {
        self.image = Some(path.into());
        self
    }

    /// Checks the item-level invariants: non-empty id and text, readable image.
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.id.trim().is_empty() {
            return Err(DomainError::EmptyId);
        }
        if self.text.trim().is_empty() {
            return Err(DomainError::EmptyText(self.id.clone()));
        }
        if let Some(image) = &self.image {
            if std::fs::File::open(image).is_err() {
                return Err(DomainError::UnreadableImage {
                    item: self.id.clone(),
                    path: image.clone(),
                });
            }
        }
        Ok(())
    }
}

/// A benchmark label. Exactly one class of a [`Taxonomy`] is the real class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeryClass {
    /// Short key, e.g. `CCD`.
    pub key: String,
    /// Canonical benchmark string, e.g. `Mismatch`.
    pub label: String,
    /// Extra spellings accepted when loading corpora.
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl ForgeryClass {
    fn new(key: &str, label: &str, aliases: &[&str]) -> Self {
        Self {
            key: key.to_string(),
            label: label.to_string(),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
        }
    }

    pub fn matches(&self, s: &str) -> bool {
        let s = s.trim();
        self.key == s || self.label == s || self.aliases.iter().any(|a| a == s)
    }
}

/// One forgery source the search verifies independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    /// Stable key such as `text`, `image` or `match`.
    pub key: String,
    /// Display name used in task prompts.
    pub display: String,
    /// Key of the [`ForgeryClass`] this source is responsible for.
    pub class: String,
    /// Finish token meaning "this source is authentic".
    pub authentic_token: String,
    /// Finish token meaning "this source is forged".
    pub forged_token: String,
    /// Task statement opening the planner prompt.
    pub task: String,
    /// Condition under which the planner should answer with the forged token.
    pub forged_when: String,
    /// Condition under which the planner should answer with the authentic token.
    pub authentic_when: String,
    /// Hint shown for this source in the initializer prompt.
    pub init_hint: String,
    /// Verbs this source may use by default.
    pub default_verbs: Vec<String>,
}

/// Polarity of a finished subtask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Authentic,
    Forged,
    /// Depth was exhausted before the planner answered.
    Unconfirmed,
}

impl SubtaskSpec {
    /// Maps a `Finish` argument to a polarity, ignoring case and surrounding quotes.
    pub fn polarity_of(&self, answer: &str) -> Option<Polarity> {
        let norm = normalize_token(answer);
        if norm == normalize_token(&self.authentic_token) {
            Some(Polarity::Authentic)
        } else if norm == normalize_token(&self.forged_token) {
            Some(Polarity::Forged)
        } else {
            None
        }
    }

    pub fn token_for(&self, polarity: Polarity) -> Option<&str> {
        match polarity {
            Polarity::Authentic => Some(&self.authentic_token),
            Polarity::Forged => Some(&self.forged_token),
            Polarity::Unconfirmed => None,
        }
    }
}

fn normalize_token(s: &str) -> String {
    s.trim()
        .trim_matches(|c| c == '"' || c == '\'')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_uppercase()
}

/// Label set plus the subtasks that verify each non-real class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub name: String,
    pub real: ForgeryClass,
    pub classes: Vec<ForgeryClass>,
    pub subtasks: Vec<SubtaskSpec>,
    /// Token printed as the final answer for real items.
    pub real_token: String,
}

impl Taxonomy {
    /// Real, Textual/Visual Veracity Distortion and Cross-modal Consistency Distortion.
    pub fn mmfakebench() -> Self {
        let real = ForgeryClass::new("Real", "Real", &["real", "ORIGINAL", "original"]);
        let classes = vec![
            real.clone(),
            ForgeryClass::new(
                "TVD",
                "Textual Veracity Distortion",
                &["textual_veracity_distortion"],
            ),
            ForgeryClass::new(
                "VVD",
                "Visual Veracity Distortion",
                &["visual_veracity_distortion"],
            ),
            ForgeryClass::new(
                "CCD",
                "Mismatch",
                &["CMM", "Cross-modal Consistency Distortion", "mismatch"],
            ),
        ];
        let subtasks = vec![
            SubtaskSpec {
                key: "text".into(),
                display: "Textual Veracity Detection".into(),
                class: "TVD".into(),
                authentic_token: "TEXT SUPPORT".into(),
                forged_token: "TEXT REFUTE".into(),
                task: "Solve a textual veracity detecting task with interleaving Thought, Action, and Observation steps. You need to verify the knowledge-based information therein, such as public figures, political events, and scientific common sense.".into(),
                forged_when: "there is any credible objective evidence refuting the news caption".into(),
                authentic_when: "no such evidence is found".into(),
                init_hint: "If the news text contains rich information, the news is more likely to be text veracity distortion.".into(),
                default_verbs: vec!["Wikipedia".into(), "Google".into()],
            },
            SubtaskSpec {
                key: "image".into(),
                display: "Image Veracity Detection".into(),
                class: "VVD".into(),
                authentic_token: "IMAGE SUPPORT".into(),
                forged_token: "IMAGE REFUTE".into(),
                task: "Solve an image veracity detecting task (determine whether the content in the news image contains counterfactual scenarios, e.g., violates physical laws) with interleaving Thought, Action, and Observation steps.".into(),
                forged_when: "there is any credible objective fact refuting the news image".into(),
                authentic_when: "no such fact is found".into(),
                init_hint: "If the content in the news image contains counterfactual scenarios (e.g. violates the physical laws), the news is more likely to be visual veracity distortion.".into(),
                default_verbs: vec!["Detect".into(), "Counterfactual".into()],
            },
            SubtaskSpec {
                key: "match".into(),
                display: "Cross-modal Matching Detection".into(),
                class: "CCD".into(),
                authentic_token: "MATCH".into(),
                forged_token: "MISMATCH".into(),
                task: "Solve a cross-modal matching detection task (determine whether the content in the news image supports the text or not) with interleaving Thought, Action, and Observation steps. Please make a direct judgment based on the image content and the text content.".into(),
                forged_when: "no match is found between the news caption and the content of the news image".into(),
                authentic_when: "the news caption matches the content of the news image".into(),
                init_hint: "If the content in the news image is irrelevant to the image or does not support the text, the news is more likely to be cross-modal consistency distortion.".into(),
                default_verbs: vec!["VQA".into(), "Entity".into()],
            },
        ];
        Self {
            name: "mmfakebench".into(),
            real,
            classes,
            subtasks,
            real_token: "ORIGINAL".into(),
        }
    }

    /// Real plus the five AMG forgery categories.
    pub fn amg() -> Self {
        let real = ForgeryClass::new("Real", "Real", &["real", "ORIGINAL", "original"]);
        let mk = |key: &str, label: &str| ForgeryClass::new(key, label, &[]);
        let classes = vec![
            real.clone(),
            mk("IF", "Image Fabrication"),
            mk("NI", "Non-evidential Image"),
            mk("EnI", "Entity Inconsistency"),
            mk("EvI", "Event Inconsistency"),
            mk("TI", "Time Inconsistency"),
        ];
        let st = |key: &str,
                  display: &str,
                  class: &str,
                  auth: &str,
                  forged: &str,
                  task: &str,
                  hint: &str,
                  verbs: &[&str]| SubtaskSpec {
            key: key.into(),
            display: display.into(),
            class: class.into(),
            authentic_token: auth.into(),
            forged_token: forged.into(),
            task: task.into(),
            forged_when: "there is any credible objective evidence of this forgery".into(),
            authentic_when: "no such evidence is found".into(),
            init_hint: hint.into(),
            default_verbs: verbs.iter().map(|v| v.to_string()).collect(),
        };
        let subtasks = vec![
            st(
                "fabrication",
                "Image Fabrication Detection",
                "IF",
                "IMAGE AUTHENTIC",
                "IMAGE FABRICATED",
                "Solve an image fabrication detecting task (determine whether the news image was digitally manipulated or synthesized) with interleaving Thought, Action, and Observation steps.",
                "If the news image shows signs of editing or synthesis, the news is more likely to be image fabrication.",
                &["Detect", "Counterfactual"],
            ),
            st(
                "evidence",
                "Image Evidence Detection",
                "NI",
                "IMAGE EVIDENTIAL",
                "IMAGE NON-EVIDENTIAL",
                "Solve an image evidence detecting task (determine whether the news image carries any evidence for the claim in the text) with interleaving Thought, Action, and Observation steps.",
                "If the news image is generic and carries no evidence for the text, the news is more likely to be a non-evidential image.",
                &["VQA"],
            ),
            st(
                "entity",
                "Entity Consistency Detection",
                "EnI",
                "ENTITY CONSISTENT",
                "ENTITY INCONSISTENT",
                "Solve an entity consistency detecting task (determine whether the people, places and organizations in the image agree with the text) with interleaving Thought, Action, and Observation steps.",
                "If the text names entities that can be checked against the image, the news is more likely to be entity inconsistency.",
                &["Entity", "VQA"],
            ),
            st(
                "event",
                "Event Consistency Detection",
                "EvI",
                "EVENT CONSISTENT",
                "EVENT INCONSISTENT",
                "Solve an event consistency detecting task (determine whether the described event agrees with public records and the image) with interleaving Thought, Action, and Observation steps.",
                "If the text describes a specific event, the news is more likely to be event inconsistency.",
                &["Wikipedia", "Google"],
            ),
            st(
                "time",
                "Time Consistency Detection",
                "TI",
                "TIME CONSISTENT",
                "TIME INCONSISTENT",
                "Solve a time consistency detecting task (determine whether the image was first published before the time the text claims) with interleaving Thought, Action, and Observation steps.",
                "If the text states a date or time, the news is more likely to be time inconsistency.",
                &["TinEye", "Google"],
            ),
        ];
        Self {
            name: "amg".into(),
            real,
            classes,
            subtasks,
            real_token: "ORIGINAL".into(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "mmfakebench" => Some(Self::mmfakebench()),
            "amg" => Some(Self::amg()),
            _ => None,
        }
    }

    /// Restricts the subtasks to `keys`, preserving the order given.
    pub fn with_subtasks(mut self, keys: &[String]) -> Result<Self, DomainError> {
        let mut picked = Vec::with_capacity(keys.len());
        for key in keys {
            let spec = self
                .subtasks
                .iter()
                .find(|s| &s.key == key)
                .cloned()
                .ok_or_else(|| DomainError::UnknownSubtask(key.clone()))?;
            picked.push(spec);
        }
        self.subtasks = picked;
        self.validate()?;
        Ok(self)
    }

    /// Checks label and subtask invariants.
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.subtasks.is_empty() {
            return Err(DomainError::NoSubtasks);
        }
        let reals = self
            .classes
            .iter()
            .filter(|c| c.key == self.real.key)
            .count();
        if reals != 1 {
            return Err(DomainError::InvalidTaxonomy(format!(
                "expected exactly one real class, found {reals}"
            )));
        }
        let mut keys = BTreeSet::new();
        for s in &self.subtasks {
            if !keys.insert(s.key.as_str()) {
                return Err(DomainError::InvalidTaxonomy(format!(
                    "duplicate subtask {}",
                    s.key
                )));
            }
            if s.class == self.real.key || self.class(&s.class).is_none() {
                return Err(DomainError::InvalidTaxonomy(format!(
                    "subtask {} maps to unusable class {}",
                    s.key, s.class
                )));
            }
            if normalize_token(&s.authentic_token) == normalize_token(&s.forged_token) {
                return Err(DomainError::InvalidTaxonomy(format!(
                    "subtask {} has identical answer tokens",
                    s.key
                )));
            }
        }
        for c in self.classes.iter().filter(|c| c.key != self.real.key) {
            let n = self.subtasks.iter().filter(|s| s.class == c.key).count();
            if n > 1 {
                return Err(DomainError::InvalidTaxonomy(format!(
                    "class {} is verified by {n} subtasks",
                    c.key
                )));
            }
        }
        Ok(())
    }

    pub fn class(&self, key: &str) -> Option<&ForgeryClass> {
        self.classes.iter().find(|c| c.key == key)
    }

    pub fn subtask(&self, key: &str) -> Option<&SubtaskSpec> {
        self.subtasks.iter().find(|s| s.key == key)
    }

    pub fn subtask_index(&self, key: &str) -> Option<usize> {
        self.subtasks.iter().position(|s| s.key == key)
    }

    /// Resolves a label string (key, canonical label or alias) to a class key.
    pub fn resolve_label(&self, s: &str) -> Option<&str> {
        self.classes
            .iter()
            .find(|c| c.matches(s))
            .map(|c| c.key.as_str())
    }

    pub fn class_keys(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.key.clone()).collect()
    }
}

/// One `Verb[argument]` action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub name: String,
    pub argument: String,
}

impl Action {
    pub const FINISH: &'static str = "Finish";

    pub fn new(name: impl Into<String>, argument: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            argument: argument.into(),
        }
    }

    pub fn is_finish(&self) -> bool {
        self.name == Self::FINISH
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.argument)
    }
}

/// One (thought, action, observation) step of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: usize,
    pub thought: String,
    /// Raw action text as the planner produced it.
    pub action: String,
    /// Parsed action, absent when the planner output was not a valid action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Action>,
    #[serde(default)]
    pub observation: String,
}

/// Search hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Candidates sampled per expansion.
    pub n_actions: usize,
    /// Maximum steps in one rollout.
    pub depth_limit: usize,
    /// Maximum search iterations.
    pub simulations: usize,
    /// Exploration weight of the UCT bonus.
    pub exploration: f64,
    /// Weight of the trajectory score in the combined reward.
    pub alpha: f64,
    pub tau_early: f64,
    pub tau_prune: f64,
    pub tau_memory: f64,
    /// Failure trajectories kept per subtask.
    pub memory_capacity: usize,
    pub continuation: Continuation,
    pub priors: PriorSource,
    pub planner_temperature: f64,
    pub seed: u64,
}

/// Which expanded candidate a rollout continues from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    /// Follow the first candidate in the order the backend returned them.
    First,
    /// Score every candidate's trajectory and follow the best.
    Ranked,
}

/// Where the initial subtask weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    Reasoner,
    /// Seeded random weights, for comparison runs.
    Random,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n_actions: 2,
            depth_limit: 6,
            simulations: 6,
            exploration: 2.0,
            alpha: 0.5,
            tau_early: 0.8,
            tau_prune: 0.8,
            tau_memory: 0.5,
            memory_capacity: 3,
            continuation: Continuation::Ranked,
            priors: PriorSource::Reasoner,
            planner_temperature: 0.7,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(DomainError::InvalidConfig(format!(
                    "{name} must lie in [0,1], got {v}"
                )))
            }
        };
        unit("alpha", self.alpha)?;
        unit("tau_early", self.tau_early)?;
        unit("tau_prune", self.tau_prune)?;
        unit("tau_memory", self.tau_memory)?;
        if self.n_actions == 0 || self.depth_limit == 0 || self.simulations == 0 {
            return Err(DomainError::InvalidConfig(
                "n_actions, depth_limit and simulations must be positive".into(),
            ));
        }
        if !(self.exploration.is_finite() && self.exploration >= 0.0) {
            return Err(DomainError::InvalidConfig(format!(
                "exploration must be a non-negative real, got {}",
                self.exploration
            )));
        }
        if !(self.planner_temperature.is_finite() && self.planner_temperature >= 0.0) {
            return Err(DomainError::InvalidConfig(
                "planner_temperature must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Trajectory and confidence scores, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub trajectory: f64,
    pub confidence: f64,
}

impl ScorePair {
    pub fn new(trajectory: f64, confidence: f64) -> Result<Self, DomainError> {
        for v in [trajectory, confidence] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DomainError::ScoreOutOfRange(v));
            }
        }
        Ok(Self {
            trajectory,
            confidence,
        })
    }
}

/// Combined reward `alpha * S_T + (1 - alpha) * S_C`.
pub fn combine_value(scores: ScorePair, alpha: f64) -> f64 {
    let v = alpha * scores.trajectory + (1.0 - alpha) * scores.confidence;
    // rounding can push a convex combination a hair outside the hull
    v.clamp(
        scores.trajectory.min(scores.confidence),
        scores.trajectory.max(scores.confidence),
    )
}

/// Maps a raw 1..=10 evaluator score onto `[0, 1]`.
pub fn normalize_score(raw: i64) -> Result<f64, ScoreParseError> {
    if (1..=10).contains(&raw) {
        Ok(raw as f64 / 10.0)
    } else {
        Err(ScoreParseError::OutOfRange(raw))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreParseError {
    #[error("score {0} outside 1..=10")]
    OutOfRange(i64),
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("news item has an empty id")]
    EmptyId,
    #[error("news item {0} has empty text")]
    EmptyText(String),
    #[error("image {path} of item {item} is not readable")]
    UnreadableImage { item: String, path: PathBuf },
    #[error("unknown subtask {0}")]
    UnknownSubtask(String),
    #[error("no subtasks configured")]
    NoSubtasks,
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("score {0} outside [0,1]")]
    ScoreOutOfRange(f64),
}
