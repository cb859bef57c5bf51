//! Tool cards, the verb registry and cached tool invocation.

pub mod fixture;
pub mod live;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Action, NewsItem, Taxonomy};
use crate::reasoner::Usage;

/// What a tool's bracketed argument holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArgumentKind {
    QueryText,
    ImageRef,
    ImageQuestion,
}

impl ArgumentKind {
    /// Placeholder shown in task prompts, e.g. `Google[entity]`.
    pub fn hint(self) -> &'static str {
        match self {
            ArgumentKind::QueryText => "entity",
            ArgumentKind::ImageRef => "image",
            ArgumentKind::ImageQuestion => "question",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    TextObservation,
}

/// How a card is backed at run time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binding {
    /// A network client, identified by client id (e.g. `google`, `http:detect`).
    Live { client: String },
    /// Observations served from a fixture store.
    Fixture { id: String },
    /// Answered by the reasoner backend.
    Reasoner,
}

/// Standardized descriptor making a tool pluggable into the action space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCard {
    /// Action verb, unique within a registry.
    pub name: String,
    pub description: String,
    pub input_schema: ArgumentKind,
    pub output_kind: OutputKind,
    /// Subtask keys whose planner may call this verb.
    pub subtask_scopes: BTreeSet<String>,
    pub binding: Binding,
}

impl ToolCard {
    pub fn new(
        name: &str,
        description: &str,
        input_schema: ArgumentKind,
        scopes: impl IntoIterator<Item = String>,
        binding: Binding,
    ) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            input_schema,
            output_kind: OutputKind::TextObservation,
            subtask_scopes: scopes.into_iter().collect(),
            binding,
        }
    }
}

/// What a tool hands back on success.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolOutput {
    pub observation: String,
    /// Model usage spent producing the observation, if any.
    pub usage: Option<Usage>,
}

impl ToolOutput {
    pub fn text(observation: impl Into<String>) -> Self {
        Self {
            observation: observation.into(),
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
}

/// A callable tool. Implementations must be safe to call concurrently.
pub trait Tool: Send + Sync {
    fn call(&self, verb: &str, argument: &str, item: &NewsItem) -> Result<ToolOutput, ToolError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("verb {0} is already registered")]
    DuplicateVerb(String),
    #[error("verb {0} is reserved")]
    ReservedVerb(String),
    #[error("verb {0} is not registered")]
    UnregisteredVerb(String),
}

#[derive(Clone)]
struct Entry {
    card: ToolCard,
    tool: Arc<dyn Tool>,
}

/// Ordered set of tool cards with their bound implementations.
#[derive(Clone, Default)]
pub struct Registry {
    entries: Vec<Entry>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.entries.iter().map(|e| &e.card.name))
            .finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(mut self, card: ToolCard, tool: Arc<dyn Tool>) -> Result<Self, RegistryError> {
        if card.name.eq_ignore_ascii_case(Action::FINISH) {
            return Err(RegistryError::ReservedVerb(card.name));
        }
        if self.card(&card.name).is_some() {
            return Err(RegistryError::DuplicateVerb(card.name));
        }
        self.entries.push(Entry { card, tool });
        Ok(self)
    }

    pub fn cards(&self) -> impl Iterator<Item = &ToolCard> {
        self.entries.iter().map(|e| &e.card)
    }

    pub fn card(&self, verb: &str) -> Option<&ToolCard> {
        self.entries
            .iter()
            .find(|e| e.card.name.eq_ignore_ascii_case(verb))
            .map(|e| &e.card)
    }

    pub fn verbs(&self) -> Vec<String> {
        self.cards().map(|c| c.name.clone()).collect()
    }

    /// Cards usable by `subtask`, in registry order.
    pub fn cards_for(&self, subtask: &str) -> Vec<ToolCard> {
        self.cards()
            .filter(|c| c.subtask_scopes.contains(subtask))
            .cloned()
            .collect()
    }

    /// Verbs the planner may emit for `subtask`, always ending with `Finish`.
    pub fn whitelist(&self, subtask: &str) -> Vec<String> {
        let mut v: Vec<String> = self
            .cards_for(subtask)
            .into_iter()
            .map(|c| c.name)
            .collect();
        v.push(Action::FINISH.to_string());
        v
    }

    /// Keeps only the named verbs, preserving registry order.
    pub fn restrict(&self, keep: &[String]) -> Registry {
        Registry {
            entries: self
                .entries
                .iter()
                .filter(|e| keep.iter().any(|k| k.eq_ignore_ascii_case(&e.card.name)))
                .cloned()
                .collect(),
        }
    }

    fn tool(&self, verb: &str) -> Option<(&ToolCard, &Arc<dyn Tool>)> {
        self.entries
            .iter()
            .find(|e| e.card.name.eq_ignore_ascii_case(verb))
            .map(|e| (&e.card, &e.tool))
    }
}

/// A completed tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub card: String,
    pub argument: String,
    pub item: String,
    pub observation: String,
    #[serde(skip)]
    pub latency: Duration,
    pub cache_hit: bool,
    #[serde(skip)]
    pub usage: Option<Usage>,
}

#[derive(Debug, Error)]
pub enum ToolkitError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

pub const DEFAULT_OBSERVATION_BUDGET: usize = 2000;

type CacheKey = (String, String, String);

/// Registry plus a per-(verb, argument, item) observation cache.
pub struct Toolkit {
    registry: Registry,
    cache: Mutex<HashMap<CacheKey, Arc<OnceLock<ToolOutput>>>>,
    budget: usize,
    upstream_calls: AtomicU64,
}

impl Toolkit {
    pub fn new(registry: Registry) -> Self {
        Self::with_budget(registry, DEFAULT_OBSERVATION_BUDGET)
    }

    /// `budget` caps observations in characters.
    pub fn with_budget(registry: Registry, budget: usize) -> Self {
        Self {
            registry,
            cache: Mutex::new(HashMap::new()),
            budget,
            upstream_calls: AtomicU64::new(0),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Number of calls that reached a tool implementation.
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::Relaxed)
    }

    /// Runs `verb[argument]` for `item`.
    ///
    /// Tool faults come back as an observation starting with
    /// `tool unavailable`; only an unregistered verb is an error. Successful
    /// observations are cached, so repeating a call is free and byte-identical.
    pub fn invoke(
        &self,
        verb: &str,
        argument: &str,
        item: &NewsItem,
    ) -> Result<ToolInvocation, ToolkitError> {
        let (card, tool) = self
            .registry
            .tool(verb)
            .ok_or_else(|| RegistryError::UnregisteredVerb(verb.to_string()))?;
        let key = (
            card.name.clone(),
            argument_digest(argument),
            item.id.clone(),
        );
        let cell = {
            let mut cache = self.cache.lock().expect("tool cache poisoned");
            cache.entry(key.clone()).or_default().clone()
        };
        let started = Instant::now();
        let mut fresh = false;
        let mut fault = None;
        let out = cell.get_or_init(|| {
            fresh = true;
            self.upstream_calls.fetch_add(1, Ordering::Relaxed);
            match tool.call(&card.name, argument, item) {
                Ok(mut out) => {
                    out.observation = truncate_chars(&out.observation, self.budget);
                    if out.observation.trim().is_empty() {
                        out.observation = "No result.".into();
                    }
                    out
                }
                Err(e) => {
                    fault = Some(e.clone());
                    ToolOutput::text(format!("tool unavailable: {} ({e})", card.name))
                }
            }
        });
        let out = out.clone();
        if fault.is_some() {
            // faults are not cached; the next identical call tries again
            let mut cache = self.cache.lock().expect("tool cache poisoned");
            if let Some(c) = cache.get(&key) {
                if Arc::ptr_eq(c, &cell) {
                    cache.remove(&key);
                }
            }
        }
        Ok(ToolInvocation {
            card: card.name.clone(),
            argument: argument.to_string(),
            item: item.id.clone(),
            observation: out.observation,
            latency: started.elapsed(),
            cache_hit: !fresh,
            usage: if fresh { out.usage } else { None },
        })
    }
}

pub fn argument_digest(argument: &str) -> String {
    hex::encode(Sha256::digest(argument.as_bytes()))
}

fn truncate_chars(s: &str, budget: usize) -> String {
    match s.char_indices().nth(budget) {
        Some((cut, _)) => format!("{} [truncated]", &s[..cut]),
        None => s.to_string(),
    }
}

/// Which bindings [`builtin_cards`] assigns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CardProfile {
    /// Live clients for web, entity and detector services; VQA via the reasoner.
    Live,
    /// Every card served from fixtures.
    Offline,
}

/// The built-in tool families, scoped to the subtasks of `taxonomy`.
///
/// `TinEye` is only included when some subtask of the taxonomy lists it.
pub fn builtin_cards(taxonomy: &Taxonomy, profile: CardProfile) -> Vec<ToolCard> {
    let scopes = |verb: &str| -> Vec<String> {
        taxonomy
            .subtasks
            .iter()
            .filter(|s| s.default_verbs.iter().any(|v| v == verb))
            .map(|s| s.key.clone())
            .collect()
    };
    let bind = |live: Binding| match profile {
        CardProfile::Live => live,
        CardProfile::Offline => Binding::Fixture {
            id: "default".into(),
        },
    };
    let mut cards = vec![
        ToolCard::new(
            "Wikipedia",
            "Searches the exact entity on Wikipedia and returns the first paragraph if it exists. If not, it will return some similar entities to search.",
            ArgumentKind::QueryText,
            scopes("Wikipedia"),
            bind(Binding::Live { client: "wikipedia".into() }),
        ),
        ToolCard::new(
            "Google",
            "Searches information on Google and returns the snippet if it exists. Please give priority to Wikipedia; Google should be considered when Wikipedia fails.",
            ArgumentKind::QueryText,
            scopes("Google"),
            bind(Binding::Live { client: "google".into() }),
        ),
        ToolCard::new(
            "VQA",
            "Return the description of the image information concerned in the question.",
            ArgumentKind::ImageQuestion,
            scopes("VQA"),
            bind(Binding::Reasoner),
        ),
        ToolCard::new(
            "Entity",
            "Return the entity of the image, including the identity of public figures.",
            ArgumentKind::ImageRef,
            scopes("Entity"),
            bind(Binding::Live { client: "http:entity".into() }),
        ),
        ToolCard::new(
            "Counterfactual",
            "Return whether the image shows scenes that contradict real-world facts or physical laws, judged by a vision-language model.",
            ArgumentKind::ImageRef,
            scopes("Counterfactual"),
            bind(Binding::Live { client: "http:counterfactual".into() }),
        ),
        ToolCard::new(
            "Detect",
            "Return the forgery situation detected by a forgery detection model.",
            ArgumentKind::ImageRef,
            scopes("Detect"),
            bind(Binding::Live { client: "http:detect".into() }),
        ),
    ];
    let tineye = scopes("TinEye");
    if !tineye.is_empty() {
        cards.push(ToolCard::new(
            "TinEye",
            "Return the earliest date the image was found online by reverse image search.",
            ArgumentKind::ImageRef,
            tineye,
            bind(Binding::Live {
                client: "tineye".into(),
            }),
        ));
    }
    cards
}
