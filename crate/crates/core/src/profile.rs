//! Run profiles: one TOML file naming the label set, subtasks, tools,
//! engine settings and reasoner backend.
//!
//! ```toml
//! taxonomy = "mmfakebench"
//! subtasks = ["text", "image", "match"]
//!
//! [engine]
//! simulations = 6
//!
//! [backend]
//! mode = "scripted"          # scripted | case | replay | live
//! path = "script.jsonl"      # script, case transcript or reasoner transcript
//!
//! [tools]
//! mode = "fixture"           # fixture | live
//! fixtures = "tools"
//!
//! [prices.scripted]
//! input_per_million = "1.00"
//! output_per_million = "2.00"
//! ```
//!
//! Relative paths are resolved against the profile's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{CostError, ModelPrice, PriceTable};
use crate::cases::{case_fixtures, case_script, parse_case, CaseError};
use crate::domain::{DomainError, EngineConfig, Taxonomy};
use crate::reasoner::live::{ChatCompletionsReasoner, LiveConfig};
use crate::reasoner::scripted::ScriptedReasoner;
use crate::reasoner::transcript::{RecordingReasoner, ReplayReasoner};
use crate::reasoner::{Reasoner, ReasonerError};
use crate::search::{Engine, EngineError};
use crate::toolkit::fixture::{
    FixtureError, FixtureRecord, FixtureStore, FixtureTool, RecordingTool,
};
use crate::toolkit::live::{
    GoogleSearch, HttpEndpointTool, VisionTool, WikipediaLookup, DEFAULT_TIMEOUT,
};
use crate::toolkit::{
    builtin_cards, Binding, CardProfile, Registry, RegistryError, Tool, ToolCard, Toolkit,
    DEFAULT_OBSERVATION_BUDGET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    /// JSONL script of canned completions.
    Scripted,
    /// A printed search transcript, replayed step by step.
    Case,
    /// A recorded reasoner transcript.
    Replay,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub mode: BackendMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Whether scripted and case backends claim to see images.
    #[serde(default = "default_true")]
    pub supports_images: bool,
    #[serde(default)]
    pub live: LiveConfig,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolMode {
    Fixture,
    Live,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    /// Environment variable holding the API key, if the service needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_env: Option<String>,
    /// Search-engine id for custom web search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolsSection {
    pub mode: ToolMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Verbs to register, in order; all built-in cards when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<Vec<String>>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub endpoints: BTreeMap<String, EndpointConfig>,
}

fn default_budget() -> usize {
    DEFAULT_OBSERVATION_BUDGET
}

impl Default for ToolsSection {
    fn default() -> Self {
        Self {
            mode: ToolMode::Fixture,
            fixtures: None,
            enabled: None,
            budget: DEFAULT_OBSERVATION_BUDGET,
            endpoints: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub taxonomy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtasks: Option<Vec<String>>,
    #[serde(default)]
    pub engine: EngineConfig,
    pub backend: BackendSection,
    #[serde(default)]
    pub tools: ToolsSection,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prices: BTreeMap<String, ModelPrice>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("reading profile {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("profile {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown taxonomy {0:?}")]
    UnknownTaxonomy(String),
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("backend mode {0:?} needs a path")]
    MissingBackendPath(BackendMode),
    #[error("tool {0} has no endpoint configured")]
    MissingEndpoint(String),
    #[error("enabled tool {0} is not a known tool")]
    UnknownTool(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Command-line adjustments applied on top of a profile.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record reasoner traffic to this transcript and tool observations next to it.
    pub record: Option<PathBuf>,
    /// Replay a recorded transcript (and its tool observations, when present).
    pub replay: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Replace the enabled tool list.
    pub tools: Option<Vec<String>>,
}

/// Directory holding the tool observations recorded alongside `transcript`.
pub fn tool_dir_for(transcript: &Path) -> PathBuf {
    let stem = transcript
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "transcript".into());
    transcript.with_file_name(format!("{stem}.tools"))
}

impl Profile {
    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base).map_err(|e| match e {
            ProfileError::Parse { message, .. } => ProfileError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses profile text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ProfileError> {
        let mut p: Profile = toml::from_str(text).map_err(|e| ProfileError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        p.base_dir = base_dir.to_path_buf();
        if let Some(path) = &p.backend.path {
            p.backend.path = Some(base_dir.join(path));
        }
        if let Some(f) = &p.tools.fixtures {
            p.tools.fixtures = Some(base_dir.join(f));
        }
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), ProfileError> {
        self.taxonomy()?;
        self.engine.validate()?;
        match (self.backend.mode, &self.backend.path) {
            (BackendMode::Live, _) => {}
            (mode, None) => return Err(ProfileError::MissingBackendPath(mode)),
            (_, Some(p)) if !p.exists() => {
                return Err(ProfileError::MissingPath {
                    what: "backend file",
                    path: p.clone(),
                })
            }
            _ => {}
        }
        if let Some(f) = &self.tools.fixtures {
            if !f.is_dir() {
                return Err(ProfileError::MissingPath {
                    what: "fixture directory",
                    path: f.clone(),
                });
            }
        }
        self.price_table()?;
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<Taxonomy, ProfileError> {
        let t = Taxonomy::by_name(&self.taxonomy)
            .ok_or_else(|| ProfileError::UnknownTaxonomy(self.taxonomy.clone()))?;
        Ok(match &self.subtasks {
            Some(keys) => t.with_subtasks(keys)?,
            None => t,
        })
    }

    pub fn price_table(&self) -> Result<PriceTable, ProfileError> {
        Ok(PriceTable::from_prices(&self.prices)?)
    }

    /// Cards this profile would register, honoring `enabled` (or `override_tools`).
    pub fn cards(&self, override_tools: Option<&[String]>) -> Result<Vec<ToolCard>, ProfileError> {
        let taxonomy = self.taxonomy()?;
        let card_profile = match self.tools.mode {
            ToolMode::Fixture => CardProfile::Offline,
            ToolMode::Live => CardProfile::Live,
        };
        let all = builtin_cards(&taxonomy, card_profile);
        let enabled = override_tools
            .map(<[String]>::to_vec)
            .or_else(|| self.tools.enabled.clone());
        match enabled {
            None => Ok(all),
            Some(names) => names
                .iter()
                .map(|n| {
                    all.iter()
                        .find(|c| c.name.eq_ignore_ascii_case(n))
                        .cloned()
                        .ok_or_else(|| ProfileError::UnknownTool(n.clone()))
                })
                .collect(),
        }
    }

    fn base_reasoner(
        &self,
        opts: &RunOptions,
    ) -> Result<(Arc<dyn Reasoner>, Vec<FixtureRecord>), ProfileError> {
        if let Some(t) = &opts.replay {
            if !t.exists() {
                return Err(ProfileError::MissingPath {
                    what: "replay transcript",
                    path: t.clone(),
                });
            }
            return Ok((Arc::new(ReplayReasoner::load(t)?), Vec::new()));
        }
        let path = || {
            self.backend
                .path
                .clone()
                .ok_or(ProfileError::MissingBackendPath(self.backend.mode))
        };
        Ok(match self.backend.mode {
            BackendMode::Scripted => (
                Arc::new(
                    ScriptedReasoner::load(&path()?)?
                        .with_image_support(self.backend.supports_images),
                ),
                Vec::new(),
            ),
            BackendMode::Case => {
                let p = path()?;
                let text = std::fs::read_to_string(&p).map_err(ReasonerError::Io)?;
                let case = parse_case(&text)?;
                let script = case_script(&case, &self.taxonomy()?)?;
                (
                    Arc::new(
                        ScriptedReasoner::new(script)
                            .with_image_support(self.backend.supports_images),
                    ),
                    case_fixtures(&case),
                )
            }
            BackendMode::Replay => (Arc::new(ReplayReasoner::load(&path()?)?), Vec::new()),
            BackendMode::Live => (
                Arc::new(ChatCompletionsReasoner::new(self.backend.live.clone())?),
                Vec::new(),
            ),
        })
    }

    fn fixture_store(
        &self,
        extra: Vec<FixtureRecord>,
        opts: &RunOptions,
    ) -> Result<FixtureStore, ProfileError> {
        let replay_dir = opts
            .replay
            .as_deref()
            .map(tool_dir_for)
            .filter(|d| d.is_dir());
        let mut store = match (&replay_dir, &self.tools.fixtures) {
            (Some(d), _) => FixtureStore::load_dir(d)?,
            (None, Some(d)) => FixtureStore::load_dir(d)?,
            (None, None) => FixtureStore::new(),
        };
        for r in extra {
            store.insert(r);
        }
        Ok(store)
    }

    fn live_tool(
        &self,
        card: &ToolCard,
        reasoner: &Arc<dyn Reasoner>,
    ) -> Result<Arc<dyn Tool>, ProfileError> {
        if card.binding == Binding::Reasoner {
            return Ok(Arc::new(VisionTool::new(reasoner.clone())));
        }
        let ep = self
            .tools
            .endpoints
            .get(&card.name)
            .ok_or_else(|| ProfileError::MissingEndpoint(card.name.clone()))?;
        let timeout = ep
            .timeout_secs
            .map(Duration::from_secs)
            .unwrap_or(DEFAULT_TIMEOUT);
        Ok(match card.name.as_str() {
            "Google" => Arc::new(GoogleSearch::new(
                ep.url.clone(),
                ep.key_env
                    .clone()
                    .unwrap_or_else(|| "GOOGLE_API_KEY".into()),
                ep.engine_id.clone().unwrap_or_default(),
                timeout,
            )),
            "Wikipedia" => Arc::new(WikipediaLookup::new(ep.url.clone(), timeout)),
            _ => Arc::new(HttpEndpointTool::new(
                ep.url.clone(),
                ep.key_env.clone(),
                timeout,
            )),
        })
    }

    /// Builds the engine: reasoner backend, tools and configuration.
    pub fn build_engine(&self, opts: &RunOptions) -> Result<Engine, ProfileError> {
        let taxonomy = self.taxonomy()?;
        let mut config = self.engine.clone();
        if let Some(s) = opts.seed {
            config.seed = s;
        }
        let (mut reasoner, case_store) = self.base_reasoner(opts)?;
        let replaying = opts.replay.is_some();
        let fixture_mode = replaying || self.tools.mode == ToolMode::Fixture;
        let store = if fixture_mode {
            Some(Arc::new(self.fixture_store(case_store, opts)?))
        } else {
            None
        };

        let sink = match &opts.record {
            Some(t) => {
                reasoner = Arc::new(RecordingReasoner::create(reasoner, t)?);
                Some(RecordingTool::open_sink(&tool_dir_for(t))?)
            }
            None => None,
        };

        let mut registry = Registry::new();
        for card in self.cards(opts.tools.as_deref())? {
            let mut tool: Arc<dyn Tool> = match &store {
                Some(s) => Arc::new(FixtureTool::new(s.clone())),
                None => self.live_tool(&card, &reasoner)?,
            };
            if let Some(sink) = &sink {
                tool = Arc::new(RecordingTool::new(tool, sink.clone()));
            }
            registry = registry.register(card, tool)?;
        }
        let toolkit = Arc::new(Toolkit::with_budget(registry, self.tools.budget));
        Ok(Engine::new(taxonomy, config, toolkit, reasoner)?)
    }

    /// TOML for this profile with the tool list replaced by `tools`.
    pub fn export_with_tools(&self, tools: &[String]) -> Result<String, ProfileError> {
        let mut p = self.clone();
        p.tools.enabled = Some(tools.to_vec());
        let rel = |path: &Option<PathBuf>| {
            path.as_ref().map(|x| {
                x.strip_prefix(&self.base_dir)
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|_| x.clone())
            })
        };
        p.backend.path = rel(&self.backend.path);
        p.tools.fixtures = rel(&self.tools.fixtures);
        toml::to_string_pretty(&p).map_err(|e| ProfileError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.jsonl"), "").unwrap();
        std::fs::create_dir(dir.path().join("tools")).unwrap();
        let text = r#"
taxonomy = "mmfakebench"
subtasks = ["text", "match"]
[engine]
simulations = 3
continuation = "first"
[backend]
mode = "scripted"
path = "s.jsonl"
[tools]
mode = "fixture"
fixtures = "tools"
enabled = ["Google", "VQA"]
[prices.scripted]
input_per_million = "1"
output_per_million = "2.5"
"#;
        let p = Profile::parse(text, dir.path()).unwrap();
        assert_eq!(
            p.backend.path.as_deref(),
            Some(dir.path().join("s.jsonl").as_path())
        );
        assert_eq!(p.engine.simulations, 3);
        assert_eq!(p.engine.n_actions, 2);
        let names: Vec<String> = p.cards(None).unwrap().into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["Google", "VQA"]);
        let engine = p.build_engine(&RunOptions::default()).unwrap();
        assert_eq!(
            engine.toolkit().registry().whitelist("text"),
            ["Google", "Finish"]
        );

        let exported = p.export_with_tools(&["VQA".into()]).unwrap();
        std::fs::write(dir.path().join("out.toml"), &exported).unwrap();
        let back = Profile::load(&dir.path().join("out.toml")).unwrap();
        assert_eq!(back.tools.enabled, Some(vec!["VQA".to_string()]));

        let missing = text.replace("s.jsonl", "nope.jsonl");
        assert!(matches!(
            Profile::parse(&missing, dir.path()),
            Err(ProfileError::MissingPath { .. })
        ));
        let unknown = text.replace("simulations = 3", "simulation = 3");
        assert!(matches!(
            Profile::parse(&unknown, dir.path()),
            Err(ProfileError::Parse { .. })
        ));
    }

    #[test]
    fn tool_dir_sits_next_to_transcript() {
        assert_eq!(
            tool_dir_for(Path::new("/x/run.jsonl")),
            PathBuf::from("/x/run.tools")
        );
    }
}
