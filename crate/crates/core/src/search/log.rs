//! Line-delimited record of everything an episode did.
//!
//! The first record is a header carrying the schema version. Records hold no
//! wall-clock data, so identical inputs give byte-identical logs.

use serde::{Deserialize, Serialize};

use super::tree::{BackpropDelta, NodeId};
use crate::decision::Verdict;
use crate::domain::{EngineConfig, Polarity, TrajectoryStep};
use crate::reasoner::UsageLedger;

pub const LOG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        schema: u32,
        item: String,
        subtasks: Vec<String>,
        config: EngineConfig,
    },
    Init {
        priors: Vec<f64>,
        fallback: bool,
        clamped: bool,
        image_note: String,
    },
    Iteration(IterationRecord),
    Verdict {
        verdict: Verdict,
        label: String,
        iterations: usize,
        usage: UsageLedger,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UctEntry {
    pub subtask: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub node: NodeId,
    pub thought: String,
    pub action: String,
    /// Trajectory score used to rank this candidate, when ranking happened.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub node: NodeId,
    pub step: TrajectoryStep,
    pub candidates: Vec<CandidateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_hit: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub subtask: String,
    pub uct: Vec<UctEntry>,
    pub steps: Vec<StepRecord>,
    pub polarity: Polarity,
    pub answer: String,
    pub trajectory_score: f64,
    pub confidence: f64,
    pub reward: f64,
    pub backprop: Vec<BackpropDelta>,
    pub pruned: bool,
    pub early_stop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub records: Vec<LogRecord>,
}

impl EpisodeLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn iterations(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Iteration(it) => Some(it),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?);
        }
        match records.first() {
            Some(LogRecord::Header { schema, .. }) if *schema == LOG_SCHEMA => Ok(Self { records }),
            Some(LogRecord::Header { schema, .. }) => {
                Err(format!("unsupported log schema {schema}"))
            }
            _ => Err("log does not start with a header".into()),
        }
    }
}
