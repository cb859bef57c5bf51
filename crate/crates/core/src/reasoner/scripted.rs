//! Canned completions keyed by item, role and subtask.
//!
//! A script is a JSONL file, one entry per call:
//!
//! ```text
//! {"item":"gc","role":"planner","subtask":"match","completions":["Thought 1: ...\nAction 1: VQA[What is shown in the image?]"]}
//! {"item":"gc","role":"trajectory","subtask":"match","completions":["Thus the correctness score is 2"]}
//! ```
//!
//! Entries for the same (item, role, subtask) are served in file order. An
//! entry whose `item` is `*` answers for any item once item-specific entries
//! run out; an entry without `subtask` answers for any subtask likewise.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    fit_completions, Reasoner, ReasonerError, ReasonerRequest, ReasonerResponse, Role, Usage,
};

pub const SCRIPTED_MODEL: &str = "scripted";
pub const ANY_ITEM: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub item: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<String>,
    pub completions: Vec<String>,
}

impl ScriptEntry {
    pub fn new(
        item: impl Into<String>,
        role: Role,
        subtask: Option<&str>,
        completions: Vec<String>,
    ) -> Self {
        Self {
            item: item.into(),
            role,
            subtask: subtask.map(str::to_string),
            completions,
        }
    }
}

type Key = (String, Role, Option<String>);

#[derive(Debug, Default)]
pub struct ScriptedReasoner {
    queues: Mutex<HashMap<Key, VecDeque<Vec<String>>>>,
    images: bool,
}

impl ScriptedReasoner {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut queues: HashMap<Key, VecDeque<Vec<String>>> = HashMap::new();
        for e in entries {
            if e.completions.is_empty() {
                continue;
            }
            queues
                .entry((e.item, e.role, e.subtask))
                .or_default()
                .push_back(e.completions);
        }
        Self {
            queues: Mutex::new(queues),
            images: true,
        }
    }

    /// Reads a JSONL script; blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, ReasonerError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(parse_script(&text)?))
    }

    pub fn with_image_support(mut self, images: bool) -> Self {
        self.images = images;
        self
    }

    /// Entries not yet served.
    pub fn remaining(&self) -> usize {
        self.queues
            .lock()
            .expect("script lock poisoned")
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, ReasonerError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| ReasonerError::Transcript(format!("script line {}: {e}", i + 1)))
        })
        .collect()
}

pub(crate) fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Reasoner for ScriptedReasoner {
    fn complete(&self, req: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        let mut queues = self.queues.lock().expect("script lock poisoned");
        let candidates = [
            (req.item_id.clone(), req.role, req.subtask.clone()),
            (req.item_id.clone(), req.role, None),
            (ANY_ITEM.to_string(), req.role, req.subtask.clone()),
            (ANY_ITEM.to_string(), req.role, None),
        ];
        let popped = candidates
            .iter()
            .find_map(|k| queues.get_mut(k).and_then(VecDeque::pop_front));
        let Some(completions) = popped else {
            return Err(ReasonerError::ScriptExhausted {
                item: req.item_id.clone(),
                role: req.role,
                subtask: req.subtask.clone(),
            });
        };
        let completions = fit_completions(completions, req.sample_count);
        let usage = Usage {
            input_tokens: word_count(&req.prompt),
            output_tokens: completions.iter().map(|c| word_count(c)).sum(),
            model_name: SCRIPTED_MODEL.into(),
        };
        Ok(ReasonerResponse { completions, usage })
    }

    fn supports_images(&self) -> bool {
        self.images
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(item: &str, role: Role, subtask: Option<&str>, n: usize) -> ReasonerRequest {
        ReasonerRequest {
            role,
            prompt: "two words".into(),
            attachments: vec![],
            temperature: 0.0,
            sample_count: n,
            item_id: item.into(),
            subtask: subtask.map(str::to_string),
        }
    }

    #[test]
    fn single_canned_line_passes_through() {
        let r = ScriptedReasoner::new([ScriptEntry::new(
            "a",
            Role::Planner,
            Some("text"),
            vec!["Action 1: Finish[TEXT SUPPORT]".into()],
        )]);
        let resp = r
            .complete(&req("a", Role::Planner, Some("text"), 1))
            .unwrap();
        assert_eq!(resp.completions, ["Action 1: Finish[TEXT SUPPORT]"]);
        assert_eq!(resp.usage.input_tokens, 2);
        assert_eq!(resp.usage.output_tokens, 4);
        assert!(matches!(
            r.complete(&req("a", Role::Planner, Some("text"), 1)),
            Err(ReasonerError::ScriptExhausted { .. })
        ));
    }

    #[test]
    fn specific_entries_before_wildcards() {
        let r = ScriptedReasoner::new([
            ScriptEntry::new("*", Role::TrajectoryEvaluator, None, vec!["any".into()]),
            ScriptEntry::new(
                "a",
                Role::TrajectoryEvaluator,
                Some("text"),
                vec!["specific".into()],
            ),
        ]);
        let first = r
            .complete(&req("a", Role::TrajectoryEvaluator, Some("text"), 1))
            .unwrap();
        assert_eq!(first.completions, ["specific"]);
        let second = r
            .complete(&req("a", Role::TrajectoryEvaluator, Some("text"), 1))
            .unwrap();
        assert_eq!(second.completions, ["any"]);
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn planner_samples_are_padded() {
        let r =
            ScriptedReasoner::new([ScriptEntry::new("a", Role::Planner, None, vec!["x".into()])]);
        let resp = r
            .complete(&req("a", Role::Planner, Some("image"), 2))
            .unwrap();
        assert_eq!(resp.completions, ["x", "x"]);
    }

    #[test]
    fn script_lines_report_position() {
        let err = parse_script("\n{\"item\":\"a\"}\n").unwrap_err();
        assert!(err.to_string().contains("script line 2"));
    }
}
