//! Summaries of failed rollouts, fed back into later planner prompts.

use std::collections::{BTreeMap, VecDeque};

use crate::domain::TrajectoryStep;

/// Longest observation excerpt kept per step in a digest.
const EXCERPT_CHARS: usize = 80;

#[derive(Debug, Clone)]
pub struct FailureMemory {
    capacity: usize,
    entries: BTreeMap<String, VecDeque<String>>,
}

impl FailureMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: BTreeMap::new(),
        }
    }

    /// Stores a digest of the trajectory, evicting the oldest beyond capacity.
    pub fn remember(
        &mut self,
        subtask: &str,
        trajectory: &[TrajectoryStep],
        reward: f64,
    ) -> String {
        let digest = digest(trajectory, reward);
        if self.capacity == 0 {
            return digest;
        }
        let q = self.entries.entry(subtask.to_string()).or_default();
        q.push_back(digest.clone());
        while q.len() > self.capacity {
            q.pop_front();
        }
        digest
    }

    /// Digests for `subtask`, oldest first.
    pub fn digests(&self, subtask: &str) -> Vec<String> {
        self.entries
            .get(subtask)
            .map(|q| q.iter().cloned().collect())
            .unwrap_or_default()
    }
}

fn excerpt(s: &str) -> String {
    let flat = s.split_whitespace().collect::<Vec<_>>().join(" ");
    match flat.char_indices().nth(EXCERPT_CHARS) {
        Some((i, _)) => format!("{}...", &flat[..i]),
        None => flat,
    }
}

/// One-line summary: each action with a short excerpt of what it returned.
pub fn digest(trajectory: &[TrajectoryStep], reward: f64) -> String {
    let mut parts: Vec<String> = trajectory
        .iter()
        .map(|s| {
            let action = s.action.trim();
            if s.observation.is_empty() {
                action.to_string()
            } else {
                format!("{action} (saw: {})", excerpt(&s.observation))
            }
        })
        .collect();
    if parts.is_empty() {
        parts.push("no steps".into());
    }
    format!("{} -> reward {reward:.2}", parts.join(" -> "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(action: &str, obs: &str) -> TrajectoryStep {
        TrajectoryStep {
            index: 0,
            thought: "t".into(),
            action: action.into(),
            parsed: None,
            observation: obs.into(),
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut m = FailureMemory::new(2);
        for r in [0.1, 0.2, 0.3] {
            m.remember("match", &[step("Finish[MATCH]", "")], r);
        }
        let d = m.digests("match");
        assert_eq!(d.len(), 2);
        assert!(d[0].ends_with("reward 0.20"));
        assert!(m.digests("text").is_empty());
    }

    #[test]
    fn digest_shape() {
        let long = "word ".repeat(50);
        let d = digest(
            &[
                step("VQA[What is shown?]", &long),
                step("Finish[MISMATCH]", ""),
            ],
            0.2,
        );
        assert!(d.starts_with("VQA[What is shown?] (saw: word word"));
        assert!(d.contains("...) -> Finish[MISMATCH] -> reward 0.20"));
    }
}
