//! Greedy, single-pass tool subset selection on a development corpus.
//!
//! Candidates are tried in the given order. Each is added to the currently
//! accepted set and kept only if corpus accuracy strictly improves; the
//! baseline is then moved to the new accuracy. Comparing every candidate
//! against the initial baseline instead can accept a different set, so
//! every report states which rule was used.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::NewsItem;
use crate::toolkit::ToolCard;

pub const BASELINE_NOTE: &str =
    "baseline accuracy is recomputed after each acceptance (incremental greedy), \
not held at the initial baseline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub tool: String,
    pub accuracy: f64,
    /// Accuracy change against the accepted set at the time of evaluation.
    pub delta: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub note: String,
    pub base: Vec<String>,
    pub order: Vec<String>,
    pub base_accuracy: f64,
    pub candidates: Vec<CandidateResult>,
    pub accepted: Vec<String>,
    /// Baseline accuracy followed by the accuracy after each acceptance.
    pub accuracy_steps: Vec<f64>,
    /// Set when the evaluator failed; the report covers the candidates before it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl SelectionReport {
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "note: {}", self.note);
        let _ = writeln!(
            s,
            "base: {{{}}}  accuracy {:.4}",
            self.base.join(", "),
            self.base_accuracy
        );
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>9}  decision",
            "candidate", "accuracy", "delta"
        );
        for c in &self.candidates {
            let d = if c.accepted { "accept" } else { "reject" };
            let _ = writeln!(
                s,
                "{:<20} {:>9.4} {:>+9.4}  {d}",
                c.tool, c.accuracy, c.delta
            );
        }
        let steps: Vec<String> = self
            .accuracy_steps
            .iter()
            .map(|a| format!("{a:.2}"))
            .collect();
        let _ = writeln!(s, "accepted: {{{}}}", self.accepted.join(", "));
        let _ = writeln!(s, "accuracy: {}", steps.join(" -> "));
        if let Some(f) = &self.failure {
            let _ = writeln!(s, "stopped early: {f}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("development corpus is empty")]
    EmptyCorpus,
    #[error("evaluator failed: {message}")]
    EvaluatorFailure {
        message: String,
        partial: Box<SelectionReport>,
    },
}

/// Greedy selection. `evaluate(tools, corpus)` returns corpus accuracy with
/// exactly `tools` available. The accepted set is `base` plus the accepted
/// candidates, in evaluation order.
pub fn select_tools<E: std::fmt::Display>(
    candidates: &[ToolCard],
    base: &[ToolCard],
    corpus: &[NewsItem],
    mut evaluate: impl FnMut(&[ToolCard], &[NewsItem]) -> Result<f64, E>,
) -> Result<SelectionReport, SelectionError> {
    if corpus.is_empty() {
        return Err(SelectionError::EmptyCorpus);
    }
    let names = |cs: &[ToolCard]| cs.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
    let mut report = SelectionReport {
        note: BASELINE_NOTE.into(),
        base: names(base),
        order: names(candidates),
        base_accuracy: 0.0,
        candidates: Vec::new(),
        accepted: Vec::new(),
        accuracy_steps: Vec::new(),
        failure: None,
    };
    let fail = |mut report: SelectionReport, e: E| {
        let message = e.to_string();
        report.failure = Some(message.clone());
        SelectionError::EvaluatorFailure {
            message,
            partial: Box::new(report),
        }
    };

    let mut current: Vec<ToolCard> = base.to_vec();
    let mut baseline = match evaluate(&current, corpus) {
        Ok(a) => a,
        Err(e) => return Err(fail(report, e)),
    };
    report.base_accuracy = baseline;
    report.accuracy_steps.push(baseline);

    for cand in candidates {
        let mut trial = current.clone();
        trial.push(cand.clone());
        let acc = match evaluate(&trial, corpus) {
            Ok(a) => a,
            Err(e) => return Err(fail(report, e)),
        };
        let delta = acc - baseline;
        let accepted = delta > 0.0;
        log::info!(
            "tool {}: accuracy {acc:.4} (delta {delta:+.4}) {}",
            cand.name,
            if accepted { "accepted" } else { "rejected" }
        );
        report.candidates.push(CandidateResult {
            tool: cand.name.clone(),
            accuracy: acc,
            delta,
            accepted,
        });
        if accepted {
            current = trial;
            baseline = acc;
            report.accepted.push(cand.name.clone());
            report.accuracy_steps.push(acc);
        }
    }
    Ok(report)
}
