//! Role-level operations over a backend for one episode.

use std::path::PathBuf;

use super::prompts::{PromptBook, TemplateError};
use super::{Reasoner, ReasonerError, ReasonerRequest, Role, UsageLedger};
use crate::domain::{normalize_score, NewsItem, SubtaskSpec, Taxonomy, TrajectoryStep};
use crate::grammar::{
    parse_init_distribution, parse_planner_completion, parse_score, InitDistribution,
    PlannerUtterance, CORRECTNESS_MARKER, RELIABILITY_MARKER,
};

/// Score used when the evaluator output cannot be parsed twice in a row.
pub const FALLBACK_SCORE: i64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Per-episode view of the reasoner: renders prompts, parses replies and
/// accumulates token usage.
pub struct ReasoningSession<'a> {
    reasoner: &'a dyn Reasoner,
    prompts: &'a PromptBook,
    item: &'a NewsItem,
    image_note: String,
    attachments: Vec<PathBuf>,
    planner_temperature: f64,
    usage: UsageLedger,
    warnings: Vec<String>,
}

impl<'a> ReasoningSession<'a> {
    /// `image_note` is what prompts say about the image: a pointer to the
    /// attachment, a caption, or `none`.
    pub fn new(
        reasoner: &'a dyn Reasoner,
        prompts: &'a PromptBook,
        item: &'a NewsItem,
        image_note: impl Into<String>,
        planner_temperature: f64,
    ) -> Self {
        let attachments = match &item.image {
            Some(p) if reasoner.supports_images() => vec![p.clone()],
            _ => Vec::new(),
        };
        Self {
            reasoner,
            prompts,
            item,
            image_note: image_note.into(),
            attachments,
            planner_temperature,
            usage: UsageLedger::default(),
            warnings: Vec::new(),
        }
    }

    pub fn usage(&self) -> &UsageLedger {
        &self.usage
    }

    /// Parse fallbacks and other non-fatal problems, in order.
    pub fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }

    fn call(
        &mut self,
        role: Role,
        prompt: String,
        n: usize,
        temperature: f64,
        subtask: Option<&str>,
    ) -> Result<Vec<String>, ReasonerError> {
        let req = ReasonerRequest {
            role,
            prompt,
            attachments: self.attachments.clone(),
            temperature,
            sample_count: n,
            item_id: self.item.id.clone(),
            subtask: subtask.map(str::to_string),
        };
        let resp = self.reasoner.complete(&req)?;
        self.usage.record(role.phase(), &resp.usage);
        if resp.completions.is_empty() {
            return Err(ReasonerError::BackendUnavailable(format!(
                "{role} returned no completions"
            )));
        }
        Ok(resp.completions)
    }

    /// `n` candidate next steps for a rollout of `subtask`.
    pub fn plan(
        &mut self,
        subtask: &str,
        trajectory: &[TrajectoryStep],
        memory: &[String],
        n: usize,
    ) -> Result<Vec<PlannerUtterance>, SessionError> {
        let prompt = self.prompts.planner(
            subtask,
            &self.item.text,
            &self.image_note,
            memory,
            trajectory,
        )?;
        let t = self.planner_temperature;
        let out = self.call(Role::Planner, prompt, n, t, Some(subtask))?;
        Ok(out.iter().map(|c| parse_planner_completion(c)).collect())
    }

    /// Normalized trajectory score S^T.
    pub fn score_trajectory(
        &mut self,
        subtask: &str,
        trajectory: &[TrajectoryStep],
    ) -> Result<f64, SessionError> {
        let prompt =
            self.prompts
                .trajectory_score(&self.item.text, &self.image_note, trajectory)?;
        self.score(
            Role::TrajectoryEvaluator,
            prompt,
            CORRECTNESS_MARKER,
            subtask,
        )
    }

    /// Normalized confidence score S^C for a finished trajectory.
    pub fn score_confidence(
        &mut self,
        subtask: &str,
        trajectory: &[TrajectoryStep],
        answer: &str,
    ) -> Result<f64, SessionError> {
        let prompt =
            self.prompts
                .confidence_score(&self.item.text, &self.image_note, trajectory, answer)?;
        self.score(
            Role::ConfidenceEvaluator,
            prompt,
            RELIABILITY_MARKER,
            subtask,
        )
    }

    fn score(
        &mut self,
        role: Role,
        prompt: String,
        marker: &str,
        subtask: &str,
    ) -> Result<f64, SessionError> {
        for attempt in 0..2 {
            let out = self.call(role, prompt.clone(), 1, 0.0, Some(subtask))?;
            let parsed = parse_score(&out[0], marker)
                .map_err(|e| e.to_string())
                .and_then(|raw| normalize_score(raw).map_err(|e| e.to_string()));
            match parsed {
                Ok(s) => return Ok(s),
                Err(e) if attempt == 0 => log::debug!("{role} score unparsable ({e}); retrying"),
                Err(e) => {
                    let msg =
                        format!("{role} score unparsable twice ({e}); using {FALLBACK_SCORE}");
                    log::warn!("item {}: {msg}", self.item.id);
                    self.warnings.push(msg);
                }
            }
        }
        Ok(normalize_score(FALLBACK_SCORE).expect("fallback in range"))
    }

    /// Initial subtask weights, uniform when the reply cannot be parsed.
    pub fn init_priors(
        &mut self,
        taxonomy: &Taxonomy,
        subtasks: &[SubtaskSpec],
    ) -> Result<InitDistribution, SessionError> {
        let prompt =
            self.prompts
                .initializer(taxonomy, subtasks, &self.item.text, &self.image_note)?;
        let out = self.call(Role::Initializer, prompt, 1, 0.0, None)?;
        let dist = parse_init_distribution(&out[0], subtasks.len());
        if dist.fallback {
            self.warnings
                .push("initializer reply unparsable; using uniform priors".into());
        }
        Ok(dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoner::scripted::{ScriptEntry, ScriptedReasoner};

    fn fixture() -> (Taxonomy, PromptBook, NewsItem) {
        let tax = Taxonomy::mmfakebench();
        let book = PromptBook::new(&tax, |_| Vec::new()).unwrap();
        (tax, book, NewsItem::new("a", "news"))
    }

    #[test]
    fn scores_normalize_and_fall_back() {
        let (_, book, item) = fixture();
        let r = ScriptedReasoner::new([
            ScriptEntry::new(
                "a",
                Role::TrajectoryEvaluator,
                None,
                vec!["Thus the correctness score is 10".into()],
            ),
            ScriptEntry::new("a", Role::TrajectoryEvaluator, None, vec!["nothing".into()]),
            ScriptEntry::new(
                "a",
                Role::TrajectoryEvaluator,
                None,
                vec!["still nothing".into()],
            ),
            ScriptEntry::new(
                "a",
                Role::ConfidenceEvaluator,
                None,
                vec!["Thus the reliability score is 7.".into()],
            ),
            ScriptEntry::new(
                "a",
                Role::ConfidenceEvaluator,
                None,
                vec!["Thus the reliability score is 1".into()],
            ),
        ]);
        let mut s = ReasoningSession::new(&r, &book, &item, "none", 0.7);
        assert_eq!(s.score_trajectory("text", &[]).unwrap(), 1.0);
        assert_eq!(s.score_trajectory("text", &[]).unwrap(), 0.5);
        assert_eq!(s.take_warnings().len(), 1);
        assert_eq!(
            s.score_confidence("text", &[], "Finish[TEXT SUPPORT]")
                .unwrap(),
            0.7
        );
        assert_eq!(
            s.score_confidence("text", &[], "Finish[TEXT SUPPORT]")
                .unwrap(),
            0.1
        );
        assert_eq!(s.usage().total().calls, 5);
    }

    #[test]
    fn priors_parse_or_go_uniform() {
        let (tax, book, item) = fixture();
        let r = ScriptedReasoner::new([
            ScriptEntry::new(
                "a",
                Role::Initializer,
                None,
                vec!["Thus, the possibility of ... are [0.9,0.4]".into()],
            ),
            ScriptEntry::new("a", Role::Initializer, None, vec!["I cannot say".into()]),
        ]);
        let two = Taxonomy::mmfakebench()
            .with_subtasks(&["text".into(), "match".into()])
            .unwrap();
        let mut s = ReasoningSession::new(&r, &book, &item, "none", 0.7);
        assert_eq!(
            s.init_priors(&tax, &two.subtasks).unwrap().weights,
            vec![0.9, 0.4]
        );
        let d = s.init_priors(&tax, &tax.subtasks).unwrap();
        assert!(d.fallback);
        assert_eq!(d.weights, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn plan_returns_n_candidates() {
        let (_, book, item) = fixture();
        let r = ScriptedReasoner::new([ScriptEntry::new(
            "a",
            Role::Planner,
            Some("match"),
            vec!["Thought 1: look.\nAction 1: VQA[What is shown in the image?]".into()],
        )]);
        let mut s = ReasoningSession::new(&r, &book, &item, "none", 0.7);
        let c = s.plan("match", &[], &[], 2).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].action_text, "VQA[What is shown in the image?]");
    }
}
