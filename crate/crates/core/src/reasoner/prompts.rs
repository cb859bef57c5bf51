//! Prompt templates for the four model roles.
//!
//! Templates use `{slot}` placeholders; `{{` and `}}` produce literal braces.
//! Rendering fails on any slot left unbound.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{SubtaskSpec, Taxonomy, TrajectoryStep};
use crate::toolkit::ToolCard;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template}: slot {{{slot}}} is unbound")]
    UnboundSlot { template: String, slot: String },
    #[error("template {template}: unterminated slot at byte {at}")]
    Unterminated { template: String, at: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    /// Names of all slots in order of first appearance.
    pub fn slots(&self) -> Vec<String> {
        let mut out = Vec::new();
        let _ = self.walk(|piece| {
            if let Piece::Slot(s) = piece {
                if !out.iter().any(|o| o == s) {
                    out.push(s.to_string());
                }
            }
            Ok(())
        });
        out
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map: BTreeMap<&str, &str> = bindings.iter().copied().collect();
        let mut out = String::with_capacity(self.text.len() + 256);
        self.walk(|piece| {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(s) => match map.get(s) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(TemplateError::UnboundSlot {
                            template: self.name.clone(),
                            slot: s.to_string(),
                        })
                    }
                },
            }
            Ok(())
        })?;
        Ok(out)
    }

    fn walk<'a>(
        &'a self,
        mut f: impl FnMut(Piece<'a>) -> Result<(), TemplateError>,
    ) -> Result<(), TemplateError> {
        let t = self.text.as_str();
        let mut i = 0;
        let mut lit_start = 0;
        let bytes = t.as_bytes();
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    f(Piece::Literal(&t[lit_start..i + 1]))?;
                    i += 2;
                    lit_start = i;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    f(Piece::Literal(&t[lit_start..i + 1]))?;
                    i += 2;
                    lit_start = i;
                }
                b'{' => {
                    let end = t[i..]
                        .find('}')
                        .ok_or_else(|| TemplateError::Unterminated {
                            template: self.name.clone(),
                            at: i,
                        })?;
                    f(Piece::Literal(&t[lit_start..i]))?;
                    f(Piece::Slot(&t[i + 1..i + end]))?;
                    i += end + 1;
                    lit_start = i;
                }
                _ => i += 1,
            }
        }
        f(Piece::Literal(&t[lit_start..]))
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

const TASK: &str = "\
Task: {display}
{task}

- Thought: Can reason about the current situation.
- Actions:
{actions}
If {forged_when}, please answer in the form: Finish[{forged}].
If {authentic_when}, please answer in the form: Finish[{authentic}].";

const PLANNER: &str = "\
{task_prompt}

News text: {news_text}
News image: {image_note}
{memory}{trajectory}Respond with the next step only, in the form:
Thought {step}: <your reasoning>
Action {step}: <one action from the list above>";

const TRAJECTORY_SCORE: &str = "\
Task: Analyze Misinformation Detection Trajectories.
The trajectories are labeled by environmental observations about the situation, thoughts that can reason about the current situation, and actions. Given a news item and a trajectory, evaluate its correctness and provide your reasoning and analysis in detail. Focus on the latest thought, action, and observation.
(1) Incomplete trajectories can be correct if the thoughts and actions so far are correct, even if the answer is not found yet.
(2) Do not generate additional thoughts or actions beyond those provided.
(3) At the last line of your analysis, conclude with \"Thus the correctness score is {{s}}\", where s is an integer from 1 to 10.

News text: {news_text}
News image: {image_note}
Trajectory:
{trajectory}";

const CONFIDENCE_SCORE: &str = "\
Task: Given a news, thoughts, observations, and a generated answer. If the answer can be drawn by thoughts or observation, then the result is relatively reliable; otherwise, it is unreliable. Give a brief analysis of the reliability of the answer. Then, at the last line conclude \"Thus the reliability score is {{s}}\", where s is an integer from 1 to 10.

News text: {news_text}
News image: {image_note}
Thoughts:
{thoughts}
Observations:
{observations}
Answer: {answer}";

const INITIALIZER: &str = "\
Task:
Given a news text and a news image, your task is to infer the probability that the news belongs to the following {count} different types of forgery based on your experience:
{sources}
Please avoid redundant analysis and directly return the judgment result in the following form: \"Thus, the possibility of {names} are [{placeholders}]\", where {placeholders} are floats from 0 to 1.

News text: {news_text}
News image: {image_note}";

const VISION: &str = "\
Look at the news image and answer the question.
News text: {news_text}
Question: {question}";

/// All rendered-prompt entry points, with task prompts pre-built per subtask.
#[derive(Debug, Clone)]
pub struct PromptBook {
    task_prompts: BTreeMap<String, String>,
    planner: PromptTemplate,
    trajectory: PromptTemplate,
    confidence: PromptTemplate,
    initializer: PromptTemplate,
}

impl PromptBook {
    /// Builds task prompts for every subtask from the cards scoped to it.
    pub fn new(
        taxonomy: &Taxonomy,
        cards_for: impl Fn(&str) -> Vec<ToolCard>,
    ) -> Result<Self, TemplateError> {
        let mut task_prompts = BTreeMap::new();
        for spec in &taxonomy.subtasks {
            let cards = cards_for(&spec.key);
            task_prompts.insert(spec.key.clone(), render_task_prompt(spec, &cards)?);
        }
        Ok(Self {
            task_prompts,
            planner: PromptTemplate::new("planner", PLANNER),
            trajectory: PromptTemplate::new("trajectory_score", TRAJECTORY_SCORE),
            confidence: PromptTemplate::new("confidence_score", CONFIDENCE_SCORE),
            initializer: PromptTemplate::new("initializer", INITIALIZER),
        })
    }

    pub fn task_prompt(&self, subtask: &str) -> Option<&str> {
        self.task_prompts.get(subtask).map(String::as_str)
    }

    pub fn planner(
        &self,
        subtask: &str,
        news_text: &str,
        image_note: &str,
        memory: &[String],
        trajectory: &[TrajectoryStep],
    ) -> Result<String, TemplateError> {
        let task_prompt = self
            .task_prompt(subtask)
            .ok_or_else(|| TemplateError::UnboundSlot {
                template: "planner".into(),
                slot: format!("task_prompt:{subtask}"),
            })?;
        let memory = if memory.is_empty() {
            String::new()
        } else {
            let mut m = String::from("Earlier attempts at this task that failed:\n");
            for d in memory {
                m.push_str("- ");
                m.push_str(d);
                m.push('\n');
            }
            m
        };
        let mut traj = render_trajectory(trajectory);
        if !traj.is_empty() {
            traj.push('\n');
        }
        let step = (trajectory.len() + 1).to_string();
        self.planner.render(&[
            ("task_prompt", task_prompt),
            ("news_text", news_text),
            ("image_note", image_note),
            ("memory", &memory),
            ("trajectory", &traj),
            ("step", &step),
        ])
    }

    pub fn trajectory_score(
        &self,
        news_text: &str,
        image_note: &str,
        trajectory: &[TrajectoryStep],
    ) -> Result<String, TemplateError> {
        self.trajectory.render(&[
            ("news_text", news_text),
            ("image_note", image_note),
            ("trajectory", &render_trajectory(trajectory)),
        ])
    }

    pub fn confidence_score(
        &self,
        news_text: &str,
        image_note: &str,
        trajectory: &[TrajectoryStep],
        answer: &str,
    ) -> Result<String, TemplateError> {
        let thoughts = trajectory
            .iter()
            .map(|s| format!("Thought {}: {}", s.index + 1, s.thought))
            .collect::<Vec<_>>()
            .join("\n");
        let observations = trajectory
            .iter()
            .filter(|s| !s.observation.is_empty())
            .map(|s| format!("Observation {}: {}", s.index + 1, s.observation))
            .collect::<Vec<_>>()
            .join("\n");
        let observations = if observations.is_empty() {
            "(none)".to_string()
        } else {
            observations
        };
        self.confidence.render(&[
            ("news_text", news_text),
            ("image_note", image_note),
            ("thoughts", &thoughts),
            ("observations", &observations),
            ("answer", answer),
        ])
    }

    pub fn initializer(
        &self,
        taxonomy: &Taxonomy,
        subtasks: &[SubtaskSpec],
        news_text: &str,
        image_note: &str,
    ) -> Result<String, TemplateError> {
        let names: Vec<String> = subtasks
            .iter()
            .map(|s| {
                taxonomy
                    .class(&s.class)
                    .map(|c| init_name(c.label.as_str(), c.key.as_str()))
                    .unwrap_or_else(|| s.display.clone())
            })
            .collect();
        let sources = subtasks
            .iter()
            .zip(&names)
            .enumerate()
            .map(|(i, (s, n))| format!("({}) {}: {}", i + 1, n, s.init_hint))
            .collect::<Vec<_>>()
            .join("\n");
        let placeholders = (1..=subtasks.len())
            .map(|i| format!("p{i}"))
            .collect::<Vec<_>>()
            .join(",");
        self.initializer.render(&[
            ("count", &count_word(subtasks.len())),
            ("sources", &sources),
            ("names", &names.join(", ")),
            ("placeholders", &placeholders),
            ("news_text", news_text),
            ("image_note", image_note),
        ])
    }
}

/// Prompt for the image question-answering tool.
pub fn vision_prompt(news_text: &str, question: &str) -> String {
    PromptTemplate::new("vision", VISION)
        .render(&[("news_text", news_text), ("question", question)])
        .expect("vision template slots are fixed")
}

fn init_name(label: &str, key: &str) -> String {
    // MMFakeBench's mismatch class is named after its distortion in this prompt
    if key == "CCD" {
        "Cross-modal Consistency Distortion".into()
    } else {
        label.into()
    }
}

fn count_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS
        .get(n)
        .map(|w| w.to_string())
        .unwrap_or_else(|| n.to_string())
}

/// Renders the action list of a subtask's task prompt.
pub fn render_task_prompt(spec: &SubtaskSpec, cards: &[ToolCard]) -> Result<String, TemplateError> {
    let mut actions = String::new();
    for (i, card) in cards.iter().enumerate() {
        actions.push_str(&format!(
            "({}) {}[{}]: {}\n",
            i + 1,
            card.name,
            card.input_schema.hint(),
            card.description
        ));
    }
    actions.push_str(&format!(
        "({}) Finish[answer]: Return the answer and finishes the task.",
        cards.len() + 1
    ));
    PromptTemplate::new("task", TASK).render(&[
        ("display", &spec.display),
        ("task", &spec.task),
        ("actions", &actions),
        ("forged_when", &spec.forged_when),
        ("forged", &spec.forged_token),
        ("authentic_when", &spec.authentic_when),
        ("authentic", &spec.authentic_token),
    ])
}

/// `Thought i / Action i / Observation i` lines, one-based.
pub fn render_trajectory(trajectory: &[TrajectoryStep]) -> String {
    let mut out = Vec::new();
    for s in trajectory {
        let n = s.index + 1;
        out.push(format!("Thought {n}: {}", s.thought));
        out.push(format!("Action {n}: {}", s.action));
        if !s.observation.is_empty() {
            out.push(format!("Observation {n}: {}", s.observation));
        }
    }
    out.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{CORRECTNESS_MARKER, RELIABILITY_MARKER};

    #[test]
    fn render_binds_and_escapes() {
        let t = PromptTemplate::new("t", "a {x} {{s}} {y}");
        assert_eq!(
            t.render(&[("x", "1"), ("y", "{z}")]).unwrap(),
            "a 1 {s} {z}"
        );
        assert_eq!(t.slots(), vec!["x", "y"]);
    }

    #[test]
    fn unbound_slot_fails_loudly() {
        let t = PromptTemplate::new("t", "a {x} {y}");
        assert_eq!(
            t.render(&[("x", "1")]),
            Err(TemplateError::UnboundSlot {
                template: "t".into(),
                slot: "y".into()
            })
        );
        let t = PromptTemplate::new("t", "a {x");
        assert!(matches!(
            t.render(&[("x", "1")]),
            Err(TemplateError::Unterminated { .. })
        ));
    }

    #[test]
    fn evaluator_prompts_carry_markers() {
        let tax = Taxonomy::mmfakebench();
        let book = PromptBook::new(&tax, |_| Vec::new()).unwrap();
        let p = book.trajectory_score("news", "none", &[]).unwrap();
        assert!(p.contains(&format!("Thus the {CORRECTNESS_MARKER} {{s}}")));
        let p = book
            .confidence_score("news", "none", &[], "Finish[MATCH]")
            .unwrap();
        assert!(p.contains(&format!("Thus the {RELIABILITY_MARKER} {{s}}")));
    }

    #[test]
    fn initializer_lists_every_source() {
        let tax = Taxonomy::mmfakebench();
        let book = PromptBook::new(&tax, |_| Vec::new()).unwrap();
        let p = book
            .initializer(&tax, &tax.subtasks, "news", "none")
            .unwrap();
        assert!(p.contains("following three different types"));
        assert!(p.contains(
            "Thus, the possibility of Textual Veracity Distortion, Visual Veracity Distortion, Cross-modal Consistency Distortion are [p1,p2,p3]"
        ));
    }

    #[test]
    fn planner_injects_memory_only_when_present() {
        let tax = Taxonomy::mmfakebench();
        let book = PromptBook::new(&tax, |_| Vec::new()).unwrap();
        let p = book.planner("text", "n", "none", &[], &[]).unwrap();
        assert!(!p.contains("Earlier attempts"));
        assert!(p.contains("Thought 1: <your reasoning>"));
        let p = book
            .planner(
                "text",
                "n",
                "none",
                &["Google[x] -> Finish[TEXT SUPPORT] (reward 0.20)".into()],
                &[],
            )
            .unwrap();
        assert!(p.contains("Earlier attempts at this task that failed:\n- Google[x]"));
    }
}
