//! Reader for printed search transcripts and their conversion to replay inputs.
//!
//! The format is the one the engine's own transcripts are printed in:
//!
//! ```text
//! News Text: Romney announces Ryan as his running mate ...
//! Binary label: Fake
//! Multiple label: Mismatch
//! Image: romney.png
//! Initializer priors: [0.3, 0.6]
//! =====Iter 0: select node <match>=====
//! Thought 1: I need to determine what the image depicts ...
//! Action 1: VQA[What is shown in the image?]
//! Observation 1: The image shows a person standing on a stage ...
//! Thought 2: ...
//! Action 2: Finish[MISMATCH]
//! reward = 0.2
//! =====Final decision=====
//! Finish[MISMATCH]
//! ```
//!
//! Lines that do not start a new field continue the previous one. From a
//! parsed case, [`case_script`] builds scripted reasoner entries that replay
//! the printed thoughts, actions and rewards, and [`case_fixtures`] builds
//! tool fixtures for the printed observations.

use std::path::Path;

use thiserror::Error;

use crate::domain::{NewsItem, Taxonomy, Veracity};
use crate::grammar::parse_action;
use crate::reasoner::scripted::{ScriptEntry, ANY_ITEM};
use crate::reasoner::Role;
use crate::toolkit::fixture::FixtureRecord;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaseTranscript {
    pub news_text: String,
    pub binary_label: Option<String>,
    pub multiple_label: Option<String>,
    pub image: Option<String>,
    pub priors: Vec<f64>,
    pub iterations: Vec<CaseIteration>,
    pub final_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseIteration {
    pub index: usize,
    pub subtask: String,
    pub steps: Vec<CaseStep>,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaseStep {
    /// Label as printed, e.g. `Thought 3`; numbering in transcripts is not always consecutive.
    pub thought_label: String,
    pub thought: String,
    pub action_label: String,
    pub action: String,
    pub observation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    None,
    NewsText,
    Thought,
    Action,
    Observation,
    Final,
}

fn labeled<'a>(line: &'a str, word: &str) -> Option<(String, &'a str)> {
    let rest = line.strip_prefix(word)?;
    let colon = rest.find(':')?;
    let num = rest[..colon].trim();
    if !num.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let label = if num.is_empty() {
        word.to_string()
    } else {
        format!("{word} {num}")
    };
    Some((label, rest[colon + 1..].trim()))
}

fn header<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let (k, v) = line.split_once(':')?;
    k.trim().eq_ignore_ascii_case(key).then(|| v.trim())
}

/// `=====Iter 3: select node <text>=====` or `=====Final decision=====`.
enum Banner {
    Iter(usize, String),
    Final,
}

fn banner(line: &str) -> Option<Result<Banner, String>> {
    if !line.starts_with("==") {
        return None;
    }
    let inner = line.trim_matches('=').trim();
    if inner.eq_ignore_ascii_case("final decision") {
        return Some(Ok(Banner::Final));
    }
    let Some(rest) = inner.strip_prefix("Iter") else {
        return Some(Err(format!("unknown banner {inner:?}")));
    };
    let parsed = (|| {
        let (num, tail) = rest.split_once(':')?;
        let idx = num.trim().parse().ok()?;
        let open = tail.find('<')?;
        let close = tail.rfind('>')?;
        (open < close).then(|| Banner::Iter(idx, tail[open + 1..close].trim().to_string()))
    })();
    Some(parsed.ok_or_else(|| format!("malformed iteration banner {inner:?}")))
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    inner
        .split(',')
        .map(|x| x.trim().parse::<f64>().ok())
        .collect()
}

fn append(dst: &mut String, line: &str) {
    if !dst.is_empty() {
        dst.push('\n');
    }
    dst.push_str(line);
}

pub fn parse_case(text: &str) -> Result<CaseTranscript, CaseError> {
    let mut case = CaseTranscript::default();
    let mut field = Field::None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: String| CaseError::Syntax {
            line: lineno,
            message,
        };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(b) = banner(line) {
            match b.map_err(err)? {
                Banner::Iter(index, subtask) => {
                    case.iterations.push(CaseIteration {
                        index,
                        subtask,
                        steps: Vec::new(),
                        reward: None,
                    });
                    field = Field::None;
                }
                Banner::Final => field = Field::Final,
            }
            continue;
        }
        if field == Field::Final {
            match &mut case.final_answer {
                Some(a) => append(a, line),
                None => case.final_answer = Some(line.to_string()),
            }
            continue;
        }
        let Some(iter) = case.iterations.last_mut() else {
            // header section
            if let Some(v) = header(line, "News Text") {
                case.news_text = v.to_string();
                field = Field::NewsText;
            } else if let Some(v) = header(line, "Binary label") {
                case.binary_label = Some(v.to_string());
                field = Field::None;
            } else if let Some(v) = header(line, "Multiple label") {
                case.multiple_label = Some(v.to_string());
                field = Field::None;
            } else if let Some(v) = header(line, "Image") {
                case.image = Some(v.to_string());
                field = Field::None;
            } else if let Some(v) = header(line, "Initializer priors") {
                case.priors = parse_list(v).ok_or_else(|| err(format!("bad prior list {v:?}")))?;
                field = Field::None;
            } else if field == Field::NewsText {
                case.news_text.push(' ');
                case.news_text.push_str(line);
            } else {
                return Err(err(format!("unexpected header line {line:?}")));
            }
            continue;
        };
        if let Some((label, v)) = labeled(line, "Thought") {
            iter.steps.push(CaseStep {
                thought_label: label,
                thought: v.to_string(),
                ..CaseStep::default()
            });
            field = Field::Thought;
        } else if let Some((label, v)) = labeled(line, "Action") {
            let step = iter
                .steps
                .last_mut()
                .filter(|s| s.action_label.is_empty())
                .ok_or_else(|| err("action without a preceding thought".into()))?;
            step.action_label = label;
            step.action = v.to_string();
            field = Field::Action;
        } else if let Some((_, v)) = labeled(line, "Observation") {
            let step = iter
                .steps
                .last_mut()
                .filter(|s| !s.action_label.is_empty() && s.observation.is_none())
                .ok_or_else(|| err("observation without a preceding action".into()))?;
            step.observation = Some(v.to_string());
            field = Field::Observation;
        } else if let Some(v) = line.strip_prefix("reward") {
            let v = v.trim_start().strip_prefix('=').map(str::trim);
            let r = v
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|r| (0.0..=1.0).contains(r))
                .ok_or_else(|| err(format!("bad reward line {line:?}")))?;
            iter.reward = Some(r);
            field = Field::None;
        } else {
            let step = iter.steps.last_mut();
            match (field, step) {
                (Field::Thought, Some(s)) => append(&mut s.thought, line),
                (Field::Observation, Some(s)) => {
                    append(s.observation.as_mut().expect("observation open"), line)
                }
                _ => return Err(err(format!("unexpected line {line:?}"))),
            }
        }
    }
    if case.news_text.is_empty() {
        return Err(CaseError::Invalid("missing News Text header".into()));
    }
    Ok(case)
}

fn score_word(reward: f64) -> Result<i64, CaseError> {
    let s = (reward * 10.0).round();
    if (reward * 10.0 - s).abs() > 1e-9 || !(1.0..=10.0).contains(&s) {
        return Err(CaseError::Invalid(format!(
            "reward {reward} is not an evaluator score between 0.1 and 1.0 in steps of 0.1"
        )));
    }
    Ok(s as i64)
}

fn verb_of(action: &str) -> Option<&str> {
    let open = action.find('[')?;
    Some(action[..open].trim())
}

/// Scripted reasoner entries replaying the case for any item id.
///
/// Each printed step becomes one planner completion; each rewarded
/// iteration yields trajectory and confidence replies whose score equals
/// the printed reward, so the combined reward reproduces it for any α.
pub fn case_script(
    case: &CaseTranscript,
    taxonomy: &Taxonomy,
) -> Result<Vec<ScriptEntry>, CaseError> {
    let mut out = Vec::new();
    if !case.priors.is_empty() {
        if case.priors.len() != taxonomy.subtasks.len() {
            return Err(CaseError::Invalid(format!(
                "{} priors for {} subtasks",
                case.priors.len(),
                taxonomy.subtasks.len()
            )));
        }
        let list = case
            .priors
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        out.push(ScriptEntry::new(
            ANY_ITEM,
            Role::Initializer,
            None,
            vec![format!("Thus, the possibility of each source is [{list}]")],
        ));
    }
    for it in &case.iterations {
        if taxonomy.subtask(&it.subtask).is_none() {
            return Err(CaseError::Invalid(format!(
                "iteration {} selects unconfigured subtask {}",
                it.index, it.subtask
            )));
        }
        let sub = Some(it.subtask.as_str());
        for s in &it.steps {
            out.push(ScriptEntry::new(
                ANY_ITEM,
                Role::Planner,
                sub,
                vec![format!(
                    "{}: {}\n{}: {}",
                    s.thought_label, s.thought, s.action_label, s.action
                )],
            ));
        }
        if let Some(r) = it.reward {
            let n = score_word(r)?;
            out.push(ScriptEntry::new(
                ANY_ITEM,
                Role::TrajectoryEvaluator,
                sub,
                vec![format!("Thus the correctness score is {n}")],
            ));
            out.push(ScriptEntry::new(
                ANY_ITEM,
                Role::ConfidenceEvaluator,
                sub,
                vec![format!("Thus the reliability score is {n}")],
            ));
        }
    }
    Ok(out)
}

/// Tool fixtures for every printed observation, valid for any item.
pub fn case_fixtures(case: &CaseTranscript) -> Vec<FixtureRecord> {
    let mut out = Vec::new();
    for s in case.iterations.iter().flat_map(|i| &i.steps) {
        let (Some(obs), Some(verb)) = (&s.observation, verb_of(&s.action)) else {
            continue;
        };
        if let Ok(a) = parse_action(&s.action, &[verb]) {
            if a.is_finish() {
                continue;
            }
            out.push(FixtureRecord {
                verb: a.name,
                argument: a.argument,
                item: None,
                observation: obs.clone(),
            });
        }
    }
    out
}

/// The case's news item; a relative image path is resolved against `base`.
pub fn case_item(
    case: &CaseTranscript,
    id: &str,
    base: &Path,
    taxonomy: &Taxonomy,
) -> Result<NewsItem, CaseError> {
    let mut item = NewsItem::new(id, case.news_text.clone());
    if let Some(img) = &case.image {
        item = item.with_image(base.join(img));
    }
    item.gold_binary = match case
        .binary_label
        .as_deref()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        None => None,
        Some("fake") => Some(Veracity::Fake),
        Some("real") => Some(Veracity::Real),
        Some(other) => return Err(CaseError::Invalid(format!("unknown binary label {other}"))),
    };
    if let Some(m) = &case.multiple_label {
        let key = taxonomy
            .resolve_label(m)
            .ok_or_else(|| CaseError::Invalid(format!("unknown label {m}")))?;
        item.gold_multiclass = Some(key.to_string());
    }
    Ok(item)
}
