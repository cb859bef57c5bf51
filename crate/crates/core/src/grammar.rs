//! The `Verb[argument]` action language plus the small parsers that read
//! planner, evaluator and initializer completions.

use thiserror::Error;

use crate::domain::Action;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("malformed action {0:?}")]
    MalformedAction(String),
    #[error("verb {verb:?} is not available here")]
    UnknownVerb { verb: String },
}

/// Parses `Verb[argument]`.
///
/// The verb is matched case-insensitively against `allowed_verbs` and
/// returned in its registered spelling. The argument runs from the first `[`
/// to the last `]`, so nested brackets survive verbatim. Anything after the
/// closing bracket is ignored.
pub fn parse_action<S: AsRef<str>>(raw: &str, allowed_verbs: &[S]) -> Result<Action, ActionError> {
    let line = raw.trim();
    let malformed = || ActionError::MalformedAction(raw.to_string());
    let open = line.find('[').ok_or_else(malformed)?;
    let close = line.rfind(']').ok_or_else(malformed)?;
    if close < open {
        return Err(malformed());
    }
    let verb = line[..open].trim_end();
    if !is_identifier(verb) {
        return Err(malformed());
    }
    let argument = &line[open + 1..close];
    let canonical = allowed_verbs
        .iter()
        .map(AsRef::as_ref)
        .find(|v| v.eq_ignore_ascii_case(verb))
        .ok_or_else(|| ActionError::UnknownVerb {
            verb: verb.to_string(),
        })?;
    Ok(Action::new(canonical, argument))
}

pub fn render_action(action: &Action) -> String {
    action.to_string()
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// A thought and its raw action line, as split out of one planner completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerUtterance {
    pub thought_text: String,
    pub action_text: String,
}

/// Splits a planner completion into thought and action.
///
/// Looks for the first `Action[ n]:` line and the last `Thought[ n]:` block
/// before it. Without an action label the last non-empty line is taken as
/// the action and the text before it as the thought. Never fails.
pub fn parse_planner_completion(raw: &str) -> PlannerUtterance {
    let lines: Vec<&str> = raw.lines().collect();
    let action_at = lines.iter().position(|l| labelled(l, "action").is_some());
    match action_at {
        Some(i) => {
            let action_text = labelled(lines[i], "action")
                .unwrap_or_default()
                .trim()
                .to_string();
            let thought_start = lines[..i]
                .iter()
                .rposition(|l| labelled(l, "thought").is_some());
            let thought_text = match thought_start {
                Some(t) => {
                    let mut parts = vec![labelled(lines[t], "thought").unwrap_or_default()];
                    parts.extend(lines[t + 1..i].iter().copied());
                    join_trimmed(&parts)
                }
                None => join_trimmed(&lines[..i]),
            };
            PlannerUtterance {
                thought_text,
                action_text,
            }
        }
        None => {
            let last = lines.iter().rposition(|l| !l.trim().is_empty());
            match last {
                Some(i) => {
                    let head: Vec<&str> = lines[..i]
                        .iter()
                        .map(|l| labelled(l, "thought").unwrap_or(l))
                        .collect();
                    PlannerUtterance {
                        thought_text: join_trimmed(&head),
                        action_text: lines[i].trim().to_string(),
                    }
                }
                None => PlannerUtterance {
                    thought_text: String::new(),
                    action_text: String::new(),
                },
            }
        }
    }
}

fn join_trimmed(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Returns the text after `Label[ digits]:` when `line` starts with that label.
fn labelled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let s = line.trim_start();
    let head = s.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = s[label.len()..].trim_start_matches(|c: char| c.is_ascii_digit() || c == ' ');
    rest.strip_prefix(':')
}

/// Result of reading the initializer's probability list.
#[derive(Debug, Clone, PartialEq)]
pub struct InitDistribution {
    pub weights: Vec<f64>,
    /// No usable list was found; `weights` is uniform.
    pub fallback: bool,
    /// At least one value was clamped into `[0, 1]`.
    pub clamped: bool,
}

/// Extracts the trailing `[p1, ..., pk]` list from an initializer completion.
///
/// Bracketed spans are tried from the end of the text backwards; the first
/// one holding exactly `k` finite numbers wins. Falls back to the uniform
/// vector when none does.
pub fn parse_init_distribution(raw: &str, k: usize) -> InitDistribution {
    assert!(k > 0, "at least one subtask is required");
    let mut end = raw.len();
    while let Some(close) = raw[..end].rfind(']') {
        if let Some(open) = raw[..close].rfind('[') {
            if let Some(values) = parse_number_list(&raw[open + 1..close], k) {
                let clamped = values.iter().any(|v| !(0.0..=1.0).contains(v));
                return InitDistribution {
                    weights: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                    fallback: false,
                    clamped,
                };
            }
        }
        end = close;
    }
    InitDistribution {
        weights: vec![1.0 / k as f64; k],
        fallback: true,
        clamped: false,
    }
}

fn parse_number_list(inner: &str, k: usize) -> Option<Vec<f64>> {
    let values: Vec<f64> = inner
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()?;
    (values.len() == k).then_some(values)
}

pub const CORRECTNESS_MARKER: &str = "correctness score is";
pub const RELIABILITY_MARKER: &str = "reliability score is";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("marker {0:?} not found")]
    MissingMarker(String),
    #[error("no integer after marker {0:?}")]
    NonIntegerScore(String),
}

/// Reads the integer following the last occurrence of `marker` (ASCII case-insensitive).
pub fn parse_score(raw: &str, marker: &str) -> Result<i64, ScoreError> {
    let hay = raw.to_ascii_lowercase();
    let needle = marker.to_ascii_lowercase();
    let at = hay
        .rfind(&needle)
        .ok_or_else(|| ScoreError::MissingMarker(marker.to_string()))?;
    let rest = raw[at + needle.len()..].trim_start();
    let rest = rest.strip_prefix('{').unwrap_or(rest).trim_start();
    let digits: &str = {
        let end = rest
            .char_indices()
            .find(|(_, c)| !c.is_ascii_digit())
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        &rest[..end]
    };
    digits
        .parse::<i64>()
        .map_err(|_| ScoreError::NonIntegerScore(marker.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TEXT_VERBS: &[&str] = &["Wikipedia", "Google", "Finish"];

    #[test]
    fn parses_transcript_actions() {
        let a = parse_action("Finish[TEXT SUPPORT]", TEXT_VERBS).unwrap();
        assert_eq!(a, Action::new("Finish", "TEXT SUPPORT"));
        let a = parse_action("Google[Andy Murray vs YenHsun Lu match result]", TEXT_VERBS).unwrap();
        assert_eq!(a.argument, "Andy Murray vs YenHsun Lu match result");
        let a = parse_action("Detect[\"image.jpg\"]", &["Detect"]).unwrap();
        assert_eq!(a.argument, "\"image.jpg\"");
    }

    #[test]
    fn rejects_bad_actions() {
        assert!(matches!(
            parse_action("Detect", &["Detect"]),
            Err(ActionError::MalformedAction(_))
        ));
        assert!(matches!(
            parse_action("[x]", &["Detect"]),
            Err(ActionError::MalformedAction(_))
        ));
        assert!(matches!(
            parse_action("Detect]x[", &["Detect"]),
            Err(ActionError::MalformedAction(_))
        ));
        assert_eq!(
            parse_action("VQA[what?]", TEXT_VERBS),
            Err(ActionError::UnknownVerb { verb: "VQA".into() })
        );
    }

    #[test]
    fn nested_brackets_kept() {
        let a = parse_action("Google[list [a] and [b]]", TEXT_VERBS).unwrap();
        assert_eq!(a.argument, "list [a] and [b]");
    }

    #[test]
    fn verb_case_is_normalised() {
        let a = parse_action("google[x]", TEXT_VERBS).unwrap();
        assert_eq!(a.name, "Google");
    }

    #[test]
    fn planner_completion_split() {
        let u = parse_planner_completion(
            "Thought 2: The image shows a rally.\nIt lacks a ship.\nAction 2: Finish[MISMATCH]\nObservation 2: junk",
        );
        assert_eq!(u.thought_text, "The image shows a rally. It lacks a ship.");
        assert_eq!(u.action_text, "Finish[MISMATCH]");
        let u = parse_planner_completion("just thinking\nVQA[what]");
        assert_eq!(u.thought_text, "just thinking");
        assert_eq!(u.action_text, "VQA[what]");
        let u = parse_planner_completion("");
        assert_eq!(u.action_text, "");
    }

    #[test]
    fn init_distribution_examples() {
        let d = parse_init_distribution("Thus, the possibility of A, B, C are [0.2,0.1,0.7]", 3);
        assert_eq!(d.weights, vec![0.2, 0.1, 0.7]);
        assert!(!d.fallback && !d.clamped);

        let d = parse_init_distribution("no idea", 3);
        assert_eq!(d.weights, vec![1.0 / 3.0; 3]);
        assert!(d.fallback);

        let d = parse_init_distribution("are [1.4,-0.2,0.5]", 3);
        assert_eq!(d.weights, vec![1.0, 0.0, 0.5]);
        assert!(d.clamped && !d.fallback);

        let d = parse_init_distribution("the two are [0.9, 0.4] and trailing [x]", 2);
        assert_eq!(d.weights, vec![0.9, 0.4]);

        // wrong arity falls back
        let d = parse_init_distribution("[0.5,0.5]", 3);
        assert!(d.fallback);
    }

    #[test]
    fn score_examples() {
        assert_eq!(
            parse_score("...Thus the correctness score is 8", CORRECTNESS_MARKER),
            Ok(8)
        );
        assert_eq!(
            parse_score("Thus the reliability score is 10.", RELIABILITY_MARKER),
            Ok(10)
        );
        assert_eq!(
            parse_score("no marker here", CORRECTNESS_MARKER),
            Err(ScoreError::MissingMarker(CORRECTNESS_MARKER.into()))
        );
        assert_eq!(
            parse_score("correctness score is high", CORRECTNESS_MARKER),
            Err(ScoreError::NonIntegerScore(CORRECTNESS_MARKER.into()))
        );
        // last occurrence wins
        assert_eq!(
            parse_score(
                "correctness score is 2 ... Thus the Correctness Score is {7}",
                CORRECTNESS_MARKER
            ),
            Ok(7)
        );
    }

    proptest! {
        #[test]
        fn action_round_trip(verb in "[A-Z][A-Za-z]{0,10}", arg in "[^\\]\\n]{0,40}") {
            let s = format!("{verb}[{arg}]");
            let a = parse_action(&s, &[verb.as_str()]).unwrap();
            prop_assert_eq!(render_action(&a), s);
        }

        #[test]
        fn parsers_never_panic(s in "\\PC{0,200}") {
            let _ = parse_action(&s, &["Google", "Finish"]);
            let _ = parse_planner_completion(&s);
            let _ = parse_init_distribution(&s, 3);
            let _ = parse_score(&s, CORRECTNESS_MARKER);
        }
    }
}
