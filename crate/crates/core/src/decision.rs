//! Turning subtask outcomes into a verdict: early stop and probabilistic fusion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Polarity, Taxonomy, TrajectoryStep, Veracity};

/// Terminal result of one rollout for one subtask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskOutcome {
    pub subtask: String,
    pub polarity: Polarity,
    /// The Finish argument as produced, or empty when depth ran out.
    pub answer: String,
    pub trajectory_score: f64,
    pub confidence: f64,
    pub reward: f64,
    pub iteration: usize,
    pub trajectory: Vec<TrajectoryStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPath {
    EarlyStop,
    Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub binary: Veracity,
    /// Class key, e.g. `CCD`.
    pub multiclass: String,
    /// Final answer token, e.g. `MISMATCH` or `ORIGINAL`.
    pub answer: String,
    pub p_real: f64,
    /// Fake probability per contributing subtask.
    pub p_fake: BTreeMap<String, f64>,
    pub decision_path: DecisionPath,
    /// False when no subtask produced evidence and the verdict is a default.
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("label {0:?} is not part of the configured label set")]
    UnknownLabel(String),
    #[error("subtask {0:?} is not configured")]
    UnknownSubtask(String),
}

/// Probability that the outcome's source is forged.
pub fn p_fake(outcome: &SubtaskOutcome) -> f64 {
    match outcome.polarity {
        Polarity::Forged => outcome.confidence,
        Polarity::Authentic | Polarity::Unconfirmed => 1.0 - outcome.confidence,
    }
}

fn fake_verdict(
    taxonomy: &Taxonomy,
    subtask: &str,
    p_real: f64,
    p_fake: BTreeMap<String, f64>,
    path: DecisionPath,
) -> Result<Verdict, DecisionError> {
    let spec = taxonomy
        .subtask(subtask)
        .ok_or_else(|| DecisionError::UnknownSubtask(subtask.to_string()))?;
    Ok(Verdict {
        binary: Veracity::Fake,
        multiclass: spec.class.clone(),
        answer: spec.forged_token.clone(),
        p_real,
        p_fake,
        decision_path: path,
        reliable: true,
    })
}

/// A Fake verdict when a forged answer arrives with confidence at least `tau_early`.
pub fn early_stop(
    outcome: &SubtaskOutcome,
    tau_early: f64,
    taxonomy: &Taxonomy,
) -> Result<Option<Verdict>, DecisionError> {
    if outcome.polarity != Polarity::Forged || outcome.confidence < tau_early {
        return Ok(None);
    }
    let p = BTreeMap::from([(outcome.subtask.clone(), outcome.confidence)]);
    fake_verdict(
        taxonomy,
        &outcome.subtask,
        1.0 - outcome.confidence,
        p,
        DecisionPath::EarlyStop,
    )
    .map(Some)
}

/// Fuses confirmed outcomes: `p_real` is the geometric mean of the
/// complements of the fake probabilities and the verdict is the argmax over
/// `p_real` and each `p_fake`. Ties go to Real, then to configured subtask order.
///
/// Unconfirmed outcomes are ignored. With nothing left the item is reported
/// Real with `reliable = false`.
pub fn fuse(outcomes: &[SubtaskOutcome], taxonomy: &Taxonomy) -> Result<Verdict, DecisionError> {
    let mut confirmed: Vec<(usize, &SubtaskOutcome)> = Vec::new();
    for o in outcomes
        .iter()
        .filter(|o| o.polarity != Polarity::Unconfirmed)
    {
        let idx = taxonomy
            .subtask_index(&o.subtask)
            .ok_or_else(|| DecisionError::UnknownSubtask(o.subtask.clone()))?;
        confirmed.push((idx, o));
    }
    // fixed order keeps the floating-point product independent of input order
    confirmed.sort_by_key(|(i, _)| *i);

    if confirmed.is_empty() {
        log::warn!("no confirmed subtask outcome; defaulting to Real");
        return Ok(Verdict {
            binary: Veracity::Real,
            multiclass: taxonomy.real.key.clone(),
            answer: taxonomy.real_token.clone(),
            p_real: 1.0,
            p_fake: BTreeMap::new(),
            decision_path: DecisionPath::Fusion,
            reliable: false,
        });
    }

    let n = confirmed.len() as f64;
    let probs: Vec<(&str, f64)> = confirmed
        .iter()
        .map(|(_, o)| (o.subtask.as_str(), p_fake(o)))
        .collect();
    let product: f64 = probs.iter().map(|(_, p)| 1.0 - p).product();
    let p_real = product.powf(1.0 / n);
    let map: BTreeMap<String, f64> = probs.iter().map(|(s, p)| (s.to_string(), *p)).collect();

    let mut best: Option<&str> = None;
    let mut best_p = p_real;
    for (s, p) in &probs {
        if *p > best_p {
            best = Some(s);
            best_p = *p;
        }
    }
    match best {
        None => Ok(Verdict {
            binary: Veracity::Real,
            multiclass: taxonomy.real.key.clone(),
            answer: taxonomy.real_token.clone(),
            p_real,
            p_fake: map,
            decision_path: DecisionPath::Fusion,
            reliable: true,
        }),
        Some(s) => fake_verdict(taxonomy, s, p_real, map, DecisionPath::Fusion),
    }
}

/// Benchmark label string for the verdict's class, e.g. `Mismatch`.
pub fn to_benchmark_label(verdict: &Verdict, taxonomy: &Taxonomy) -> Result<String, DecisionError> {
    taxonomy
        .class(&verdict.multiclass)
        .map(|c| c.label.clone())
        .ok_or_else(|| DecisionError::UnknownLabel(verdict.multiclass.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(subtask: &str, polarity: Polarity, confidence: f64) -> SubtaskOutcome {
        SubtaskOutcome {
            subtask: subtask.into(),
            polarity,
            answer: String::new(),
            trajectory_score: confidence,
            confidence,
            reward: confidence,
            iteration: 0,
            trajectory: vec![],
        }
    }

    #[test]
    fn worked_fusion_case() {
        let tax = Taxonomy::mmfakebench();
        let v = fuse(
            &[
                outcome("text", Polarity::Authentic, 0.8),
                outcome("match", Polarity::Forged, 0.8),
            ],
            &tax,
        )
        .unwrap();
        assert!((v.p_real - 0.4).abs() < 1e-12);
        assert_eq!(v.binary, Veracity::Fake);
        assert_eq!(v.multiclass, "CCD");
        assert_eq!(v.answer, "MISMATCH");
        assert_eq!(to_benchmark_label(&v, &tax).unwrap(), "Mismatch");
    }

    #[test]
    fn certainty_and_agreement_are_real() {
        let tax = Taxonomy::mmfakebench();
        let v = fuse(&[outcome("text", Polarity::Authentic, 1.0)], &tax).unwrap();
        assert_eq!((v.p_real, v.binary), (1.0, Veracity::Real));
        let v = fuse(
            &[
                outcome("text", Polarity::Authentic, 0.9),
                outcome("image", Polarity::Authentic, 0.9),
            ],
            &tax,
        )
        .unwrap();
        assert!((v.p_real - 0.9).abs() < 1e-12);
        assert_eq!(v.answer, "ORIGINAL");
        assert_eq!(to_benchmark_label(&v, &tax).unwrap(), "Real");
    }

    #[test]
    fn ties_favor_real_then_configured_order() {
        let tax = Taxonomy::mmfakebench();
        let v = fuse(&[outcome("text", Polarity::Forged, 0.5)], &tax).unwrap();
        assert_eq!(v.binary, Veracity::Real);
        let v = fuse(
            &[
                outcome("match", Polarity::Forged, 1.0),
                outcome("text", Polarity::Forged, 1.0),
            ],
            &tax,
        )
        .unwrap();
        assert_eq!(v.multiclass, "TVD");
    }

    #[test]
    fn unconfirmed_outcomes_are_excluded() {
        let tax = Taxonomy::mmfakebench();
        let v = fuse(&[outcome("image", Polarity::Unconfirmed, 0.0)], &tax).unwrap();
        assert!(!v.reliable);
        assert_eq!(v.binary, Veracity::Real);
        let v = fuse(
            &[
                outcome("image", Polarity::Unconfirmed, 0.0),
                outcome("text", Polarity::Forged, 0.9),
            ],
            &tax,
        )
        .unwrap();
        assert_eq!(v.p_fake.len(), 1);
        assert_eq!(v.multiclass, "TVD");
    }

    #[test]
    fn early_stop_rule() {
        let tax = Taxonomy::mmfakebench();
        let v = early_stop(&outcome("match", Polarity::Forged, 0.8), 0.8, &tax)
            .unwrap()
            .unwrap();
        assert_eq!((v.binary, v.multiclass.as_str()), (Veracity::Fake, "CCD"));
        assert_eq!(v.decision_path, DecisionPath::EarlyStop);
        assert!(
            early_stop(&outcome("text", Polarity::Forged, 0.7), 0.8, &tax)
                .unwrap()
                .is_none()
        );
        assert!(
            early_stop(&outcome("text", Polarity::Authentic, 1.0), 0.8, &tax)
                .unwrap()
                .is_none()
        );
    }

    #[test]
    fn p_fake_cases() {
        assert_eq!(p_fake(&outcome("text", Polarity::Forged, 0.8)), 0.8);
        assert!((p_fake(&outcome("text", Polarity::Authentic, 0.8)) - 0.2).abs() < 1e-15);
        assert_eq!(p_fake(&outcome("text", Polarity::Authentic, 1.0)), 0.0);
    }
}
