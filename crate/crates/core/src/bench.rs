//! Corpus loading, metrics, cost accounting and corpus runs.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use num_rational::Ratio;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{DecisionPath, Verdict};
use crate::domain::{NewsItem, Taxonomy, Veracity};
use crate::reasoner::{Phase, UsageLedger};
use crate::search::{Engine, EngineError};

/// One corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_binary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_multiclass: Option<String>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::ParseError { line, .. }
            | CorpusError::DuplicateId { line, .. }
            | CorpusError::UnknownLabel { line, .. } => Some(*line),
            CorpusError::Io(_) => None,
        }
    }
}

fn parse_binary(s: &str) -> Option<Veracity> {
    match s.trim().to_ascii_lowercase().as_str() {
        "real" | "true" | "original" => Some(Veracity::Real),
        "fake" | "false" => Some(Veracity::Fake),
        _ => None,
    }
}

/// Converts one corpus line into a news item; image paths resolve against `base`.
pub fn parse_corpus_line(
    line: &str,
    lineno: usize,
    base: &Path,
    taxonomy: &Taxonomy,
) -> Result<NewsItem, CorpusError> {
    let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| CorpusError::ParseError {
        line: lineno,
        message: e.to_string(),
    })?;
    if rec.id.is_empty() || rec.text.trim().is_empty() {
        return Err(CorpusError::ParseError {
            line: lineno,
            message: "id and text must be non-empty".into(),
        });
    }
    let unknown = |label: &str| CorpusError::UnknownLabel {
        line: lineno,
        label: label.to_string(),
    };
    let multiclass = match &rec.label_multiclass {
        Some(l) => Some(
            taxonomy
                .resolve_label(l)
                .ok_or_else(|| unknown(l))?
                .to_string(),
        ),
        None => None,
    };
    let mut binary = match &rec.label_binary {
        Some(l) => Some(parse_binary(l).ok_or_else(|| unknown(l))?),
        None => None,
    };
    if let Some(m) = &multiclass {
        let derived = if *m == taxonomy.real.key {
            Veracity::Real
        } else {
            Veracity::Fake
        };
        match binary {
            Some(b) if b != derived => {
                return Err(CorpusError::ParseError {
                    line: lineno,
                    message: format!("binary label {b} contradicts class {m}"),
                })
            }
            _ => binary = Some(derived),
        }
    }
    let mut item = NewsItem::new(rec.id, rec.text);
    if let Some(p) = rec.image_path {
        item = item.with_image(base.join(p));
    }
    item.gold_binary = binary;
    item.gold_multiclass = multiclass;
    Ok(item)
}

/// Reads a JSONL corpus. Blank lines are skipped; an empty file yields an empty corpus.
pub fn load_corpus(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<NewsItem>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_corpus(&text, base, taxonomy)
}

pub fn parse_corpus(
    text: &str,
    base: &Path,
    taxonomy: &Taxonomy,
) -> Result<Vec<NewsItem>, CorpusError> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_corpus_line(line, i + 1, base, taxonomy)?;
        if !seen.insert(item.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: i + 1,
                id: item.id,
            });
        }
        items.push(item);
    }
    if items.is_empty() {
        log::warn!("corpus is empty");
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{predictions} predictions for {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// The class occurs in neither predictions nor golds; its F1 is 0 by convention.
    pub absent: bool,
}

/// `confusion[g][p]` counts items of gold class `g` predicted as `p`.
pub fn confusion_matrix<S: AsRef<str>>(
    predictions: &[S],
    golds: &[S],
    classes: &[String],
) -> Result<Vec<Vec<u64>>, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let idx = |s: &str| classes.iter().position(|c| c == s);
    let mut m = vec![vec![0u64; classes.len()]; classes.len()];
    for (p, g) in predictions.iter().zip(golds) {
        if let (Some(pi), Some(gi)) = (idx(p.as_ref()), idx(g.as_ref())) {
            m[gi][pi] += 1;
        }
    }
    Ok(m)
}

/// Per-class precision, recall and F1 from a confusion matrix.
pub fn class_metrics(confusion: &[Vec<u64>], classes: &[String]) -> Vec<ClassMetrics> {
    let k = classes.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: u64 = (0..k).map(|g| confusion[g][c]).sum();
            let support: u64 = confusion[c].iter().sum();
            let precision = if predicted == 0 {
                0.0
            } else {
                tp / predicted as f64
            };
            let recall = if support == 0 {
                0.0
            } else {
                tp / support as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class: classes[c].clone(),
                precision,
                recall,
                f1,
                support,
                absent: predicted == 0 && support == 0,
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1. Absent classes count as 0 and are logged.
pub fn macro_f1<S: AsRef<str>>(
    predictions: &[S],
    golds: &[S],
    classes: &[String],
) -> Result<f64, MetricsError> {
    let m = confusion_matrix(predictions, golds, classes)?;
    Ok(macro_f1_from_confusion(&m, classes))
}

pub fn macro_f1_from_confusion(confusion: &[Vec<u64>], classes: &[String]) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    let per = class_metrics(confusion, classes);
    for c in per.iter().filter(|c| c.absent) {
        log::warn!(
            "class {} absent from predictions and golds; counted as F1 = 0",
            c.class
        );
    }
    per.iter().map(|c| c.f1).sum::<f64>() / classes.len() as f64
}

/// Exact token price per model, as decimal strings in currency units per million tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPrice {
    pub input_per_million: String,
    pub output_per_million: String,
}

pub type Money = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("no price for model {0:?}")]
    UnknownModel(String),
    #[error("bad price {0:?}: expected a non-negative decimal such as 2.50")]
    BadPrice(String),
}

/// Parses a non-negative decimal (`12`, `0.15`, `2.5e-1` is not accepted) exactly.
pub fn parse_decimal(s: &str) -> Result<Money, CostError> {
    let bad = || CostError::BadPrice(s.to_string());
    let t = s.trim();
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    if (int.is_empty() && frac.is_empty())
        || !int.chars().all(|c| c.is_ascii_digit())
        || !frac.chars().all(|c| c.is_ascii_digit())
        || frac.len() > 18
    {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let numer: i128 = if digits.is_empty() {
        0
    } else {
        digits.parse().map_err(|_| bad())?
    };
    Ok(Money::new(numer, 10i128.pow(frac.len() as u32)))
}

/// Per-token rates, derived exactly from per-million prices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rates {
    pub input: Money,
    pub output: Money,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PriceTable {
    rates: BTreeMap<String, Rates>,
}

impl PriceTable {
    pub fn from_prices(prices: &BTreeMap<String, ModelPrice>) -> Result<Self, CostError> {
        let million = Money::from_integer(1_000_000);
        let mut rates = BTreeMap::new();
        for (model, p) in prices {
            rates.insert(
                model.clone(),
                Rates {
                    input: parse_decimal(&p.input_per_million)? / million,
                    output: parse_decimal(&p.output_per_million)? / million,
                },
            );
        }
        Ok(Self { rates })
    }

    pub fn insert(&mut self, model: impl Into<String>, rates: Rates) {
        self.rates.insert(model.into(), rates);
    }

    pub fn rates(&self, model: &str) -> Option<&Rates> {
        self.rates.get(model)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostLine {
    pub model: String,
    pub phase: Phase,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(serialize_with = "ser_money")]
    pub cost: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub lines: Vec<CostLine>,
    #[serde(serialize_with = "ser_money_map")]
    pub per_model: BTreeMap<String, Money>,
    #[serde(serialize_with = "ser_money")]
    pub total: Money,
}

/// Exact fraction plus a rounded decimal for people.
fn money_repr(m: &Money) -> serde_json::Value {
    serde_json::json!({"exact": m.to_string(), "approx": format_money(m, 6)})
}

fn ser_money<S: serde::Serializer>(m: &Money, s: S) -> Result<S::Ok, S::Error> {
    money_repr(m).serialize(s)
}

fn ser_money_map<S: serde::Serializer>(
    m: &BTreeMap<String, Money>,
    s: S,
) -> Result<S::Ok, S::Error> {
    let v: BTreeMap<&String, serde_json::Value> =
        m.iter().map(|(k, v)| (k, money_repr(v))).collect();
    v.serialize(s)
}

/// Decimal rendering rounded half-up to `places` digits.
pub fn format_money(m: &Money, places: u32) -> String {
    let scale = 10i128.pow(places);
    let scaled = (m * Money::from_integer(scale) + Money::new(1, 2))
        .floor()
        .to_integer();
    let (int, frac) = (scaled / scale, scaled % scale);
    format!("{int}.{frac:0width$}", width = places as usize)
}

/// Prices every (model, phase) entry of the ledger.
pub fn cost_report(usage: &UsageLedger, prices: &PriceTable) -> Result<CostReport, CostError> {
    let mut lines = Vec::new();
    let mut per_model: BTreeMap<String, Money> = BTreeMap::new();
    let mut total = Money::zero();
    for e in usage.entries() {
        let r = prices
            .rates(&e.model)
            .ok_or_else(|| CostError::UnknownModel(e.model.clone()))?;
        let cost = r.input * Money::from_integer(e.counts.input_tokens as i128)
            + r.output * Money::from_integer(e.counts.output_tokens as i128);
        *per_model.entry(e.model.clone()).or_insert_with(Money::zero) += cost;
        total += cost;
        lines.push(CostLine {
            model: e.model,
            phase: e.phase,
            input_tokens: e.counts.input_tokens,
            output_tokens: e.counts.output_tokens,
            cost,
        });
    }
    Ok(CostReport {
        lines,
        per_model,
        total,
    })
}

/// One output line per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary: Option<Veracity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiclass: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_real: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub p_fake: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_path: Option<DecisionPath>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub reliable: bool,
    pub iterations: usize,
    pub usage: UsageLedger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl VerdictRecord {
    pub fn from_verdict(
        id: &str,
        v: &Verdict,
        label: String,
        iterations: usize,
        usage: UsageLedger,
    ) -> Self {
        Self {
            id: id.to_string(),
            binary: Some(v.binary),
            multiclass: Some(v.multiclass.clone()),
            label: Some(label),
            answer: Some(v.answer.clone()),
            p_real: Some(v.p_real),
            p_fake: v.p_fake.clone(),
            decision_path: Some(v.decision_path),
            reliable: v.reliable,
            iterations,
            usage,
            error: None,
        }
    }

    pub fn errored(id: &str, error: String) -> Self {
        Self {
            id: id.to_string(),
            binary: None,
            multiclass: None,
            label: None,
            answer: None,
            p_real: None,
            p_fake: BTreeMap::new(),
            decision_path: None,
            reliable: true,
            iterations: 0,
            usage: UsageLedger::default(),
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub items: usize,
    /// Items with a verdict and a gold class.
    pub scored: usize,
    pub errored: usize,
    pub unlabeled: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub binary_accuracy: f64,
    pub classes: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
    pub mean_iterations: f64,
    pub usage: UsageLedger,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostReport>,
}

impl MetricsReport {
    /// Plain-text table for terminals.
    pub fn render_table(&self, taxonomy: &Taxonomy) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "items {}  scored {}  errored {}  unlabeled {}",
            self.items, self.scored, self.errored, self.unlabeled
        );
        let _ = writeln!(s, "accuracy        {:.3}", self.accuracy);
        let _ = writeln!(s, "macro-F1        {:.3}", self.macro_f1);
        let _ = writeln!(s, "binary accuracy {:.3}", self.binary_accuracy);
        let _ = writeln!(s, "iterations      {:.2}", self.mean_iterations);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<32} {:>9} {:>9} {:>9} {:>7}",
            "class", "precision", "recall", "F1", "support"
        );
        for c in &self.per_class {
            let label = taxonomy
                .class(&c.class)
                .map(|x| x.label.as_str())
                .unwrap_or(&c.class);
            let flag = if c.absent { " (absent)" } else { "" };
            let _ = writeln!(
                s,
                "{:<32} {:>9.3} {:>9.3} {:>9.3} {:>7}{flag}",
                label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "confusion (rows gold, columns predicted): {}",
            self.classes.join(" ")
        );
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            let _ = writeln!(s, "{c:<6}{}", cells.join(""));
        }
        let t = self.usage.total();
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "usage: {} calls, {} input tokens, {} output tokens",
            t.calls, t.input_tokens, t.output_tokens
        );
        if let Some(cost) = &self.cost {
            for (m, v) in &cost.per_model {
                let _ = writeln!(s, "cost {m}: {}", format_money(v, 6));
            }
            let _ = writeln!(s, "cost total: {}", format_money(&cost.total, 6));
        }
        s
    }
}

/// Metrics over verdict records aligned with `items`.
pub fn compute_metrics(
    items: &[NewsItem],
    records: &[VerdictRecord],
    taxonomy: &Taxonomy,
    prices: Option<&PriceTable>,
) -> Result<MetricsReport, CostError> {
    let classes = taxonomy.class_keys();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut bin_ok = 0usize;
    let mut bin_n = 0usize;
    let mut errored = 0;
    let mut unlabeled = 0;
    let mut iters = 0usize;
    let mut iter_n = 0usize;
    let mut usage = UsageLedger::default();
    for (item, rec) in items.iter().zip(records) {
        usage.merge(&rec.usage);
        if rec.error.is_some() {
            errored += 1;
            continue;
        }
        iters += rec.iterations;
        iter_n += 1;
        if let (Some(g), Some(p)) = (&item.gold_binary, rec.binary) {
            bin_n += 1;
            bin_ok += usize::from(*g == p);
        }
        match (&item.gold_multiclass, &rec.multiclass) {
            (Some(g), Some(p)) => {
                golds.push(g.clone());
                preds.push(p.clone());
            }
            _ => unlabeled += 1,
        }
    }
    let confusion = confusion_matrix(&preds, &golds, &classes).expect("aligned by construction");
    let correct: u64 = (0..classes.len()).map(|i| confusion[i][i]).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let cost = prices.map(|p| cost_report(&usage, p)).transpose()?;
    Ok(MetricsReport {
        items: items.len(),
        scored: golds.len(),
        errored,
        unlabeled,
        accuracy: ratio(correct as usize, golds.len()),
        macro_f1: if golds.is_empty() {
            0.0
        } else {
            macro_f1_from_confusion(&confusion, &classes)
        },
        binary_accuracy: ratio(bin_ok, bin_n),
        per_class: class_metrics(&confusion, &classes),
        classes,
        confusion,
        mean_iterations: ratio(iters, iter_n),
        usage,
        cost,
    })
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Result of a corpus run.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub records: Vec<VerdictRecord>,
    pub report: MetricsReport,
    /// First replay miss, if any item hit one. Replays are expected to be complete.
    pub replay_miss: Option<String>,
}

/// Runs one episode per item on up to `parallelism` workers and aggregates in item order.
///
/// Engine failures mark the item errored and the run continues.
pub fn run_benchmark(
    engine: &Engine,
    items: &[NewsItem],
    parallelism: usize,
    prices: Option<&PriceTable>,
) -> Result<BenchRun, BenchError> {
    let run_one = |item: &NewsItem| -> (VerdictRecord, Option<EngineError>) {
        match engine.run_episode(item) {
            Ok(ep) => (
                VerdictRecord::from_verdict(
                    &item.id,
                    &ep.verdict,
                    ep.label,
                    ep.iterations,
                    ep.usage,
                ),
                None,
            ),
            Err(e) => {
                log::error!("item {}: {e}", item.id);
                (VerdictRecord::errored(&item.id, e.to_string()), Some(e))
            }
        }
    };
    let results: Vec<(VerdictRecord, Option<EngineError>)> = if parallelism <= 1 {
        items.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| BenchError::Pool(e.to_string()))?;
        pool.install(|| items.par_iter().map(run_one).collect())
    };
    let replay_miss = results.iter().find_map(|(_, e)| match e {
        Some(EngineError::Reasoner(r @ crate::reasoner::ReasonerError::ReplayMiss { .. })) => {
            Some(r.to_string())
        }
        _ => None,
    });
    let records: Vec<VerdictRecord> = results.into_iter().map(|(r, _)| r).collect();
    let report = compute_metrics(items, &records, engine.taxonomy(), prices)?;
    Ok(BenchRun {
        records,
        report,
        replay_miss,
    })
}

pub fn records_to_jsonl(records: &[VerdictRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("verdict record serializes"));
        out.push('\n');
    }
    out
}
