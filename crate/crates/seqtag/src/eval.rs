//! Token accuracy (POS), CoNLL-style span-based micro precision/recall/F1
//! (NER), and cross-validation aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::validate_bio2;
use crate::error::{Error, Result};

/// A typed entity mention: `(type, start, inclusive end)` in token indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub ty: String,
    pub start: usize,
    pub end: usize,
}

pub type SpanSet = BTreeSet<Span>;

/// Matching tokens over total tokens, sentence lengths checked pairwise.
pub fn token_accuracy<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "sentence count mismatch: {} gold vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Data(format!(
                "sentence {i}: length mismatch ({} gold vs {} predicted tokens)",
                g.len(),
                p.len()
            )));
        }
        total += g.len();
        correct += g.iter().zip(p).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
    }
    if total == 0 {
        return Err(Error::Data("token accuracy over an empty corpus is undefined".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Extract maximal `B-X (I-X)*` runs as spans. An `I-X` without a compatible
/// predecessor starts a new span (lenient mode, the standard conlleval
/// behavior).
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> Result<SpanSet> {
    let mut spans = SpanSet::new();
    let mut open: Option<(String, usize)> = None;
    for (i, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        let (kind, ty) = if label == "O" {
            ('O', "")
        } else if let Some(ty) = label.strip_prefix("B-").filter(|t| !t.is_empty()) {
            ('B', ty)
        } else if let Some(ty) = label.strip_prefix("I-").filter(|t| !t.is_empty()) {
            ('I', ty)
        } else {
            return Err(Error::Data(format!(
                "malformed BIO2 label {label:?} at index {i} (expected O, B-X, or I-X)"
            )));
        };
        match kind {
            'O' => {
                if let Some((ty, start)) = open.take() {
                    spans.insert(Span { ty, start, end: i - 1 });
                }
            }
            'B' => {
                if let Some((pty, start)) = open.take() {
                    spans.insert(Span { ty: pty, start, end: i - 1 });
                }
                open = Some((ty.to_string(), i));
            }
            _ => match &open {
                Some((pty, _)) if pty == ty => {} // continues the open span
                _ => {
                    // lenient: an orphan I-X starts a new span
                    if let Some((pty, start)) = open.take() {
                        spans.insert(Span { ty: pty, start, end: i - 1 });
                    }
                    open = Some((ty.to_string(), i));
                }
            },
        }
    }
    if let Some((ty, start)) = open {
        spans.insert(Span { ty, start, end: labels.len() - 1 });
    }
    Ok(spans)
}

/// Rebuild a BIO2 label sequence from a span set (test and fixture helper).
pub fn spans_to_bio2(spans: &SpanSet, len: usize) -> Vec<String> {
    let mut labels = vec!["O".to_string(); len];
    for s in spans {
        labels[s.start] = format!("B-{}", s.ty);
        for i in s.start + 1..=s.end {
            labels[i] = format!("I-{}", s.ty);
        }
    }
    labels
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PrfCounts {
    pub gold: usize,
    pub pred: usize,
    pub correct: usize,
}

impl PrfCounts {
    pub fn precision(&self) -> f64 {
        if self.pred == 0 {
            0.0
        } else {
            self.correct as f64 / self.pred as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.correct as f64 / self.gold as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Micro P/R/F1 over pooled span counts, with a per-type breakdown.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: PrfCounts,
    pub per_type: BTreeMap<String, PrfCounts>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A predicted span is correct iff type, start and end all match a gold
/// span; counts pool over all sentences and types.
pub fn span_micro_prf(gold: &[SpanSet], pred: &[SpanSet]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "sentence count mismatch: {} gold vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut per_type: BTreeMap<String, PrfCounts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        for s in g {
            per_type.entry(s.ty.clone()).or_default().gold += 1;
        }
        for s in p {
            let c = per_type.entry(s.ty.clone()).or_default();
            c.pred += 1;
            if g.contains(s) {
                c.correct += 1;
            }
        }
    }
    let mut micro = PrfCounts::default();
    for c in per_type.values() {
        micro.gold += c.gold;
        micro.pred += c.pred;
        micro.correct += c.correct;
    }
    Ok(EvalReport {
        precision: micro.precision(),
        recall: micro.recall(),
        f1: micro.f1(),
        micro,
        per_type,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9} {:>9} {:>8}", "type", "P", "R", "F1", "support")?;
        for (ty, c) in &self.per_type {
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                ty,
                c.precision(),
                c.recall(),
                c.f1(),
                c.gold
            )?;
        }
        write!(
            f,
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "micro", self.precision, self.recall, self.f1, self.micro.gold
        )
    }
}

/// Arithmetic mean and sample standard deviation over fold metrics.
pub fn crossval_aggregate(per_fold: &[f64]) -> Result<(f64, f64)> {
    if per_fold.len() < 2 {
        return Err(Error::Config("crossval aggregation needs at least 2 folds".into()));
    }
    let n = per_fold.len() as f64;
    let mean = per_fold.iter().sum::<f64>() / n;
    let var = per_fold.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Span sets per sentence from BIO2 label sequences.
pub fn spans_of_corpus<S: AsRef<str>>(labels: &[Vec<S>]) -> Result<Vec<SpanSet>> {
    labels.iter().map(|l| extract_spans(l)).collect()
}

/// Count BIO2 violations across a corpus (reporting aid for the CLI).
pub fn count_bio2_violations<S: AsRef<str>>(labels: &[Vec<S>]) -> Result<usize> {
    let mut n = 0;
    for sent in labels {
        n += validate_bio2(sent)?.len();
    }
    Ok(n)
}
