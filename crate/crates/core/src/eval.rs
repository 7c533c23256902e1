//! AUC-ROC and the in-source / out-of-source report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::{stack, Manifest, SourcedExample};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Examples scored per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

/// Scores with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Validation(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::Validation(format!("score {i} is NaN")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn from_u8(scores: Vec<f64>, labels: &[u8]) -> Result<Self> {
        if let Some(&y) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Validation(format!("label {y} is not 0 or 1")));
        }
        ScoredSet::new(scores, labels.iter().map(|&y| y == 1).collect())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Sorts once and walks tie groups.
pub fn auc_roc(set: &ScoredSet) -> Result<f64> {
    let pos = set.labels.iter().filter(|&&y| y).count();
    let neg = set.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Validation(format!("AUC undefined: {pos} positives and {neg} negatives")));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    // counted in half-pairs so the result is a single exact division
    let mut half_pairs: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && set.scores[order[j]] == set.scores[order[i]] {
            if set.labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        half_pairs += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(half_pairs as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Disease probabilities for every example; parameters are not touched.
pub fn evaluate(params: &ModelParams, examples: &[SourcedExample]) -> Result<ScoredSet> {
    if examples.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    let idx: Vec<usize> = (0..examples.len()).collect();
    let mut scores = Vec::with_capacity(examples.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _, _) = stack(examples, chunk)?;
        scores.extend(params.predict(&x)?);
    }
    ScoredSet::new(scores, examples.iter().map(|e| e.label == 1).collect())
}

/// [`evaluate`] over the images of a manifest.
pub fn evaluate_manifest(params: &ModelParams, manifest: &Manifest, size: usize) -> Result<ScoredSet> {
    evaluate(params, &manifest.load_examples(size)?)
}

/// Fraction of examples whose highest discriminator score is their own source.
pub fn discriminator_accuracy(params: &ModelParams, examples: &[SourcedExample]) -> Result<f64> {
    let s = params
        .num_sources()
        .ok_or_else(|| Error::Config("model has no discriminator".into()))?;
    if examples.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    let idx: Vec<usize> = (0..examples.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _, sources) = stack(examples, chunk)?;
        let scores = params.discriminate(&params.extract(&x)?)?;
        correct += scores
            .data()
            .chunks(s)
            .zip(&sources)
            .filter(|(row, &src)| argmax(row) == src)
            .count();
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Index of the largest entry; the first wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One leave-one-out row for one training mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub held_out: String,
    pub mode: String,
    pub auc_in_source: f64,
    pub auc_out_of_source: f64,
    /// `auc_in_source − auc_out_of_source`.
    pub gap: f64,
}

impl ReportRow {
    pub fn new(held_out: impl Into<String>, mode: impl Into<String>, auc_in: f64, auc_out: f64) -> Self {
        ReportRow {
            held_out: held_out.into(),
            mode: mode.into(),
            auc_in_source: auc_in,
            auc_out_of_source: auc_out,
            gap: auc_in - auc_out,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Modes in first-appearance order.
    pub fn modes(&self) -> Vec<&str> {
        let mut modes: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !modes.contains(&r.mode.as_str()) {
                modes.push(&r.mode);
            }
        }
        modes
    }

    pub fn row(&self, held_out: &str, mode: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.held_out == held_out && r.mode == mode)
    }

    /// Aligned text table: one line per held-out source, an in/out column
    /// pair per mode, values at two decimals.
    pub fn table(&self) -> String {
        let modes = self.modes();
        let mut held: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !held.contains(&r.held_out.as_str()) {
                held.push(&r.held_out);
            }
        }
        let first = held.iter().map(|h| h.len()).chain([8]).max().unwrap_or(8);
        let col = modes.iter().map(|m| m.len()).chain([13]).max().unwrap_or(13);
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "held-out");
        for m in &modes {
            let _ = write!(out, "  {m:<col$}");
        }
        out.push('\n');
        let _ = write!(out, "{:<first$}", "");
        for _ in &modes {
            let _ = write!(out, "  {:<col$}", format!("{:<6} {:<6}", "in", "out"));
        }
        out.push('\n');
        for h in held {
            let _ = write!(out, "{h:<first$}");
            for m in &modes {
                let cell = match self.row(h, m) {
                    Some(r) => format!("{:<6.2} {:<6.2}", r.auc_in_source, r.auc_out_of_source),
                    None => format!("{:<6} {:<6}", "-", "-"),
                };
                let _ = write!(out, "  {cell:<col$}");
            }
            out.truncate(out.trim_end().len());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.table()).map_err(|e| Error::io(&txt, e))
    }
}
