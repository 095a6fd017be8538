//! Completion-query inference and AUC-ROC evaluation.
//!
//! AUC uses the Mann–Whitney rank statistic with midranks for ties. It is
//! computed on raw scores; the sigmoid is monotone, so the value is the same
//! as on probabilities. An AUC with no positives or no negatives is
//! undefined (`None`), never 0.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use crate::encoders::FeatureTable;
use crate::error::{Error, Result};
use crate::kg::{AnnotationTable, RelationKind, UncertainPolicy};
use crate::scoring::{EmbeddingModel, Subject};
use crate::tensor::sigmoid;

pub use crate::scoring::{param_count, param_counts};

/// Scores of `(image, hasFinding, F_j)` for every finding.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub labels: Option<Vec<bool>>,
}

pub fn predict(model: &EmbeddingModel, id: &str, code: &[f64]) -> Result<PredictionRow> {
    let scores = model.score_all_objects(Subject::Image(code), RelationKind::HasFinding)?;
    let probabilities = scores.iter().map(|s| sigmoid(*s)).collect();
    Ok(PredictionRow {
        id: id.to_string(),
        scores,
        probabilities,
        labels: None,
    })
}

/// `label_j = p_j > τ`, strictly.
pub fn classify(row: &PredictionRow, tau: f64) -> Result<Vec<bool>> {
    check_threshold(tau)?;
    Ok(row.probabilities.iter().map(|p| *p > tau).collect())
}

pub fn check_threshold(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "threshold τ={tau} must lie strictly between 0 and 1"
        )))
    }
}

fn check_aligned(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN score passed to AUC".into()));
    }
    Ok(())
}

/// Rank-based AUC: `(Σ rank(pos) − P(P+1)/2) / (P·N)` with midranks.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_aligned(scores, labels)?;
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let midrank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += midrank * tied_pos as f64;
        start = end;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

/// Pairwise reference: wins plus half-ties over all positive–negative pairs.
pub fn auc_bruteforce(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_aligned(scores, labels)?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !**l)
        .map(|(s, _)| *s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Ok(None);
    }
    let mut twice_wins: u64 = 0;
    for a in &pos {
        for b in &neg {
            twice_wins += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    Ok(Some(twice_wins as f64 / (2.0 * pos.len() as f64 * neg.len() as f64)))
}

/// Unweighted mean of the defined entries.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FindingReport {
    pub name: String,
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub findings: Vec<FindingReport>,
    pub macro_auc: Option<f64>,
    pub threshold: Option<f64>,
    pub images: usize,
}

impl EvalReport {
    pub fn is_defined(&self) -> bool {
        self.macro_auc.is_some()
    }

    /// Plain-text report; `config` lines are echoed at the top.
    pub fn render(&self, config: &[(String, String)]) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
        let mut out = String::new();
        out.push_str("# evaluation report\n");
        for (k, v) in config {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "images = {}", self.images);
        let _ = writeln!(out, "macro_auc = {}", fmt(self.macro_auc));
        if let Some(t) = self.threshold {
            let _ = writeln!(out, "threshold = {t}");
        }
        out.push_str("finding\tauc\tpositives\tnegatives");
        if self.threshold.is_some() {
            out.push_str("\tsensitivity\tspecificity");
        }
        out.push('\n');
        for f in &self.findings {
            let _ = write!(out, "{}\t{}\t{}\t{}", f.name, fmt(f.auc), f.positives, f.negatives);
            if self.threshold.is_some() {
                let _ = write!(out, "\t{}\t{}", fmt(f.sensitivity), fmt(f.specificity));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-finding and macro AUC of `predictions` against `truth`, whose
/// uncertain cells are mapped to binary by `policy`. `subset` restricts the
/// evaluated findings (indices into the table's findings).
pub fn macro_auc(
    predictions: &[PredictionRow],
    truth: &AnnotationTable,
    policy: UncertainPolicy,
    subset: Option<&[usize]>,
    threshold: Option<f64>,
) -> Result<EvalReport> {
    if let Some(t) = threshold {
        check_threshold(t)?;
    }
    let n = truth.num_findings();
    let by_id: HashMap<&str, &PredictionRow> = predictions.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut rows = Vec::with_capacity(truth.num_images());
    let mut missing = Vec::new();
    for id in truth.ids() {
        match by_id.get(id.as_str()) {
            Some(r) if r.scores.len() == n => rows.push(*r),
            Some(r) => return Err(Error::shape("macro_auc", n, r.scores.len())),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }

    let all: Vec<usize> = (0..n).collect();
    let selected = subset.unwrap_or(&all);
    let mut findings = Vec::with_capacity(selected.len());
    for &j in selected {
        if j >= n {
            return Err(Error::OutOfBounds {
                what: "finding",
                index: j,
                len: n,
            });
        }
        let labels: Vec<bool> = (0..rows.len()).map(|i| policy.is_positive(truth.get(i, j))).collect();
        let scores: Vec<f64> = rows.iter().map(|r| r.scores[j]).collect();
        let positives = labels.iter().filter(|l| **l).count();
        let negatives = labels.len() - positives;
        let (sensitivity, specificity) = match threshold {
            None => (None, None),
            Some(t) => {
                let predicted: Vec<bool> = rows.iter().map(|r| r.probabilities[j] > t).collect();
                let tp = predicted.iter().zip(&labels).filter(|(p, l)| **p && **l).count();
                let tn = predicted.iter().zip(&labels).filter(|(p, l)| !**p && !**l).count();
                (
                    (positives > 0).then(|| tp as f64 / positives as f64),
                    (negatives > 0).then(|| tn as f64 / negatives as f64),
                )
            }
        };
        findings.push(FindingReport {
            name: truth.findings()[j].clone(),
            auc: auc_roc(&scores, &labels)?,
            positives,
            negatives,
            sensitivity,
            specificity,
        });
    }
    let aucs: Vec<Option<f64>> = findings.iter().map(|f| f.auc).collect();
    Ok(EvalReport {
        macro_auc: mean_defined(&aucs),
        findings,
        threshold,
        images: rows.len(),
    })
}

/// Predicts every row of `truth` from `features` and scores the result.
pub fn evaluate(
    model: &EmbeddingModel,
    features: &FeatureTable,
    truth: &AnnotationTable,
    policy: UncertainPolicy,
    subset: Option<&[usize]>,
    threshold: Option<f64>,
) -> Result<EvalReport> {
    let rows = features.align(truth.ids())?;
    let predictions = truth
        .ids()
        .iter()
        .zip(rows)
        .map(|(id, r)| predict(model, id, features.code(r)))
        .collect::<Result<Vec<_>>>()?;
    macro_auc(&predictions, truth, policy, subset, threshold)
}

/// `id,<finding_1>,...` with probabilities at 6 decimals, followed by
/// `<finding>_label` columns when rows carry binary labels.
pub fn write_predictions<W: Write>(out: W, findings: &[String], rows: &[PredictionRow]) -> std::io::Result<()> {
    let with_labels = rows.first().is_some_and(|r| r.labels.is_some());
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend(findings.iter().cloned());
    if with_labels {
        header.extend(findings.iter().map(|f| format!("{f}_label")));
    }
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.id.clone()];
        rec.extend(r.probabilities.iter().map(|p| format!("{p:.6}")));
        if let Some(labels) = &r.labels {
            rec.extend(labels.iter().map(|l| if *l { "1" } else { "0" }.to_string()));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()
}
