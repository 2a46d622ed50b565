use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A row is predicted positive when its score is strictly above this.
pub const DECISION_THRESHOLD: f64 = 0.5;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from tie groups with integer counts.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let idx = descending(scores);
    // Twice the concordant count, so ties stay integral.
    let mut twice: u128 = 0;
    let mut pos_above: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u128, 0u128);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        twice += gn * (2 * pos_above + gp);
        pos_above += gp;
        i = j;
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Step-wise average precision: sum over distinct thresholds (descending) of
/// recall increment times precision.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::SingleClass);
    }
    let idx = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let mut gp = 0;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            gp += usize::from(labels[idx[j]]);
            j += 1;
        }
        tp += gp;
        seen += j - i;
        if gp > 0 {
            ap += (gp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Ok(ap)
}

/// Precision and recall of `score > threshold`. Precision is 0 when nothing
/// is predicted positive; recall is 0 when there are no positives.
pub fn precision_recall_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64)> {
    let (pos, _) = check(scores, labels)?;
    let (mut tp, mut pp) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if s > threshold {
            pp += 1;
            tp += usize::from(l);
        }
    }
    let precision = if pp == 0 { 0.0 } else { tp as f64 / pp as f64 };
    let recall = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
    Ok((precision, recall))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub roc_auc: f64,
    pub average_precision: f64,
    pub precision: f64,
    pub recall: f64,
}

impl EvalScores {
    fn as_array(&self) -> [f64; 4] {
        [self.roc_auc, self.average_precision, self.precision, self.recall]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            roc_auc: a[0],
            average_precision: a[1],
            precision: a[2],
            recall: a[3],
        }
    }
}

pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<EvalScores> {
    let (precision, recall) = precision_recall_at(scores, labels, DECISION_THRESHOLD)?;
    Ok(EvalScores {
        roc_auc: roc_auc(scores, labels)?,
        average_precision: average_precision(scores, labels)?,
        precision,
        recall,
    })
}

/// Cross-validated metrics: fold mean and standard error (sample standard
/// deviation over folds divided by `sqrt(k)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: EvalScores,
    pub std_err: EvalScores,
    pub folds: Vec<EvalScores>,
}

impl EvalReport {
    pub fn from_folds(folds: Vec<EvalScores>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Empty("folds"));
        }
        let k = folds.len() as f64;
        let mut mean = [0.0; 4];
        for f in &folds {
            for (m, v) in mean.iter_mut().zip(f.as_array()) {
                *m += v / k;
            }
        }
        let mut se = [0.0; 4];
        if folds.len() > 1 {
            for f in &folds {
                for ((s, m), v) in se.iter_mut().zip(mean).zip(f.as_array()) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in se.iter_mut() {
                *s = (*s / (k - 1.0)).sqrt() / k.sqrt();
            }
        }
        Ok(Self {
            mean: EvalScores::from_array(mean),
            std_err: EvalScores::from_array(se),
            folds,
        })
    }
}
