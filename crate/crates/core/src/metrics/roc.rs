use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-vs-rest ROC curve from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Score threshold reached at each point after the origin.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// ROC of `scores` against binary `positive` labels. Thresholds sweep the
/// distinct scores in descending order; tied scores move the curve in one
/// diagonal step. AUC is the trapezoid area.
pub fn roc_binary(scores: &[f64], positive: &[bool], class: usize) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch(scores.len(), positive.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc scores"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::SingleClassLabels {
            class,
            missing: "positives",
        });
    }
    if n_neg == 0 {
        return Err(Error::SingleClassLabels {
            class,
            missing: "negatives",
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x, y) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        let (x0, y0) = (*fpr.last().expect("origin"), *tpr.last().expect("origin"));
        auc += (x - x0) * (y + y0) / 2.0;
        fpr.push(x);
        tpr.push(y);
        thresholds.push(s);
    }
    Ok(RocCurve {
        fpr,
        tpr,
        thresholds,
        auc,
    })
}

/// Class `class` against the rest, scored by its probability column.
pub fn roc_ovr(scores: &[Vec<f64>], labels: &[usize], class: usize) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let col = scores
        .iter()
        .map(|row| {
            row.get(class).copied().ok_or(Error::LabelOutOfRange {
                label: class,
                classes: row.len(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
    roc_binary(&col, &positive, class)
}
