use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K × K` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion", format!("rows are not all of length {k}")));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// True-class count of `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, c)).sum()
    }

    /// `TP / (TP + FN)` with `c` as the positive class; 0 when undefined.
    pub fn ovr_recall(&self, c: usize) -> f64 {
        ratio(self.get(c, c), self.support(c))
    }

    pub fn ovr_precision(&self, c: usize) -> f64 {
        ratio(self.get(c, c), self.predicted(c))
    }

    /// `TN / (TN + FP)` with `c` as the positive class; 0 when undefined.
    pub fn ovr_specificity(&self, c: usize) -> f64 {
        let negatives = self.total() - self.support(c);
        let fp = self.predicted(c) - self.get(c, c);
        ratio(negatives - fp, negatives)
    }
}

pub(crate) fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Counts `(y_true[i], y_pred[i])` pairs.
pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// The Table-style summary. `precision`, `recall` and `f1` are
/// support-weighted averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy, sensitivity, specificity and weighted P/R/F1.
///
/// With two classes, sensitivity is the recall of class 1 and specificity
/// the recall of class 0. With more, both are unweighted means over the
/// one-vs-rest problems of every class.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = cm.n_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let (p, r) = (cm.ovr_precision(c), cm.ovr_recall(c));
            ClassMetrics {
                precision: p,
                recall: r,
                f1: f1(p, r),
                support: cm.support(c),
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    let (sensitivity, specificity) = if k == 2 {
        (cm.ovr_recall(1), cm.ovr_recall(0))
    } else {
        let mean = |f: &dyn Fn(usize) -> f64| (0..k).map(f).sum::<f64>() / k as f64;
        (mean(&|c| cm.ovr_recall(c)), mean(&|c| cm.ovr_specificity(c)))
    };
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        sensitivity,
        specificity,
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        let cm = confusion(&[0, 0, 0, 0, 1, 1], &[0, 0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![3, 1], vec![0, 2]]);
        let r = metrics_from_confusion(&cm).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-3;
        assert!(close(r.accuracy, 0.8333));
        assert_eq!(r.sensitivity, 1.0);
        assert_eq!(r.specificity, 0.75);
        assert!(close(r.precision, 0.8889));
        assert!(close(r.recall, 0.8333));
        assert!(close(r.f1, 0.8381));
        assert!((r.per_class[1].f1 - 0.8).abs() < 1e-12);
        assert!((r.per_class[0].f1 - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let cm = confusion(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(metrics_from_confusion(&cm), Err(Error::EmptyMatrix)));
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(confusion(&[0], &[3], 2), Err(Error::LabelOutOfRange { label: 3, .. })));

        // class 2 never predicted
        let cm = confusion(&[0, 1, 2], &[0, 1, 1], 3).unwrap();
        let r = metrics_from_confusion(&cm).unwrap();
        assert_eq!(r.per_class[2].precision, 0.0);
        assert_eq!(r.per_class[2].f1, 0.0);

        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let r = metrics_from_confusion(&cm).unwrap();
        for v in [r.accuracy, r.sensitivity, r.specificity, r.precision, r.recall, r.f1] {
            assert_eq!(v, 1.0);
        }
    }
}
