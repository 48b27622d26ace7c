//! Confusion matrices and classification metrics.

use serde::Serialize;

use crate::error::{Error, Result};

/// C x C prediction counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Merge evaluation shards by elementwise addition.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::Dimension(format!(
                "confusion merge: {} classes vs {}",
                other.classes(),
                self.classes()
            )));
        }
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, oc) in row.iter_mut().zip(orow) {
                *c += oc;
            }
        }
        Ok(())
    }

    /// CSV with a header row of class names.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\pred");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let name = class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
            out.push_str(&name);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Count predictions into a `C x C` matrix.
pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "confusion: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Data(format!(
                "confusion: value out of range [0, {classes}): pred {p}, label {l}"
            )));
        }
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Per-class one-vs-rest metrics.
#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full evaluation report. `overall_accuracy` is trace/total; `macro_f1` the
/// unweighted mean of per-class F1.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total_samples: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    // Zero-division policy: metrics with an empty denominator are 0.
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per class n: TP = cm[n][n], FP = column - TP, FN = row - TP,
/// TN = total - TP - FP - FN; accuracy, precision, recall and
/// F1 = 2TP/(2TP + FP + FN) from those counts; macro F1 averages over all
/// classes (empty classes contribute 0).
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let classes = cm.classes();
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("metrics: empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut f1_sum = 0.0;
    for n in 0..classes {
        let tp = cm.counts[n][n];
        let row: u64 = cm.counts[n].iter().sum();
        let col: u64 = (0..classes).map(|i| cm.counts[i][n]).sum();
        let fp = col - tp;
        let fn_ = row - tp;
        let tn = total - tp - fp - fn_;
        let m = ClassMetrics {
            class: n,
            accuracy: ratio(tp + tn, total),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        };
        f1_sum += m.f1;
        per_class.push(m);
    }
    Ok(MetricsReport {
        overall_accuracy: ratio(cm.trace(), total),
        macro_f1: f1_sum / classes as f64,
        per_class,
        total_samples: total,
    })
}
