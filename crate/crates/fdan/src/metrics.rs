//! Recognition metrics: confusion matrix, weighted/unweighted average
//! recall, and support-weighted F1.

use crate::{Error, Result};
use serde::Serialize;

/// Confusion matrix plus the three summary metrics.
/// Confusion rows index the true class, columns the predicted class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<usize>>,
    /// Support-weighted mean recall; identical to overall accuracy.
    pub war: f64,
    /// Unweighted mean recall over classes that appear in the truth.
    pub uar: f64,
    /// Support-weighted mean per-class F1.
    pub w_f1: f64,
    /// Recall per class; 0 for classes with no support.
    pub per_class_recall: Vec<f64>,
}

/// Computes the report from predicted and true class indices.
pub fn metrics(predicted: &[usize], truth: &[usize], classes: usize) -> Result<MetricsReport> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidParameter(format!(
            "prediction/truth length mismatch: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidParameter("metrics over zero samples".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (i, (&p, &t)) in predicted.iter().zip(truth).enumerate() {
        if p >= classes || t >= classes {
            return Err(Error::Label {
                row: i,
                msg: format!("class index out of range: predicted {p}, true {t}, C {classes}"),
            });
        }
        confusion[t][p] += 1;
    }

    let n = truth.len() as f64;
    // The support-weighted recall telescopes to plain accuracy; computing it
    // as correct/n keeps the identity exact in floating point.
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let war = correct as f64 / n;
    let mut uar = 0.0;
    let mut supported = 0usize;
    let mut w_f1 = 0.0;
    let mut per_class_recall = vec![0.0; classes];

    for c in 0..classes {
        let support: usize = confusion[c].iter().sum();
        let tp = confusion[c][c];
        let predicted_c: usize = (0..classes).map(|t| confusion[t][c]).sum();

        if support > 0 {
            let recall = tp as f64 / support as f64;
            per_class_recall[c] = recall;
            uar += recall;
            supported += 1;

            let precision = if predicted_c > 0 {
                tp as f64 / predicted_c as f64
            } else {
                0.0
            };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            w_f1 += support as f64 / n * f1;
        }
    }
    if supported > 0 {
        uar /= supported as f64;
    }

    Ok(MetricsReport {
        confusion,
        war,
        uar,
        w_f1,
        per_class_recall,
    })
}
