//! Open-set inference: reject a prediction as unknown when the CDF of its
//! entropy under the predicted class's GEV exceeds delta. Also the metric
//! suite: ALL, OS, OS*, UNK and their harmonic-mean summary HOS.

use crate::entropy::{argmax_class, prediction_entropy, ClassGevBank};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One classified target sample. `label` is in [0, C] with C meaning
/// unknown; `known_probs` keeps the classifier posterior over the C known
/// classes regardless of the decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetPrediction {
    pub sample_id: String,
    pub label: usize,
    pub known_probs: Vec<f64>,
    pub entropy: f64,
    pub cdf_value: f64,
}

/// Decides known-vs-unknown for one posterior: c* = argmax, h = entropy,
/// unknown iff F_GEV(h; params[c*]) > delta strictly.
pub fn predict_open_set(
    sample_id: &str,
    probs: &[f64],
    bank: &ClassGevBank,
) -> Result<OpenSetPrediction> {
    let c = bank.class_count();
    if probs.len() != c {
        return Err(Error::ShapeMismatch {
            what: "probability vector classes".into(),
            expected: c,
            got: probs.len(),
        });
    }
    let entropy = prediction_entropy(probs)?;
    let c_star = argmax_class(probs);
    let params = bank.per_class[c_star].ok_or_else(|| {
        Error::BankConstruction(format!("class {c_star} has no fitted parameters"))
    })?;
    let cdf_value = params.cdf(entropy)?;
    let label = if cdf_value > bank.delta { c } else { c_star };
    Ok(OpenSetPrediction {
        sample_id: sample_id.to_string(),
        label,
        known_probs: probs.to_vec(),
        entropy,
        cdf_value,
    })
}

/// Accuracy percentages: overall, the three open-set means, their harmonic
/// summary, and the per-class breakdown (unknown class last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub all: f64,
    pub os: f64,
    pub os_star: f64,
    pub unk: f64,
    pub hos: f64,
    pub per_class: Vec<f64>,
}

impl MetricsReport {
    /// Two-decimal table for terminals; the JSON form keeps full precision.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "ALL {:>7.2}\nOS  {:>7.2}\nOS* {:>7.2}\nUNK {:>7.2}\nHOS {:>7.2}\n",
            self.all, self.os, self.os_star, self.unk, self.hos
        ));
        out.push_str("per-class");
        for acc in &self.per_class {
            out.push_str(&format!(" {acc:.2}"));
        }
        out.push('\n');
        out
    }
}

/// 2ab/(a+b), or zero when both inputs are zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// Computes the metric suite from (predicted, true) label pairs, both in
/// [0, c_known] with c_known meaning unknown. Every class, unknown
/// included, must appear in the truth at least once; per-class accuracy
/// is undefined otherwise.
pub fn compute_metrics(preds: &[(usize, usize)], c_known: usize) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(Error::Domain("metrics of an empty prediction set".into()));
    }
    if c_known == 0 {
        return Err(Error::Domain("metrics need at least one known class".into()));
    }
    let classes = c_known + 1;
    let mut totals = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for &(predicted, truth) in preds {
        if predicted >= classes || truth >= classes {
            return Err(Error::Domain(format!(
                "label pair ({predicted}, {truth}) outside [0, {c_known}]"
            )));
        }
        totals[truth] += 1;
        if predicted == truth {
            correct[truth] += 1;
        }
    }
    if let Some(missing) = totals.iter().position(|&n| n == 0) {
        let name = if missing == c_known {
            format!("unknown class {missing}")
        } else {
            format!("class {missing}")
        };
        return Err(Error::Domain(format!(
            "per-class accuracy undefined: {name} absent from the ground truth"
        )));
    }
    let per_class: Vec<f64> = correct
        .iter()
        .zip(&totals)
        .map(|(&c, &n)| 100.0 * c as f64 / n as f64)
        .collect();
    let all = 100.0 * correct.iter().sum::<usize>() as f64 / preds.len() as f64;
    let os = per_class.iter().sum::<f64>() / classes as f64;
    let os_star = per_class[..c_known].iter().sum::<f64>() / c_known as f64;
    let unk = per_class[c_known];
    let hos = harmonic_mean(os_star, unk);
    Ok(MetricsReport {
        all,
        os,
        os_star,
        unk,
        hos,
        per_class,
    })
}
