//! Prediction entropy, class-conditional entropy groups, per-class GEV
//! fitting with a global threshold level delta, and the entropy-based
//! instance weight used by the weighted adversarial loss.

use crate::error::{Error, Result};
use crate::gev::{fit_gev, FitOptions, GevParams};
use serde::{Deserialize, Serialize};

/// Probabilities are clamped to this floor before the log so saturated
/// softmax outputs keep the entropy finite.
pub const PROB_EPS: f64 = 1e-12;

/// One target sample's entropy together with its predicted class.
///
/// Entropy is in nats and lies in [0, max_entropy(C)] up to the clamping
/// slack, because records are only built from validated probability rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRecord {
    pub sample_id: String,
    pub entropy: f64,
    pub predicted_class: usize,
}

/// Per-class fitted GEVs and entropy thresholds under one global level.
///
/// `thresholds[i]` is the entropy where class i's fitted CDF equals
/// `delta`. Classes whose entropy group was too small to fit carry the
/// pooled all-target fit instead, marked in `fallback_used`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassGevBank {
    pub per_class: Vec<Option<GevParams>>,
    pub thresholds: Vec<f64>,
    pub delta: f64,
    pub fallback_used: Vec<bool>,
    pub h_max: f64,
}

impl ClassGevBank {
    /// Number of known classes covered by the bank.
    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    /// Structural consistency; used after deserializing an external bank.
    pub fn validate(&self) -> Result<()> {
        let c = self.per_class.len();
        if c == 0 {
            return Err(Error::Domain("bank covers zero classes".into()));
        }
        if self.thresholds.len() != c || self.fallback_used.len() != c {
            return Err(Error::ShapeMismatch {
                what: "bank arrays".into(),
                expected: c,
                got: self.thresholds.len().min(self.fallback_used.len()),
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParam(format!(
                "bank delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !self.h_max.is_finite() || self.h_max < 0.0 {
            return Err(Error::InvalidParam(format!(
                "bank h_max must be finite and >= 0, got {}",
                self.h_max
            )));
        }
        for (i, params) in self.per_class.iter().enumerate() {
            match params {
                Some(p) => p.validate()?,
                None => {
                    return Err(Error::BankConstruction(format!(
                        "class {i} has no fitted parameters"
                    )))
                }
            }
            if !self.thresholds[i].is_finite() {
                return Err(Error::InvalidParam(format!(
                    "threshold for class {i} is not finite"
                )));
            }
        }
        Ok(())
    }

    /// Same fitted distributions re-thresholded at a different level.
    pub fn with_delta(&self, delta: f64) -> Result<ClassGevBank> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParam(format!(
                "delta must lie in (0,1), got {delta}"
            )));
        }
        let mut thresholds = Vec::with_capacity(self.per_class.len());
        for (i, params) in self.per_class.iter().enumerate() {
            let p = params.as_ref().ok_or_else(|| {
                Error::BankConstruction(format!("class {i} has no fitted parameters"))
            })?;
            thresholds.push(p.quantile(delta)?);
        }
        Ok(ClassGevBank {
            per_class: self.per_class.clone(),
            thresholds,
            delta,
            fallback_used: self.fallback_used.clone(),
            h_max: self.h_max,
        })
    }
}

/// Shannon entropy of a probability vector, in nats.
pub fn prediction_entropy(probs: &[f64]) -> Result<f64> {
    validate_probs(probs)?;
    Ok(probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.max(PROB_EPS).ln() } else { 0.0 })
        .sum())
}

/// Entropy of the uniform distribution over `c` classes: ln c.
pub fn max_entropy(c: usize) -> Result<f64> {
    if c == 0 {
        return Err(Error::Domain("max_entropy of zero classes".into()));
    }
    Ok((c as f64).ln())
}

/// Index of the largest probability, ties broken toward the lowest index.
pub fn argmax_class(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Domain("empty probability vector".into()));
    }
    if probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Domain(
            "probability vector has negative or non-finite entries".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "probability vector sums to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Splits `(sample_id, probs)` pairs into `c` groups keyed by predicted
/// class. Groups may be empty; together they cover the input exactly.
pub fn partition_entropy_groups(
    records: &[(String, Vec<f64>)],
    c: usize,
) -> Result<Vec<Vec<EntropyRecord>>> {
    if c == 0 {
        return Err(Error::Domain("cannot partition into zero groups".into()));
    }
    let mut groups: Vec<Vec<EntropyRecord>> = vec![Vec::new(); c];
    for (sample_id, probs) in records {
        if probs.len() != c {
            return Err(Error::ShapeMismatch {
                what: format!("probability vector for sample {sample_id}"),
                expected: c,
                got: probs.len(),
            });
        }
        let entropy = prediction_entropy(probs)?;
        let predicted_class = argmax_class(probs);
        groups[predicted_class].push(EntropyRecord {
            sample_id: sample_id.clone(),
            entropy,
            predicted_class,
        });
    }
    Ok(groups)
}

/// Fits one GEV per class on that class's entropy values and derives the
/// threshold where each fitted CDF equals `delta`.
///
/// Classes with fewer than `opts.min_samples` entropies (or a degenerate
/// group) receive the fallback GEV fitted on all groups pooled, with
/// `fallback_used` set. Fails only when a fallback is needed and the
/// pooled fit itself is impossible.
pub fn build_gev_bank(
    groups: &[Vec<f64>],
    delta: f64,
    opts: &FitOptions,
) -> Result<ClassGevBank> {
    if groups.is_empty() {
        return Err(Error::Domain("bank needs at least one class".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }

    let c = groups.len();
    let mut per_class: Vec<Option<GevParams>> = vec![None; c];
    let mut fallback_used = vec![false; c];
    for (i, group) in groups.iter().enumerate() {
        match fit_gev(group, opts) {
            Ok(params) => per_class[i] = Some(params),
            Err(Error::InsufficientData { .. }) | Err(Error::DegenerateData(_)) => {
                fallback_used[i] = true;
            }
            Err(e) => return Err(e),
        }
    }

    if fallback_used.iter().any(|&f| f) {
        let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
        let pooled_fit = fit_gev(&pooled, opts).map_err(|e| {
            Error::BankConstruction(format!(
                "some classes lack enough entropies and the pooled fit failed: {e}"
            ))
        })?;
        for (params, &fallback) in per_class.iter_mut().zip(&fallback_used) {
            if fallback {
                *params = Some(pooled_fit);
            }
        }
    }

    let mut thresholds = Vec::with_capacity(c);
    for params in &per_class {
        thresholds.push(params.as_ref().expect("every class filled").quantile(delta)?);
    }

    Ok(ClassGevBank {
        per_class,
        thresholds,
        delta,
        fallback_used,
        h_max: max_entropy(c)?,
    })
}

/// Instance weight for a target sample with entropy `h` whose predicted
/// class has threshold `e_i`.
///
/// 1 on the confident-known side, 0 on the confident-unknown side, and
/// linear across the mixture interval of half-width
/// min(e_i, h_max - e_i)/2 centered at e_i; exactly 0.5 at h = e_i.
pub fn conditional_weight(h: f64, e_i: f64, h_max: f64) -> Result<f64> {
    if !(e_i > 0.0 && e_i < h_max) {
        return Err(Error::Domain(format!(
            "threshold {e_i} outside (0, {h_max}) makes the mixture interval degenerate"
        )));
    }
    if !(h >= 0.0) {
        return Err(Error::Domain(format!("entropy must be >= 0, got {h}")));
    }
    let half_range = e_i.min(h_max - e_i);
    Ok((0.5 + (e_i - h) / half_range).clamp(0.0, 1.0))
}

/// `conditional_weight` applied record-wise with each record's own
/// class threshold; order-preserving.
pub fn batch_weights(
    records: &[EntropyRecord],
    bank: &ClassGevBank,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        if record.predicted_class >= bank.class_count() {
            return Err(Error::Domain(format!(
                "predicted class {} outside bank of {} classes",
                record.predicted_class,
                bank.class_count()
            )));
        }
        let weight = conditional_weight(
            record.entropy,
            bank.thresholds[record.predicted_class],
            bank.h_max,
        )?;
        out.push((record.sample_id.clone(), weight));
    }
    Ok(out)
}
