//! The minimax training loop: source classification loss, target entropy
//! maximization, weighted adversarial domain loss behind the gradient
//! reversal layer, SGD with momentum and annealed learning rate, and
//! periodic refitting of the per-class GEV bank.

use crate::data::Dataset;
use crate::entropy::{
    argmax_class, batch_weights, build_gev_bank, partition_entropy_groups, prediction_entropy,
    ClassGevBank, EntropyRecord, PROB_EPS,
};
use crate::error::{Error, Result};
use crate::gev::FitOptions;
use crate::model::{
    backward, forward, BatchRefs, Gradients, LossSpec, ModelParams, SampleCache, VideoFeature,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Loss-term switches mirroring the ablation table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub disable_le: bool,
    pub disable_ld: bool,
    pub unweighted_ld: bool,
}

/// All training hyperparameters. The defaults mirror the UCF to HMDB
/// preset: beta 1, gamma 0.9, delta 0.4, SGD at lr 0.03 with momentum 0.9
/// and weight decay 1e-4.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub source_batch: usize,
    pub target_batch: usize,
    pub epochs: usize,
    pub refit_every: usize,
    pub warmup_epochs: usize,
    pub grl_schedule: bool,
    pub ablation: AblationFlags,
    pub d_hidden: usize,
    pub d_adv: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1.0,
            gamma: 0.9,
            delta: 0.4,
            lr0: 0.03,
            momentum: 0.9,
            weight_decay: 1e-4,
            source_batch: 128,
            target_batch: 192,
            epochs: 30,
            refit_every: 1,
            warmup_epochs: 1,
            grl_schedule: true,
            ablation: AblationFlags::default(),
            d_hidden: 256,
            d_adv: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (
                self.beta >= 0.0 && self.beta.is_finite(),
                format!("beta must be finite and >= 0, got {}", self.beta),
            ),
            (
                self.gamma >= 0.0 && self.gamma.is_finite(),
                format!("gamma must be finite and >= 0, got {}", self.gamma),
            ),
            (
                self.delta > 0.0 && self.delta < 1.0,
                format!("delta must lie in (0,1), got {}", self.delta),
            ),
            (
                self.lr0 > 0.0 && self.lr0.is_finite(),
                format!("lr0 must be finite and > 0, got {}", self.lr0),
            ),
            (
                (0.0..1.0).contains(&self.momentum),
                format!("momentum must lie in [0,1), got {}", self.momentum),
            ),
            (
                self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
                format!(
                    "weight_decay must be finite and >= 0, got {}",
                    self.weight_decay
                ),
            ),
            (
                self.source_batch >= 1,
                "source_batch must be >= 1".to_string(),
            ),
            (
                self.target_batch >= 1,
                "target_batch must be >= 1".to_string(),
            ),
            (self.epochs >= 1, "epochs must be >= 1".to_string()),
            (
                self.refit_every >= 1,
                "refit_every must be >= 1".to_string(),
            ),
            (
                self.warmup_epochs >= 1,
                "warmup_epochs must be >= 1".to_string(),
            ),
            (self.d_hidden >= 1, "d_hidden must be >= 1".to_string()),
            (self.d_adv >= 1, "d_adv must be >= 1".to_string()),
        ];
        for (ok, message) in checks {
            if !ok {
                return Err(Error::InvalidParam(message));
            }
        }
        Ok(())
    }
}

/// Per-epoch mean step losses; disabled terms are recorded as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub l_c: f64,
    pub l_e: f64,
    pub l_d: f64,
    pub mean_target_weight: f64,
}

/// Final parameters, optimizer state, and the per-epoch loss record.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub velocity: Gradients,
    pub epoch: usize,
    pub progress: f64,
    pub bank: Option<ClassGevBank>,
    pub loss_history: Vec<EpochLosses>,
}

/// Mean cross entropy -ln p[label] over the batch.
pub fn classification_loss(probs: &[&[f64]], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            what: "labels".into(),
            expected: probs.len(),
            got: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::Domain("classification loss of an empty batch".into()));
    }
    let mut total = 0.0;
    for (row, &label) in probs.iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::Domain(format!(
                "label {label} outside [0, {})",
                row.len()
            )));
        }
        total -= row[label].max(PROB_EPS).ln();
    }
    Ok(total / probs.len() as f64)
}

/// Negated mean prediction entropy of the target batch; minimizing this
/// pushes target predictions toward the uniform vector.
pub fn entropy_max_loss(target_probs: &[&[f64]]) -> Result<f64> {
    if target_probs.is_empty() {
        return Err(Error::Domain("entropy loss of an empty batch".into()));
    }
    let mut total = 0.0;
    for row in target_probs {
        total += prediction_entropy(row)?;
    }
    Ok(-total / target_probs.len() as f64)
}

/// mean_s[ln d] + mean_t[w ln(1-d)] with probabilities clamped away from
/// the log singularities; an empty side contributes zero.
pub fn weighted_adversarial_loss(
    source_dprobs: &[f64],
    target_dprobs: &[f64],
    target_weights: &[f64],
) -> Result<f64> {
    if target_dprobs.len() != target_weights.len() {
        return Err(Error::ShapeMismatch {
            what: "target weights".into(),
            expected: target_dprobs.len(),
            got: target_weights.len(),
        });
    }
    for &d in source_dprobs.iter().chain(target_dprobs) {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::Domain(format!(
                "domain probability {d} outside [0,1]"
            )));
        }
    }
    for &w in target_weights {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Domain(format!("instance weight {w} outside [0,1]")));
        }
    }
    let source_term = if source_dprobs.is_empty() {
        0.0
    } else {
        source_dprobs.iter().map(|&d| d.max(PROB_EPS).ln()).sum::<f64>()
            / source_dprobs.len() as f64
    };
    let target_term = if target_dprobs.is_empty() {
        0.0
    } else {
        target_dprobs
            .iter()
            .zip(target_weights)
            .map(|(&d, &w)| w * (1.0 - d).max(PROB_EPS).ln())
            .sum::<f64>()
            / target_dprobs.len() as f64
    };
    Ok(source_term + target_term)
}

/// Annealed learning rate lr0 / (1 + 10 p)^0.75.
pub fn lr_at(lr0: f64, p: f64) -> f64 {
    lr0 / (1.0 + 10.0 * p).powf(0.75)
}

/// GRL coefficient: gamma (2 / (1 + exp(-10 p)) - 1) under the warm-up
/// schedule, plain gamma otherwise.
pub fn grl_lambda_at(gamma: f64, p: f64, schedule: bool) -> f64 {
    if schedule {
        gamma * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
    } else {
        gamma
    }
}

/// One SGD step: v = momentum v + (g + weight_decay theta);
/// theta -= lr v.
pub fn sgd_step(
    params: &mut ModelParams,
    velocity: &mut Gradients,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let theta = params.blocks_mut();
    let vel = velocity.blocks_mut();
    let g = grads.blocks();
    for ((theta, vel), g) in theta.into_iter().zip(vel).zip(g) {
        for i in 0..theta.len() {
            vel[i] = momentum * vel[i] + (g[i] + weight_decay * theta[i]);
            theta[i] -= lr * vel[i];
        }
    }
}

fn fit_options(cfg: &TrainConfig) -> FitOptions {
    FitOptions {
        seed: cfg.seed,
        ..FitOptions::default()
    }
}

/// Full-target-pass entropies under `params`, grouped by predicted class
/// and fitted into a fresh bank at level `cfg.delta`.
pub fn refit_bank(target: &Dataset, params: &ModelParams, cfg: &TrainConfig) -> Result<ClassGevBank> {
    if target.is_empty() {
        return Err(Error::Domain("cannot fit a bank on an empty target".into()));
    }
    let mut records = Vec::with_capacity(target.len());
    for item in &target.items {
        let video = item.features.to_video()?;
        let cache = forward(&video, params, false)?;
        records.push((item.id.clone(), cache.probs));
    }
    let groups = partition_entropy_groups(&records, params.c)?;
    let entropy_groups: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|r| r.entropy).collect())
        .collect();
    build_gev_bank(&entropy_groups, cfg.delta, &fit_options(cfg))
}

/// Per-epoch loss CSV with full-precision values; the exact bytes are
/// reproducible for a fixed seed.
pub fn loss_csv(history: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,l_c,l_e,l_d,mean_target_weight\n");
    for (epoch, row) in history.iter().enumerate() {
        out.push_str(&format!(
            "{epoch},{},{},{},{}\n",
            row.l_c, row.l_e, row.l_d, row.mean_target_weight
        ));
    }
    out
}

const SHUFFLE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Trains the full stack on a labeled source and unlabeled target.
///
/// Every step forwards one source chunk and one target chunk, computes
/// L_c, L_e (unless disabled) and the weighted adversarial loss whose
/// gradient reaches the transform through the reversal layer with
/// coefficient lambda = gamma (2/(1+exp(-10 p)) - 1) (or plain gamma
/// without the schedule), then applies SGD with momentum, weight decay
/// and lr = lr0 / (1 + 10 p)^0.75.
///
/// Target weights are all ones during `warmup_epochs`; afterwards the
/// GEV bank is refit from a full target pass every `refit_every` epochs
/// and `batch_weights` supplies the weights (treated as constants, no
/// gradient flows through them). A failed refit logs a warning and falls
/// back to all-ones weights until the next refit. After the last epoch
/// the bank is refit once more so the returned bank matches the returned
/// parameters.
pub fn train(source: &Dataset, target: &Dataset, cfg: &TrainConfig) -> Result<(TrainState, ClassGevBank)> {
    cfg.validate()?;
    source.validate()?;
    target.validate()?;
    let c = source.c_known;
    if c < 2 {
        return Err(Error::InvalidParam(format!(
            "training needs at least 2 known classes, got {c}"
        )));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::Domain("training needs non-empty source and target".into()));
    }
    let dim = source.dim()?;
    if target.dim()? != dim {
        return Err(Error::ShapeMismatch {
            what: "target feature dimension".into(),
            expected: dim,
            got: target.dim()?,
        });
    }

    let source_videos: Vec<VideoFeature> = source.video_features()?;
    let source_labels: Vec<usize> = source
        .items
        .iter()
        .map(|i| i.label.expect("validated source labels"))
        .collect();
    let target_videos: Vec<VideoFeature> = target.video_features()?;

    let mut params = ModelParams::init(dim, cfg.d_hidden, cfg.d_adv, c, cfg.seed)?;
    let mut velocity = Gradients::zeros(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SEED_SALT);

    let n_s = source_videos.len();
    let n_t = target_videos.len();
    let steps_per_epoch = n_s.div_ceil(cfg.source_batch);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let target_chunks = n_t.div_ceil(cfg.target_batch);

    let with_adv = cfg.gamma > 0.0 && !cfg.ablation.disable_ld;
    let effective_beta = if cfg.ablation.disable_le { 0.0 } else { cfg.beta };
    let disc_scale = if with_adv { cfg.gamma } else { 0.0 };

    let mut order_s: Vec<usize> = (0..n_s).collect();
    let mut order_t: Vec<usize> = (0..n_t).collect();
    let mut bank: Option<ClassGevBank> = None;
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut completed_steps = 0usize;

    for epoch in 0..cfg.epochs {
        if epoch >= cfg.warmup_epochs && (epoch - cfg.warmup_epochs) % cfg.refit_every == 0 {
            match refit_bank(target, &params, cfg) {
                Ok(b) => bank = Some(b),
                Err(e) => {
                    eprintln!(
                        "warning: epoch {epoch}: GEV bank refit failed ({e}); \
                         using all-ones target weights"
                    );
                    bank = None;
                }
            }
        }
        order_s.shuffle(&mut rng);
        order_t.shuffle(&mut rng);

        let mut sums = EpochLosses {
            l_c: 0.0,
            l_e: 0.0,
            l_d: 0.0,
            mean_target_weight: 0.0,
        };
        let mut weight_warning_logged = false;

        for (step, source_chunk) in order_s.chunks(cfg.source_batch).enumerate() {
            let p = completed_steps as f64 / total_steps;
            let lr = lr_at(cfg.lr0, p);
            let lambda = if with_adv {
                grl_lambda_at(cfg.gamma, p, cfg.grl_schedule)
            } else {
                0.0
            };

            let t_start = (step % target_chunks) * cfg.target_batch;
            let t_end = (t_start + cfg.target_batch).min(n_t);
            let target_chunk = &order_t[t_start..t_end];

            let source_caches: Vec<SampleCache> = source_chunk
                .iter()
                .map(|&i| forward(&source_videos[i], &params, with_adv))
                .collect::<Result<_>>()?;
            let chunk_labels: Vec<usize> =
                source_chunk.iter().map(|&i| source_labels[i]).collect();
            let target_caches: Vec<SampleCache> = target_chunk
                .iter()
                .map(|&i| forward(&target_videos[i], &params, with_adv))
                .collect::<Result<_>>()?;

            let weights: Vec<f64> = if cfg.ablation.unweighted_ld || bank.is_none() {
                vec![1.0; target_caches.len()]
            } else {
                let bank_ref = bank.as_ref().expect("checked above");
                let records: Vec<EntropyRecord> = target_chunk
                    .iter()
                    .zip(&target_caches)
                    .map(|(&i, cache)| -> Result<EntropyRecord> {
                        Ok(EntropyRecord {
                            sample_id: target.items[i].id.clone(),
                            entropy: prediction_entropy(&cache.probs)?,
                            predicted_class: argmax_class(&cache.probs),
                        })
                    })
                    .collect::<Result<_>>()?;
                match batch_weights(&records, bank_ref) {
                    Ok(pairs) => pairs.into_iter().map(|(_, w)| w).collect(),
                    Err(e) => {
                        if !weight_warning_logged {
                            eprintln!(
                                "warning: epoch {epoch}: weight computation failed ({e}); \
                                 using all-ones target weights"
                            );
                            weight_warning_logged = true;
                        }
                        vec![1.0; target_caches.len()]
                    }
                }
            };

            let source_rows: Vec<&[f64]> =
                source_caches.iter().map(|c| c.probs.as_slice()).collect();
            let target_rows: Vec<&[f64]> =
                target_caches.iter().map(|c| c.probs.as_slice()).collect();
            sums.l_c += classification_loss(&source_rows, &chunk_labels)?;
            if effective_beta > 0.0 {
                sums.l_e += entropy_max_loss(&target_rows)?;
            }
            if with_adv {
                let source_d: Vec<f64> = source_caches
                    .iter()
                    .map(|c| c.adv.as_ref().expect("adv forward ran").prob)
                    .collect();
                let target_d: Vec<f64> = target_caches
                    .iter()
                    .map(|c| c.adv.as_ref().expect("adv forward ran").prob)
                    .collect();
                sums.l_d += weighted_adversarial_loss(&source_d, &target_d, &weights)?;
            }
            sums.mean_target_weight +=
                weights.iter().sum::<f64>() / weights.len() as f64;

            let batch = BatchRefs {
                source: &source_caches,
                source_labels: &chunk_labels,
                target: &target_caches,
                target_weights: &weights,
            };
            let spec = LossSpec {
                beta: effective_beta,
                grl_lambda: lambda,
                disc_scale,
            };
            let grads = backward(&batch, &params, &spec)?;
            sgd_step(
                &mut params,
                &mut velocity,
                &grads,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
            completed_steps += 1;
        }

        let steps = steps_per_epoch as f64;
        loss_history.push(EpochLosses {
            l_c: sums.l_c / steps,
            l_e: sums.l_e / steps,
            l_d: sums.l_d / steps,
            mean_target_weight: sums.mean_target_weight / steps,
        });
    }

    // The returned bank must describe the *final* parameters.
    let final_bank = match refit_bank(target, &params, cfg) {
        Ok(b) => b,
        Err(e) => match bank {
            Some(b) => {
                eprintln!(
                    "warning: final GEV bank refit failed ({e}); returning the last \
                     successful bank"
                );
                b
            }
            None => return Err(e),
        },
    };

    let state = TrainState {
        params,
        velocity,
        epoch: cfg.epochs,
        progress: completed_steps as f64 / total_steps,
        bank: Some(final_bank.clone()),
        loss_history,
    };
    Ok((state, final_bank))
}
