//! The trainable stack: frame aggregation, a shared affine+ReLU feature
//! transform, a softmax classifier head shared between domains, and a
//! domain discriminator reached through a gradient reversal layer.
//! Gradients are analytic; the checkpoint format is a flat binary file.

use crate::entropy::PROB_EPS;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// K per-frame feature vectors of one video, K >= 1, row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub frames: Vec<Vec<f64>>,
}

impl FrameFeatures {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Domain("a video needs at least one frame".into()));
        }
        let dim = frames[0].len();
        for (k, row) in frames.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::ShapeMismatch {
                    what: format!("frame {k}"),
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("frame {k} has non-finite entries")));
            }
        }
        Ok(FrameFeatures { frames })
    }
}

/// One video-level feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeature {
    pub values: Vec<f64>,
}

/// Arithmetic mean over the K frame rows.
pub fn aggregate_frames(f: &FrameFeatures) -> Result<VideoFeature> {
    let k = f.frames.len();
    if k == 0 {
        return Err(Error::Domain("cannot aggregate zero frames".into()));
    }
    let dim = f.frames[0].len();
    let mut values = vec![0.0; dim];
    for row in &f.frames {
        if row.len() != dim {
            return Err(Error::ShapeMismatch {
                what: "frame row".into(),
                expected: dim,
                got: row.len(),
            });
        }
        for (acc, &x) in values.iter_mut().zip(row) {
            *acc += x;
        }
    }
    for acc in &mut values {
        *acc /= k as f64;
    }
    Ok(VideoFeature { values })
}

/// All trainable weights, stored row-major.
///
/// transform: w1 (d_hidden x d_in) + b1, ReLU.
/// classifier: w2 (c x d_hidden) + b2, softmax.
/// discriminator: w3 (d_adv x d_hidden) + b3, ReLU, then w4 (d_adv) + b4
/// with a logistic output. b4 has length 1 so every block is a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_adv: usize,
    pub c: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    pub w4: Vec<f64>,
    pub b4: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: weights uniform in +-1/sqrt(fan_in),
    /// biases zero.
    pub fn init(d_in: usize, d_hidden: usize, d_adv: usize, c: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_hidden == 0 || d_adv == 0 || c == 0 {
            return Err(Error::InvalidParam(
                "model dimensions must all be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform_block = |len: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| rng.random_range(-bound..bound)).collect()
        };
        Ok(ModelParams {
            d_in,
            d_hidden,
            d_adv,
            c,
            w1: uniform_block(d_hidden * d_in, d_in),
            b1: vec![0.0; d_hidden],
            w2: uniform_block(c * d_hidden, d_hidden),
            b2: vec![0.0; c],
            w3: uniform_block(d_adv * d_hidden, d_hidden),
            b3: vec![0.0; d_adv],
            w4: uniform_block(d_adv, d_adv),
            b4: vec![0.0; 1],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = [
            ("w1", self.w1.len(), self.d_hidden * self.d_in),
            ("b1", self.b1.len(), self.d_hidden),
            ("w2", self.w2.len(), self.c * self.d_hidden),
            ("b2", self.b2.len(), self.c),
            ("w3", self.w3.len(), self.d_adv * self.d_hidden),
            ("b3", self.b3.len(), self.d_adv),
            ("w4", self.w4.len(), self.d_adv),
            ("b4", self.b4.len(), 1),
        ];
        for (name, got, expected) in shapes {
            if got != expected {
                return Err(Error::ShapeMismatch {
                    what: name.into(),
                    expected,
                    got,
                });
            }
        }
        for block in self.blocks() {
            if block.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParam("non-finite model weight".into()));
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> [&Vec<f64>; 8] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.w4, &self.b4,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.b4,
        ]
    }
}

/// Same layout as `ModelParams`, holding gradients or momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    pub w4: Vec<f64>,
    pub b4: Vec<f64>,
}

impl Gradients {
    pub fn zeros(p: &ModelParams) -> Self {
        Gradients {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
            w3: vec![0.0; p.w3.len()],
            b3: vec![0.0; p.b3.len()],
            w4: vec![0.0; p.w4.len()],
            b4: vec![0.0; p.b4.len()],
        }
    }

    pub fn blocks(&self) -> [&Vec<f64>; 8] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.w4, &self.b4,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.b4,
        ]
    }
}

/// Discriminator-side activations of one sample.
#[derive(Debug, Clone)]
pub struct AdvCache {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

/// Everything the backward pass needs about one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleCache {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub adv: Option<AdvCache>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[inline]
fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for i in 0..x.len() {
        acc[i] += scale * x[i];
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    let mut out = b.to_vec();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&w[r * cols..(r + 1) * cols], x);
    }
    out
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Forward pass of one video through the transform and classifier head,
/// optionally also through the discriminator.
pub fn forward(v: &VideoFeature, p: &ModelParams, with_adversarial: bool) -> Result<SampleCache> {
    if v.values.len() != p.d_in {
        return Err(Error::ShapeMismatch {
            what: "input feature".into(),
            expected: p.d_in,
            got: v.values.len(),
        });
    }
    let hidden_pre = affine(&p.w1, &p.b1, &v.values);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&x| x.max(0.0)).collect();
    let logits = affine(&p.w2, &p.b2, &hidden);
    let probs = softmax(&logits);
    let adv = with_adversarial.then(|| {
        let pre = affine(&p.w3, &p.b3, &hidden);
        let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
        let logit = dot(&p.w4, &act) + p.b4[0];
        AdvCache {
            pre,
            act,
            logit,
            prob: logistic(logit),
        }
    });
    Ok(SampleCache {
        input: v.values.clone(),
        hidden_pre,
        hidden,
        logits,
        probs,
        adv,
    })
}

/// Classifier-only forward; `probs` lives in the returned cache.
pub fn forward_classifier(v: &VideoFeature, p: &ModelParams) -> Result<SampleCache> {
    forward(v, p, false)
}

/// Forward including the domain head; the source-domain probability is
/// `cache.adv.prob`.
pub fn forward_discriminator(v: &VideoFeature, p: &ModelParams) -> Result<SampleCache> {
    forward(v, p, true)
}

/// Gradient reversal: identity forward, `-lambda * upstream` backward.
pub fn grl_backward(upstream: &[f64], lambda: f64) -> Vec<f64> {
    upstream.iter().map(|&g| -lambda * g).collect()
}

/// Coefficients of the composite objective for one backward pass.
///
/// The discriminator blocks receive `disc_scale` times the gradient of
/// J_d (the negated weighted adversarial likelihood, which the
/// discriminator minimizes); the transform receives the classification
/// and entropy gradients plus the J_d gradient routed through
/// `grl_backward` with coefficient `grl_lambda`.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub beta: f64,
    pub grl_lambda: f64,
    pub disc_scale: f64,
}

/// One batch of cached forward passes with labels and target weights.
pub struct BatchRefs<'a> {
    pub source: &'a [SampleCache],
    pub source_labels: &'a [usize],
    pub target: &'a [SampleCache],
    pub target_weights: &'a [f64],
}

/// Analytic gradients of the composite loss.
///
/// Classifier head: d(L_c + beta L_e). Discriminator head:
/// disc_scale * dJ_d. Transform: d(L_c + beta L_e) plus the discriminator
/// contribution through the gradient reversal layer with grl_lambda.
pub fn backward(batch: &BatchRefs, p: &ModelParams, spec: &LossSpec) -> Result<Gradients> {
    if batch.source.len() != batch.source_labels.len() {
        return Err(Error::ShapeMismatch {
            what: "source labels".into(),
            expected: batch.source.len(),
            got: batch.source_labels.len(),
        });
    }
    if batch.target.len() != batch.target_weights.len() {
        return Err(Error::ShapeMismatch {
            what: "target weights".into(),
            expected: batch.target.len(),
            got: batch.target_weights.len(),
        });
    }
    if batch.source.is_empty() && batch.target.is_empty() {
        return Err(Error::Domain("backward over an empty batch".into()));
    }

    let adversarial_active = spec.disc_scale != 0.0 || spec.grl_lambda != 0.0;
    let mut g = Gradients::zeros(p);
    let n_s = batch.source.len() as f64;
    let n_t = batch.target.len() as f64;

    // d(logit of adversarial head) of J_d, scaled per domain side, or None
    // when the sample skips the discriminator path.
    let accumulate =
        |g: &mut Gradients, cache: &SampleCache, dlogits: &[f64], du: Option<f64>| -> Result<()> {
            if cache.hidden.len() != p.d_hidden || cache.probs.len() != p.c {
                return Err(Error::ShapeMismatch {
                    what: "cached activations".into(),
                    expected: p.d_hidden,
                    got: cache.hidden.len(),
                });
            }
            // Classifier head and its pull on the hidden layer.
            let mut dh = vec![0.0; p.d_hidden];
            for (r, &dz) in dlogits.iter().enumerate() {
                if dz != 0.0 {
                    axpy(&mut g.w2[r * p.d_hidden..(r + 1) * p.d_hidden], dz, &cache.hidden);
                    g.b2[r] += dz;
                    axpy(&mut dh, dz, &p.w2[r * p.d_hidden..(r + 1) * p.d_hidden]);
                }
            }
            // Discriminator head; du is dJ_d/d(logit), unscaled.
            if let Some(du) = du {
                let adv = cache.adv.as_ref().ok_or_else(|| {
                    Error::MissingCache(
                        "adversarial loss is active but the forward pass skipped the discriminator"
                            .into(),
                    )
                })?;
                let mut dh_disc = vec![0.0; p.d_hidden];
                g.b4[0] += spec.disc_scale * du;
                for a in 0..p.d_adv {
                    g.w4[a] += spec.disc_scale * du * adv.act[a];
                    if adv.pre[a] > 0.0 {
                        let dpre = du * p.w4[a];
                        axpy(
                            &mut g.w3[a * p.d_hidden..(a + 1) * p.d_hidden],
                            spec.disc_scale * dpre,
                            &cache.hidden,
                        );
                        g.b3[a] += spec.disc_scale * dpre;
                        axpy(&mut dh_disc, dpre, &p.w3[a * p.d_hidden..(a + 1) * p.d_hidden]);
                    }
                }
                let reversed = grl_backward(&dh_disc, spec.grl_lambda);
                for (acc, r) in dh.iter_mut().zip(&reversed) {
                    *acc += r;
                }
            }
            // Through the transform ReLU into w1/b1.
            for h in 0..p.d_hidden {
                if cache.hidden_pre[h] > 0.0 && dh[h] != 0.0 {
                    axpy(&mut g.w1[h * p.d_in..(h + 1) * p.d_in], dh[h], &cache.input);
                    g.b1[h] += dh[h];
                }
            }
            Ok(())
        };

    for (cache, &label) in batch.source.iter().zip(batch.source_labels) {
        if label >= p.c {
            return Err(Error::Domain(format!(
                "source label {label} outside [0, {})",
                p.c
            )));
        }
        // L_c = mean(-ln p_label): dL_c/dlogits = (p - onehot) / n_s.
        let mut dlogits: Vec<f64> = cache.probs.iter().map(|&pr| pr / n_s).collect();
        dlogits[label] -= 1.0 / n_s;
        // J_d source term -ln(d)/n_s: dJ_d/du = -(1 - d)/n_s.
        let du = match (&cache.adv, adversarial_active) {
            (_, false) => None,
            (Some(adv), true) => Some(-(1.0 - adv.prob) / n_s),
            (None, true) => {
                return Err(Error::MissingCache(
                    "adversarial loss is active but a source forward pass skipped the discriminator"
                        .into(),
                ))
            }
        };
        accumulate(&mut g, cache, &dlogits, du)?;
    }

    for (cache, &w) in batch.target.iter().zip(batch.target_weights) {
        // L_e = -mean(H): dL_e/dlogit_k = p_k (ln p_k + H) / n_t.
        let mut dlogits = vec![0.0; p.c];
        if spec.beta != 0.0 {
            let h: f64 = cache
                .probs
                .iter()
                .map(|&pr| if pr > 0.0 { -pr * pr.max(PROB_EPS).ln() } else { 0.0 })
                .sum();
            for (k, &pr) in cache.probs.iter().enumerate() {
                dlogits[k] = spec.beta * pr * (pr.max(PROB_EPS).ln() + h) / n_t;
            }
        }
        // J_d target term -w ln(1-d)/n_t: dJ_d/du = w d / n_t.
        let du = match (&cache.adv, adversarial_active) {
            (_, false) => None,
            (Some(adv), true) => Some(w * adv.prob / n_t),
            (None, true) => {
                return Err(Error::MissingCache(
                    "adversarial loss is active but a target forward pass skipped the discriminator"
                        .into(),
                ))
            }
        };
        accumulate(&mut g, cache, &dlogits, du)?;
    }

    Ok(g)
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CEVT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes the checkpoint: magic "CEVT", version, then d_in, d_hidden,
/// d_adv, c as little-endian u32, then every parameter block row-major as
/// little-endian f64 in declaration order.
pub fn save_checkpoint(p: &ModelParams, path: &Path) -> Result<()> {
    p.validate()?;
    let mut out = Vec::with_capacity(24 + 8 * p.blocks().iter().map(|b| b.len()).sum::<usize>());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [p.d_in, p.d_hidden, p.d_adv, p.c] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Checkpoint(format!("dimension {dim} exceeds u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for block in p.blocks() {
        for &x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(Error::Checkpoint("checkpoint truncated".into()));
        }
        let slice = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(slice)
    };

    let magic = take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a CEVT checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    }
    let [d_in, d_hidden, d_adv, c] = dims;
    if d_in == 0 || d_hidden == 0 || d_adv == 0 || c == 0 {
        return Err(Error::Checkpoint("checkpoint header has a zero dimension".into()));
    }

    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let raw = take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
            .collect())
    };
    let params = ModelParams {
        d_in,
        d_hidden,
        d_adv,
        c,
        w1: read_block(d_hidden * d_in)?,
        b1: read_block(d_hidden)?,
        w2: read_block(c * d_hidden)?,
        b2: read_block(c)?,
        w3: read_block(d_adv * d_hidden)?,
        b3: read_block(d_adv)?,
        w4: read_block(d_adv)?,
        b4: read_block(1)?,
    };
    if cursor != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last parameter block",
            bytes.len() - cursor
        )));
    }
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_video(dim: usize, seed: u64) -> VideoFeature {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoFeature {
            values: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        }
    }

    #[test]
    fn aggregate_of_identical_frames_is_the_frame() {
        let v = vec![0.3, -1.2, 4.0];
        let f = FrameFeatures::new(vec![v.clone(); 5]).unwrap();
        assert_eq!(aggregate_frames(&f).unwrap().values, v);
    }

    #[test]
    fn aggregate_means_the_rows() {
        let f = FrameFeatures::new(vec![vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(aggregate_frames(&f).unwrap().values, vec![1.0, 1.0]);
    }

    #[test]
    fn aggregate_matches_columnwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..10).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let f = FrameFeatures::new(frames.clone()).unwrap();
        let got = aggregate_frames(&f).unwrap().values;
        for d in 0..10 {
            let column: f64 = frames.iter().map(|row| row[d]).sum();
            assert!((got[d] - column / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_rejects_zero_frames() {
        assert!(FrameFeatures::new(Vec::new()).is_err());
        let empty = FrameFeatures { frames: Vec::new() };
        assert!(matches!(aggregate_frames(&empty), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_classifier_head_predicts_uniformly() {
        let mut p = ModelParams::init(8, 16, 4, 5, 1).unwrap();
        p.w2.iter_mut().for_each(|w| *w = 0.0);
        p.b2.iter_mut().for_each(|b| *b = 0.0);
        let cache = forward_classifier(&random_video(8, 2), &p).unwrap();
        for &prob in &cache.probs {
            assert!((prob - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn shifting_every_logit_leaves_probs_unchanged() {
        let p = ModelParams::init(8, 16, 4, 5, 3).unwrap();
        let mut shifted = p.clone();
        shifted.b2.iter_mut().for_each(|b| *b += 7.3);
        let v = random_video(8, 4);
        let base = forward_classifier(&v, &p).unwrap();
        let moved = forward_classifier(&v, &shifted).unwrap();
        for (a, b) in base.probs.iter().zip(&moved.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn probs_sum_to_one() {
        let p = ModelParams::init(8, 16, 4, 5, 5).unwrap();
        for seed in 0..20 {
            let cache = forward_classifier(&random_video(8, seed), &p).unwrap();
            let total: f64 = cache.probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(cache.probs.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn zeroed_discriminator_head_outputs_half() {
        let mut p = ModelParams::init(8, 16, 4, 5, 6).unwrap();
        p.w4.iter_mut().for_each(|w| *w = 0.0);
        p.b4[0] = 0.0;
        let cache = forward_discriminator(&random_video(8, 7), &p).unwrap();
        assert_eq!(cache.adv.unwrap().prob, 0.5);
    }

    #[test]
    fn discriminator_output_is_a_probability_and_pure() {
        let p = ModelParams::init(8, 16, 4, 5, 8).unwrap();
        let v = random_video(8, 9);
        let a = forward_discriminator(&v, &p).unwrap();
        let b = forward_discriminator(&v, &p).unwrap();
        let pa = a.adv.unwrap().prob;
        let pb = b.adv.unwrap().prob;
        assert!(pa > 0.0 && pa < 1.0);
        assert_eq!(pa.to_bits(), pb.to_bits());
    }

    #[test]
    fn forward_rejects_wrong_input_dimension() {
        let p = ModelParams::init(8, 16, 4, 5, 10).unwrap();
        let bad = VideoFeature { values: vec![0.0; 7] };
        assert!(matches!(
            forward_classifier(&bad, &p),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn grl_backward_scales_and_flips() {
        assert_eq!(grl_backward(&[1.0, -2.0], 0.0), vec![0.0, 0.0]);
        assert_eq!(grl_backward(&[1.0, -2.0], 1.0), vec![-1.0, 2.0]);
        let g = grl_backward(&[2.0, -4.0], 0.9);
        assert!((g[0] + 1.8).abs() < 1e-15);
        assert!((g[1] - 3.6).abs() < 1e-15);
    }

    fn forward_batch(
        p: &ModelParams,
        dim: usize,
        seeds: std::ops::Range<u64>,
        with_adv: bool,
    ) -> Vec<SampleCache> {
        seeds
            .map(|s| forward(&random_video(dim, s), p, with_adv).unwrap())
            .collect()
    }

    #[test]
    fn zero_weight_targets_contribute_no_gradient_at_all() {
        let p = ModelParams::init(8, 16, 4, 5, 11).unwrap();
        let targets = forward_batch(&p, 8, 100..104, true);
        let batch = BatchRefs {
            source: &[],
            source_labels: &[],
            target: &targets,
            target_weights: &[0.0; 4],
        };
        let spec = LossSpec {
            beta: 0.0,
            grl_lambda: 1.0,
            disc_scale: 1.0,
        };
        let g = backward(&batch, &p, &spec).unwrap();
        for block in g.blocks() {
            assert!(block.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn grl_component_is_linear_in_lambda() {
        let p = ModelParams::init(8, 16, 4, 5, 12).unwrap();
        let source = forward_batch(&p, 8, 200..202, true);
        let targets = forward_batch(&p, 8, 300..302, true);
        let run = |lambda: f64| {
            let batch = BatchRefs {
                source: &source,
                source_labels: &[0, 3],
                target: &targets,
                target_weights: &[0.7, 0.3],
            };
            backward(
                &batch,
                &p,
                &LossSpec {
                    beta: 0.5,
                    grl_lambda: lambda,
                    disc_scale: 0.9,
                },
            )
            .unwrap()
        };
        let (g0, g1, g2) = (run(0.0), run(1.0), run(2.0));
        for (b0, (b1, b2)) in g0.blocks().iter().zip(g1.blocks().iter().zip(g2.blocks())) {
            for i in 0..b0.len() {
                let first = b1[i] - b0[i];
                let second = b2[i] - b1[i];
                assert!(
                    (second - first).abs() <= 1e-12 * first.abs().max(1.0),
                    "non-linear GRL response: {first} vs {second}"
                );
            }
        }
    }

    #[test]
    fn backward_requires_discriminator_caches_when_adversarial() {
        let p = ModelParams::init(8, 16, 4, 5, 13).unwrap();
        let source = forward_batch(&p, 8, 400..402, false);
        let batch = BatchRefs {
            source: &source,
            source_labels: &[0, 1],
            target: &[],
            target_weights: &[],
        };
        let spec = LossSpec {
            beta: 0.0,
            grl_lambda: 0.5,
            disc_scale: 1.0,
        };
        assert!(matches!(
            backward(&batch, &p, &spec),
            Err(Error::MissingCache(_))
        ));
    }

    #[test]
    fn backward_rejects_out_of_range_labels() {
        let p = ModelParams::init(8, 16, 4, 5, 14).unwrap();
        let source = forward_batch(&p, 8, 500..501, true);
        let batch = BatchRefs {
            source: &source,
            source_labels: &[5],
            target: &[],
            target_weights: &[],
        };
        let spec = LossSpec {
            beta: 0.0,
            grl_lambda: 0.0,
            disc_scale: 0.0,
        };
        assert!(matches!(backward(&batch, &p, &spec), Err(Error::Domain(_))));
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cevt");
        let p = ModelParams::init(7, 12, 5, 3, 99).unwrap();
        save_checkpoint(&p, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cevt");
        let p = ModelParams::init(4, 6, 3, 2, 1).unwrap();
        save_checkpoint(&p, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        std::fs::write(&path, &bad_version).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let mut trailing = good.clone();
        trailing.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &trailing).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelParams::init(8, 16, 4, 5, 42).unwrap();
        let b = ModelParams::init(8, 16, 4, 5, 42).unwrap();
        let c = ModelParams::init(8, 16, 4, 5, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.b1.iter().all(|&x| x == 0.0));
        assert!(a.w1.iter().all(|&x| x.abs() < 1.0 / (8.0_f64).sqrt()));
    }
}
