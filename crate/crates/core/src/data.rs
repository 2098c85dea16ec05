//! Synthetic domain-shift data generation, the text feature-manifest
//! format, and the known/unknown class split rule.

use crate::error::{Error, Result};
use crate::model::{aggregate_frames, FrameFeatures, VideoFeature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;

/// Class means are placed on a sphere of this radius; unknown-class means
/// sit on a sphere 1.5x farther out so desk-scale separation is feasible.
pub const MEAN_RADIUS: f64 = 3.0;
pub const UNKNOWN_RADIUS_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn letter(self) -> char {
        match self {
            DomainTag::Source => 's',
            DomainTag::Target => 't',
        }
    }
}

/// Frame-level or already-aggregated video-level features.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Frames(FrameFeatures),
    Video(VideoFeature),
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Frames(f) => f.frames[0].len(),
            Features::Video(v) => v.values.len(),
        }
    }

    pub fn frame_count(&self) -> usize {
        match self {
            Features::Frames(f) => f.frames.len(),
            Features::Video(_) => 1,
        }
    }

    /// The video-level vector: mean over frames, or the stored vector.
    pub fn to_video(&self) -> Result<VideoFeature> {
        match self {
            Features::Frames(f) => aggregate_frames(f),
            Features::Video(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataItem {
    pub id: String,
    pub features: Features,
    pub label: Option<usize>,
}

/// A labeled source or (for training purposes) unlabeled target split.
/// Target labels, when present, are used only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<DataItem>,
    pub domain: DomainTag,
    pub c_known: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> Result<usize> {
        self.items
            .first()
            .map(|i| i.features.dim())
            .ok_or_else(|| Error::Domain("empty dataset has no dimension".into()))
    }

    /// Every item aggregated to its video-level vector, input order kept.
    pub fn video_features(&self) -> Result<Vec<VideoFeature>> {
        self.items.iter().map(|i| i.features.to_video()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_known == 0 {
            return Err(Error::InvalidParam("dataset with zero known classes".into()));
        }
        let dim = self.dim()?;
        for item in &self.items {
            if item.features.dim() != dim {
                return Err(Error::ShapeMismatch {
                    what: format!("features of {}", item.id),
                    expected: dim,
                    got: item.features.dim(),
                });
            }
            if self.domain == DomainTag::Source {
                match item.label {
                    Some(l) if l < self.c_known => {}
                    Some(l) => {
                        return Err(Error::Domain(format!(
                            "source video {} labeled {l}, outside [0, {})",
                            item.id, self.c_known
                        )))
                    }
                    None => {
                        return Err(Error::Domain(format!(
                            "source video {} is unlabeled",
                            item.id
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generator controls for the synthetic covariate-shift benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub c_known: usize,
    pub c_unknown: usize,
    pub dim: usize,
    pub per_class_source: usize,
    pub per_class_target: usize,
    pub frames_per_video: usize,
    pub cluster_spread: f64,
    pub shift_angle_scale: f64,
    pub shift_offset_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            c_known: 6,
            c_unknown: 3,
            dim: 32,
            per_class_source: 200,
            per_class_target: 200,
            frames_per_video: 4,
            cluster_spread: 0.4,
            shift_angle_scale: 0.02,
            shift_offset_scale: 0.3,
            noise: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.c_known >= 2, "c_known must be >= 2"),
            (self.dim >= 2, "dim must be >= 2"),
            (self.per_class_source >= 1, "per_class_source must be >= 1"),
            (self.per_class_target >= 1, "per_class_target must be >= 1"),
            (self.frames_per_video >= 1, "frames_per_video must be >= 1"),
            (
                self.cluster_spread > 0.0 && self.cluster_spread.is_finite(),
                "cluster_spread must be finite and > 0",
            ),
            (
                self.shift_angle_scale >= 0.0 && self.shift_angle_scale.is_finite(),
                "shift_angle_scale must be finite and >= 0",
            ),
            (
                self.shift_offset_scale >= 0.0 && self.shift_offset_scale.is_finite(),
                "shift_offset_scale must be finite and >= 0",
            ),
            (
                self.noise >= 0.0 && self.noise.is_finite(),
                "noise must be finite and >= 0",
            ),
        ];
        for (ok, message) in checks {
            if !ok {
                return Err(Error::InvalidParam(message.to_string()));
            }
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v = gaussian_vec(rng, dim);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Row-major orthogonal matrix: Gram-Schmidt on (1-angle) I + angle G with
/// G standard Gaussian. angle = 0 yields the identity exactly.
fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize, angle: f64) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = (0..dim)
        .map(|r| {
            let mut row = gaussian_vec(rng, dim);
            for (c, x) in row.iter_mut().enumerate() {
                *x *= angle;
                if c == r {
                    *x += 1.0 - angle;
                }
            }
            row
        })
        .collect();
    for r in 0..dim {
        for prev in 0..r {
            let proj = m[r].iter().zip(&m[prev]).map(|(a, b)| a * b).sum::<f64>();
            for c in 0..dim {
                m[r][c] -= proj * m[prev][c];
            }
        }
        let norm = m[r].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Probability-zero degeneracy of the Gaussian draw.
            m[r][r] = 1.0;
        } else {
            m[r].iter_mut().for_each(|x| *x /= norm);
        }
    }
    m
}

fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Draws class means on a sphere, samples spherical clusters, applies a
/// seeded orthogonal-plus-offset shift to the target domain, and expands
/// every sample into `frames_per_video` noisy frames. Deterministic per
/// seed; the source is exactly class-balanced.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c_total = cfg.c_known + cfg.c_unknown;

    let means: Vec<Vec<f64>> = (0..c_total)
        .map(|class| {
            let radius = if class < cfg.c_known {
                MEAN_RADIUS
            } else {
                MEAN_RADIUS * UNKNOWN_RADIUS_FACTOR
            };
            let mut v = unit_vec(&mut rng, cfg.dim);
            v.iter_mut().for_each(|x| *x *= radius);
            v
        })
        .collect();

    let shift = random_orthogonal(&mut rng, cfg.dim, cfg.shift_angle_scale);
    let offset: Vec<f64> = {
        let mut v = unit_vec(&mut rng, cfg.dim);
        v.iter_mut().for_each(|x| *x *= cfg.shift_offset_scale);
        v
    };

    let make_item = |rng: &mut ChaCha8Rng,
                         id: String,
                         video: Vec<f64>,
                         label: usize|
     -> Result<DataItem> {
        let frames: Vec<Vec<f64>> = (0..cfg.frames_per_video)
            .map(|_| {
                video
                    .iter()
                    .map(|&x| x + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(DataItem {
            id,
            features: Features::Frames(FrameFeatures::new(frames)?),
            label: Some(label),
        })
    };

    let mut source_items = Vec::with_capacity(cfg.c_known * cfg.per_class_source);
    for class in 0..cfg.c_known {
        for _ in 0..cfg.per_class_source {
            let video: Vec<f64> = means[class]
                .iter()
                .map(|&m| m + cfg.cluster_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let id = format!("s{:05}", source_items.len());
            source_items.push(make_item(&mut rng, id, video, class)?);
        }
    }

    let mut target_items = Vec::with_capacity(c_total * cfg.per_class_target);
    for class in 0..c_total {
        for _ in 0..cfg.per_class_target {
            let raw: Vec<f64> = means[class]
                .iter()
                .map(|&m| m + cfg.cluster_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut video = matvec(&shift, &raw);
            for (v, o) in video.iter_mut().zip(&offset) {
                *v += o;
            }
            let id = format!("t{:05}", target_items.len());
            target_items.push(make_item(&mut rng, id, video, class)?);
        }
    }

    let source = Dataset {
        items: source_items,
        domain: DomainTag::Source,
        c_known: cfg.c_known,
    };
    let target = Dataset {
        items: target_items,
        domain: DomainTag::Target,
        c_known: cfg.c_known,
    };
    source.validate()?;
    target.validate()?;
    Ok((source, target))
}

/// Writes the manifest: header `cevt-features v1 D=<dim> K=<frames>
/// C=<classes>`, then per video an `<id>,<domain>,<label or -1>` line
/// followed by K lines of D comma-separated floats (shortest round-trip
/// decimal form).
pub fn save_features(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    if ds.is_empty() {
        return Err(Error::Domain("refusing to save an empty dataset".into()));
    }
    let dim = ds.dim()?;
    let k = ds.items[0].features.frame_count();
    let mut out = String::new();
    out.push_str(&format!(
        "cevt-features v1 D={dim} K={k} C={}\n",
        ds.c_known
    ));
    for item in &ds.items {
        if item.features.frame_count() != k {
            return Err(Error::ShapeMismatch {
                what: format!("frame count of {}", item.id),
                expected: k,
                got: item.features.frame_count(),
            });
        }
        if item.id.contains(',') || item.id.contains('\n') {
            return Err(Error::InvalidParam(format!(
                "video id {:?} contains a separator",
                item.id
            )));
        }
        let label = item.label.map_or(-1, |l| l as i64);
        out.push_str(&format!("{},{},{label}\n", item.id, ds.domain.letter()));
        let mut write_row = |row: &[f64]| {
            let mut first = true;
            for &x in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{x}"));
                first = false;
            }
            out.push('\n');
        };
        match &item.features {
            Features::Frames(f) => f.frames.iter().for_each(|row| write_row(row)),
            Features::Video(v) => write_row(&v.values),
        }
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(out.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Parses a manifest written by `save_features` (or an external tool).
/// All failures carry the 1-based line number. A K=1 file loads as
/// video-level features, skipping frame storage.
pub fn load_features(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let display_path = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: display_path.clone(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header line".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "cevt-features" || fields[1] != "v1" {
        return Err(parse_err(
            1,
            "header must be `cevt-features v1 D=<dim> K=<frames> C=<classes>`".into(),
        ));
    }
    let dim_field = |field: &str, prefix: &str| -> Result<usize> {
        field
            .strip_prefix(prefix)
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&v| v >= 1)
            .ok_or_else(|| parse_err(1, format!("bad header field {field:?}")))
    };
    let dim = dim_field(fields[2], "D=")?;
    let k = dim_field(fields[3], "K=")?;
    let c_known = dim_field(fields[4], "C=")?;

    let mut items = Vec::new();
    let mut domain: Option<DomainTag> = None;
    while let Some((idx, line)) = lines.next() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected `<id>,<domain>,<label>`, got {} fields", parts.len()),
            ));
        }
        let id = parts[0].trim();
        if id.is_empty() {
            return Err(parse_err(line_no, "empty video id".into()));
        }
        let this_domain = match parts[1].trim() {
            "s" => DomainTag::Source,
            "t" => DomainTag::Target,
            other => {
                return Err(parse_err(
                    line_no,
                    format!("domain must be `s` or `t`, got {other:?}"),
                ))
            }
        };
        match domain {
            None => domain = Some(this_domain),
            Some(d) if d != this_domain => {
                return Err(parse_err(
                    line_no,
                    "manifest mixes source and target videos".into(),
                ))
            }
            _ => {}
        }
        let raw_label: i64 = parts[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad label {:?}", parts[2])))?;
        let label = match raw_label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(parse_err(line_no, format!("bad label {l}"))),
        };
        if this_domain == DomainTag::Source {
            match label {
                Some(l) if l < c_known => {}
                Some(l) => {
                    return Err(parse_err(
                        line_no,
                        format!("source label {l} outside [0, {c_known})"),
                    ))
                }
                None => return Err(parse_err(line_no, "source videos must be labeled".into())),
            }
        }

        let mut rows = Vec::with_capacity(k);
        for frame_idx in 0..k {
            let (ridx, row_line) = lines.next().ok_or_else(|| {
                parse_err(
                    idx + 2 + frame_idx,
                    format!("file ends inside video {id}: expected {k} feature rows"),
                )
            })?;
            let row_no = ridx + 1;
            let mut row = Vec::with_capacity(dim);
            for value in row_line.split(',') {
                let x: f64 = value.trim().parse().map_err(|_| {
                    parse_err(row_no, format!("bad feature value {value:?}"))
                })?;
                if !x.is_finite() {
                    return Err(parse_err(row_no, format!("non-finite feature value {x}")));
                }
                row.push(x);
            }
            if row.len() != dim {
                return Err(parse_err(
                    row_no,
                    format!("expected {dim} values, got {}", row.len()),
                ));
            }
            rows.push(row);
        }
        let features = if k == 1 {
            Features::Video(VideoFeature {
                values: rows.pop().expect("k >= 1"),
            })
        } else {
            Features::Frames(FrameFeatures::new(rows).map_err(|e| {
                parse_err(line_no, format!("invalid frames for video {id}: {e}"))
            })?)
        };
        items.push(DataItem {
            id: id.to_string(),
            features,
            label,
        });
    }

    let domain = domain.ok_or_else(|| {
        parse_err(text.lines().count().max(1), "manifest contains no videos".into())
    })?;
    let ds = Dataset {
        items,
        domain,
        c_known,
    };
    ds.validate()?;
    Ok(ds)
}

/// Known/unknown class split: the first ceil(c_total/2) class indices stay
/// known; the rest collapse onto the single unknown label `c_known`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    pub unknown_label: usize,
    pub relabeled: Vec<usize>,
}

pub fn split_known_unknown(labels: &[usize], c_total: usize) -> Result<SplitResult> {
    if c_total < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 classes to split, got {c_total}"
        )));
    }
    let c_known = c_total.div_ceil(2);
    let mut relabeled = Vec::with_capacity(labels.len());
    for &l in labels {
        if l >= c_total {
            return Err(Error::Domain(format!(
                "label {l} outside [0, {c_total})"
            )));
        }
        relabeled.push(if l < c_known { l } else { c_known });
    }
    Ok(SplitResult {
        known: (0..c_known).collect(),
        unknown: (c_known..c_total).collect(),
        unknown_label: c_known,
        relabeled,
    })
}
