//! The five subcommand executors. Each takes a validated RunConfig,
//! reads and writes only the paths named in it, and reports every
//! artifact it produces on stdout.

use crate::config::{CliError, CliResult, RunConfig, SweepValue};
use cevt_core::data::{generate_synthetic, load_features, save_features, Dataset, DomainTag};
use cevt_core::entropy::{argmax_class, prediction_entropy, ClassGevBank};
use cevt_core::gev::{fit_gev, FitOptions};
use cevt_core::model::{forward_classifier, load_checkpoint, save_checkpoint, ModelParams};
use cevt_core::openset::{compute_metrics, predict_open_set, MetricsReport};
use cevt_core::training::{loss_csv, TrainConfig};
use std::path::{Path, PathBuf};

/// The output directory; parse-time validation created it already.
fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out.clone().expect("validated --out")
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string(value).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn generate(cfg: &RunConfig) -> CliResult<()> {
    let out = out_dir(cfg);
    let (source, target) = generate_synthetic(&cfg.synth)?;
    let source_path = out.join("source.features");
    let target_path = out.join("target.features");
    save_features(&source, &source_path)?;
    println!("wrote {}", source_path.display());
    save_features(&target, &target_path)?;
    println!("wrote {}", target_path.display());
    Ok(())
}

/// Loads the --source/--target manifests and checks they form a usable
/// adaptation pair before any training time is spent.
fn load_training_pair(cfg: &RunConfig) -> CliResult<(Dataset, Dataset)> {
    let source_path = cfg.paths.source.clone().expect("validated --source");
    let target_path = cfg.paths.target.clone().expect("validated --target");
    let source = load_features(&source_path)?;
    let target = load_features(&target_path)?;
    if source.domain != DomainTag::Source {
        return Err(CliError::Runtime(format!(
            "--source manifest {} holds target-domain videos",
            source_path.display()
        )));
    }
    if target.domain != DomainTag::Target {
        return Err(CliError::Runtime(format!(
            "--target manifest {} holds source-domain videos",
            target_path.display()
        )));
    }
    if source.c_known != target.c_known {
        return Err(CliError::Runtime(format!(
            "known-class counts disagree: source declares {}, target declares {}",
            source.c_known, target.c_known
        )));
    }
    Ok((source, target))
}

/// Per-class fitted parameters and thresholds as CSV rows for plotting.
fn bank_csv(bank: &ClassGevBank) -> String {
    let mut out = String::from("class,mu,sigma,xi,threshold,fallback\n");
    for (i, params) in bank.per_class.iter().enumerate() {
        let p = params.as_ref().expect("trained banks cover every class");
        out.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            p.mu, p.sigma, p.xi, bank.thresholds[i], bank.fallback_used[i]
        ));
    }
    out
}

/// One row per target video: its predicted class and entropy. Rows
/// sharing a class form that class's entropy group; the entropy column
/// is histogram material.
fn entropy_groups_csv(target: &Dataset, params: &ModelParams) -> CliResult<String> {
    let mut out = String::from("sample_id,predicted_class,entropy\n");
    for item in &target.items {
        let video = item.features.to_video()?;
        let cache = forward_classifier(&video, params)?;
        let entropy = prediction_entropy(&cache.probs)?;
        let class = argmax_class(&cache.probs);
        out.push_str(&format!("{},{class},{entropy}\n", item.id));
    }
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let out = out_dir(cfg);
    let (source, target) = load_training_pair(cfg)?;
    let (state, bank) = cevt_core::training::train(&source, &target, &cfg.train)?;

    let checkpoint_path = out.join("model.cevt");
    save_checkpoint(&state.params, &checkpoint_path)?;
    println!("wrote {}", checkpoint_path.display());
    write_text(&out.join("loss.csv"), &loss_csv(&state.loss_history))?;
    write_text(&out.join("bank.json"), &to_json(&bank)?)?;
    write_text(&out.join("bank.csv"), &bank_csv(&bank))?;
    write_text(
        &out.join("entropy_groups.csv"),
        &entropy_groups_csv(&target, &state.params)?,
    )?;
    Ok(())
}

/// One scored target video, kept for the evaluation dump files.
struct SampleRow {
    id: String,
    predicted: usize,
    truth: usize,
    entropy: f64,
    cdf_value: f64,
    hidden: Vec<f64>,
}

/// Runs the classifier over every target video, rejects unknowns through
/// the bank, and scores against ground truth. Truth labels at or above
/// the known count collapse to the single unknown index.
fn score_target(
    params: &ModelParams,
    bank: &ClassGevBank,
    target: &Dataset,
) -> CliResult<(MetricsReport, Vec<SampleRow>)> {
    let c = bank.class_count();
    let mut pairs = Vec::with_capacity(target.len());
    let mut rows = Vec::with_capacity(target.len());
    for item in &target.items {
        let truth_label = item.label.ok_or_else(|| {
            CliError::Runtime(format!(
                "target video {} has no label; evaluation needs ground truth",
                item.id
            ))
        })?;
        let truth = truth_label.min(c);
        let video = item.features.to_video()?;
        let cache = forward_classifier(&video, params)?;
        let pred = predict_open_set(&item.id, &cache.probs, bank)?;
        pairs.push((pred.label, truth));
        rows.push(SampleRow {
            id: item.id.clone(),
            predicted: pred.label,
            truth,
            entropy: pred.entropy,
            cdf_value: pred.cdf_value,
            hidden: cache.hidden,
        });
    }
    let report = compute_metrics(&pairs, c)?;
    Ok((report, rows))
}

fn predictions_csv(rows: &[SampleRow]) -> String {
    let mut out = String::from("sample_id,predicted,truth,entropy,cdf\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id, r.predicted, r.truth, r.entropy, r.cdf_value
        ));
    }
    out
}

/// Transformed target features, one video per row, for external
/// embedding or plotting tools.
fn features_csv(rows: &[SampleRow]) -> String {
    let width = rows.first().map_or(0, |r| r.hidden.len());
    let mut out = String::from("sample_id");
    for i in 0..width {
        out.push_str(&format!(",h{i}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.id);
        for v in &r.hidden {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<()> {
    let out = out_dir(cfg);
    let checkpoint_path = cfg.paths.checkpoint.clone().expect("validated --checkpoint");
    let bank_path = cfg.paths.bank.clone().expect("validated --bank");
    let target_path = cfg.paths.target.clone().expect("validated --target");

    let params = load_checkpoint(&checkpoint_path)?;
    let bank_text = std::fs::read_to_string(&bank_path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", bank_path.display())))?;
    let bank: ClassGevBank = serde_json::from_str(&bank_text)
        .map_err(|e| CliError::Runtime(format!("bank file {}: {e}", bank_path.display())))?;
    bank.validate()?;
    let target = load_features(&target_path)?;

    if params.c != bank.class_count() {
        return Err(CliError::Runtime(format!(
            "checkpoint classifies {} classes but the bank covers {}",
            params.c,
            bank.class_count()
        )));
    }
    if params.c != target.c_known {
        return Err(CliError::Runtime(format!(
            "checkpoint classifies {} known classes but the dataset declares {}",
            params.c, target.c_known
        )));
    }
    let dim = target.dim()?;
    if params.d_in != dim {
        return Err(CliError::Runtime(format!(
            "checkpoint expects {}-dimensional features but the dataset has {}",
            params.d_in, dim
        )));
    }

    // An explicit --delta flag re-levels the stored thresholds; otherwise
    // the bank keeps the level it was trained with.
    let bank = if cfg.overrides.contains_key("delta") {
        bank.with_delta(cfg.train.delta)?
    } else {
        bank
    };

    let (report, rows) = score_target(&params, &bank, &target)?;
    write_text(&out.join("report.json"), &to_json(&report)?)?;
    write_text(&out.join("predictions.csv"), &predictions_csv(&rows))?;
    write_text(&out.join("features.csv"), &features_csv(&rows))?;
    print!("{}", report.render_table());
    Ok(())
}

pub fn fit_gev_cmd(cfg: &RunConfig) -> CliResult<()> {
    let out = out_dir(cfg);
    let input_path = cfg.paths.input.clone().expect("validated --input");
    let text = std::fs::read_to_string(&input_path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", input_path.display())))?;
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let x: f64 = line.parse().map_err(|_| {
            CliError::Runtime(format!(
                "{}: line {} is not a number: '{line}'",
                input_path.display(),
                idx + 1
            ))
        })?;
        samples.push(x);
    }
    let opts = FitOptions {
        seed: cfg.train.seed,
        ..FitOptions::default()
    };
    let fitted = fit_gev(&samples, &opts)?;
    let nll = fitted.nll(&samples)?;
    let json = serde_json::json!({
        "mu": fitted.mu,
        "sigma": fitted.sigma,
        "xi": fitted.xi,
        "nll": nll,
    })
    .to_string();
    println!("{json}");
    write_text(&out.join("gev.json"), &json)?;
    Ok(())
}

/// One sweep cell: a full training configuration plus the swept
/// dimension values that name its report file and summary row.
struct SweepCell {
    train: TrainConfig,
    file: String,
    swept: Vec<(&'static str, f64)>,
}

fn singleton_or(list: &[SweepValue], fallback: f64) -> Vec<SweepValue> {
    if list.is_empty() {
        vec![SweepValue {
            token: fallback.to_string(),
            value: fallback,
        }]
    } else {
        list.to_vec()
    }
}

fn sweep_cells(cfg: &RunConfig) -> Vec<SweepCell> {
    if !cfg.sweep.deltas.is_empty() {
        return cfg
            .sweep
            .deltas
            .iter()
            .map(|d| {
                let mut train = cfg.train.clone();
                train.delta = d.value;
                SweepCell {
                    train,
                    file: format!("report_delta{}.json", d.token),
                    swept: vec![("delta", d.value)],
                }
            })
            .collect();
    }
    let betas = singleton_or(&cfg.sweep.betas, cfg.train.beta);
    let gammas = singleton_or(&cfg.sweep.gammas, cfg.train.gamma);
    let mut cells = Vec::with_capacity(betas.len() * gammas.len());
    for b in &betas {
        for g in &gammas {
            let mut train = cfg.train.clone();
            train.beta = b.value;
            train.gamma = g.value;
            cells.push(SweepCell {
                train,
                file: format!("report_beta{}_gamma{}.json", b.token, g.token),
                swept: vec![("beta", b.value), ("gamma", g.value)],
            });
        }
    }
    cells
}

/// Worker cap: CEVT_THREADS when set and positive, the machine's
/// parallelism when unset or 0.
fn thread_cap() -> CliResult<usize> {
    let auto = || {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    };
    match std::env::var("CEVT_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(auto()),
        Err(std::env::VarError::NotUnicode(_)) => Err(CliError::Config(
            "CEVT_THREADS must be a non-negative integer".into(),
        )),
        Ok(raw) => {
            let n: usize = raw.trim().parse().map_err(|_| {
                CliError::Config(format!(
                    "CEVT_THREADS must be a non-negative integer, got '{raw}'"
                ))
            })?;
            Ok(if n == 0 { auto() } else { n })
        }
    }
}

fn run_cell(source: &Dataset, target: &Dataset, train: &TrainConfig) -> CliResult<MetricsReport> {
    let (state, bank) = cevt_core::training::train(source, target, train)?;
    let (report, _) = score_target(&state.params, &bank, target)?;
    Ok(report)
}

pub fn sweep(cfg: &RunConfig) -> CliResult<()> {
    let out = out_dir(cfg);
    let (source, target) = load_training_pair(cfg)?;
    let cells = sweep_cells(cfg);
    for cell in &cells {
        cell.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }

    let threads = thread_cap()?.max(1);
    let mut results: Vec<Option<CliResult<MetricsReport>>> =
        (0..cells.len()).map(|_| None).collect();
    for (wave_idx, wave) in cells.chunks(threads).enumerate() {
        let base = wave_idx * threads;
        let slots = &mut results[base..base + wave.len()];
        std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|cell| scope.spawn(|| run_cell(&source, &target, &cell.train)))
                .collect();
            for (handle, slot) in handles.into_iter().zip(slots.iter_mut()) {
                *slot = Some(handle.join().unwrap_or_else(|_| {
                    Err(CliError::Runtime("sweep worker panicked".into()))
                }));
            }
        });
        for slot in slots.iter_mut() {
            if let Some(Err(_)) = slot {
                let err = slot.take().unwrap().unwrap_err();
                return Err(err);
            }
        }
    }

    let dim_names: Vec<&str> = cells[0].swept.iter().map(|(k, _)| *k).collect();
    let mut summary = format!("{},all,os,os_star,unk,hos\n", dim_names.join(","));
    for (cell, slot) in cells.iter().zip(results.into_iter()) {
        let report = slot.expect("every cell ran").expect("errors returned above");
        write_text(&out.join(&cell.file), &to_json(&report)?)?;
        let mut row: Vec<String> = cell.swept.iter().map(|(_, v)| v.to_string()).collect();
        row.extend(
            [report.all, report.os, report.os_star, report.unk, report.hos]
                .iter()
                .map(|v| v.to_string()),
        );
        summary.push_str(&row.join(","));
        summary.push('\n');
        let label: Vec<String> = cell
            .swept
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        println!("cell {}: hos={:.2}", label.join(" "), report.hos);
    }
    write_text(&out.join("summary.csv"), &summary)?;
    Ok(())
}
