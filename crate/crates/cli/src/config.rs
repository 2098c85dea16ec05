//! Flat key=value configuration with flag overrides. Every
//! hyperparameter lives in one namespace shared by the file and the
//! `--key value` flags; unknown keys are rejected by name.

use cevt_core::data::SyntheticConfig;
use cevt_core::training::TrainConfig;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

/// Failures split by exit code: configuration problems exit 2, runtime
/// problems exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Runtime(m) => write!(f, "runtime: {m}"),
        }
    }
}

impl From<cevt_core::Error> for CliError {
    fn from(err: cevt_core::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Evaluate,
    FitGev,
    Sweep,
}

impl Command {
    fn from_name(name: &str) -> Option<Command> {
        match name {
            "generate" => Some(Command::Generate),
            "train" => Some(Command::Train),
            "evaluate" => Some(Command::Evaluate),
            "fit-gev" => Some(Command::FitGev),
            "sweep" => Some(Command::Sweep),
            _ => None,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Paths {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

/// One swept value, keeping the flag token for stable file names.
#[derive(Debug, Clone)]
pub struct SweepValue {
    pub token: String,
    pub value: f64,
}

#[derive(Debug, Default, Clone)]
pub struct SweepSpec {
    pub betas: Vec<SweepValue>,
    pub gammas: Vec<SweepValue>,
    pub deltas: Vec<SweepValue>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub paths: Paths,
    pub train: TrainConfig,
    pub synth: SyntheticConfig,
    /// Keys set by command-line flags, in flag order.
    pub overrides: BTreeMap<String, String>,
    pub sweep: SweepSpec,
    pub print_config: bool,
}

pub const USAGE: &str = "usage: cevt <generate|train|evaluate|fit-gev|sweep> [--config FILE] \
[--key value ...] [--disable-le] [--disable-ld] [--unweighted-ld] [--print-config] \
[--source FILE] [--target FILE] [--checkpoint FILE] [--bank FILE] [--input FILE] \
[--out DIR] [--betas LIST] [--gammas LIST] [--deltas LIST]";

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("key '{key}' has unparsable value '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!(
            "key '{key}' expects true or false, got '{value}'"
        ))),
    }
}

/// Applies one hyperparameter. `seed` feeds both the generator and the
/// trainer so one value pins the whole pipeline.
fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> CliResult<()> {
    match key {
        "beta" => cfg.train.beta = parse_num(key, value)?,
        "gamma" => cfg.train.gamma = parse_num(key, value)?,
        "delta" => cfg.train.delta = parse_num(key, value)?,
        "lr0" => cfg.train.lr0 = parse_num(key, value)?,
        "momentum" => cfg.train.momentum = parse_num(key, value)?,
        "weight_decay" => cfg.train.weight_decay = parse_num(key, value)?,
        "source_batch" => cfg.train.source_batch = parse_num(key, value)?,
        "target_batch" => cfg.train.target_batch = parse_num(key, value)?,
        "epochs" => cfg.train.epochs = parse_num(key, value)?,
        "refit_every" => cfg.train.refit_every = parse_num(key, value)?,
        "warmup_epochs" => cfg.train.warmup_epochs = parse_num(key, value)?,
        "grl_schedule" => cfg.train.grl_schedule = parse_bool(key, value)?,
        "disable_le" => cfg.train.ablation.disable_le = parse_bool(key, value)?,
        "disable_ld" => cfg.train.ablation.disable_ld = parse_bool(key, value)?,
        "unweighted_ld" => cfg.train.ablation.unweighted_ld = parse_bool(key, value)?,
        "d_hidden" => cfg.train.d_hidden = parse_num(key, value)?,
        "d_adv" => cfg.train.d_adv = parse_num(key, value)?,
        "seed" => {
            let seed: u64 = parse_num(key, value)?;
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }
        "c_known" => cfg.synth.c_known = parse_num(key, value)?,
        "c_unknown" => cfg.synth.c_unknown = parse_num(key, value)?,
        "dim" => cfg.synth.dim = parse_num(key, value)?,
        "per_class_source" => cfg.synth.per_class_source = parse_num(key, value)?,
        "per_class_target" => cfg.synth.per_class_target = parse_num(key, value)?,
        "frames_per_video" => cfg.synth.frames_per_video = parse_num(key, value)?,
        "cluster_spread" => cfg.synth.cluster_spread = parse_num(key, value)?,
        "shift_angle_scale" => cfg.synth.shift_angle_scale = parse_num(key, value)?,
        "shift_offset_scale" => cfg.synth.shift_offset_scale = parse_num(key, value)?,
        "noise" => cfg.synth.noise = parse_num(key, value)?,
        _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
    }
    Ok(())
}

/// Renders the effective hyperparameters in the config-file syntax.
pub fn render_config(cfg: &RunConfig) -> String {
    let t = &cfg.train;
    let s = &cfg.synth;
    let mut out = String::new();
    let mut push = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
    push("beta", t.beta.to_string());
    push("gamma", t.gamma.to_string());
    push("delta", t.delta.to_string());
    push("lr0", t.lr0.to_string());
    push("momentum", t.momentum.to_string());
    push("weight_decay", t.weight_decay.to_string());
    push("source_batch", t.source_batch.to_string());
    push("target_batch", t.target_batch.to_string());
    push("epochs", t.epochs.to_string());
    push("refit_every", t.refit_every.to_string());
    push("warmup_epochs", t.warmup_epochs.to_string());
    push("grl_schedule", t.grl_schedule.to_string());
    push("disable_le", t.ablation.disable_le.to_string());
    push("disable_ld", t.ablation.disable_ld.to_string());
    push("unweighted_ld", t.ablation.unweighted_ld.to_string());
    push("d_hidden", t.d_hidden.to_string());
    push("d_adv", t.d_adv.to_string());
    push("seed", t.seed.to_string());
    push("c_known", s.c_known.to_string());
    push("c_unknown", s.c_unknown.to_string());
    push("dim", s.dim.to_string());
    push("per_class_source", s.per_class_source.to_string());
    push("per_class_target", s.per_class_target.to_string());
    push("frames_per_video", s.frames_per_video.to_string());
    push("cluster_spread", s.cluster_spread.to_string());
    push("shift_angle_scale", s.shift_angle_scale.to_string());
    push("shift_offset_scale", s.shift_offset_scale.to_string());
    push("noise", s.noise.to_string());
    out
}

fn parse_config_file(cfg: &mut RunConfig, path: &PathBuf) -> CliResult<()> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read config file {}: {e}", path.display()))
    })?;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "config line {} is not key=value: '{line}'",
                idx + 1
            ))
        })?;
        apply_key(cfg, key.trim(), value.trim())?;
    }
    Ok(())
}

fn parse_sweep_list(flag: &str, value: &str) -> CliResult<Vec<SweepValue>> {
    let mut out = Vec::new();
    for token in value.split(',') {
        let token = token.trim();
        let parsed: f64 = token.parse().map_err(|_| {
            CliError::Config(format!("{flag} entry '{token}' is not a number"))
        })?;
        out.push(SweepValue {
            token: token.to_string(),
            value: parsed,
        });
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{flag} list is empty")));
    }
    Ok(out)
}

/// Full argument grammar: subcommand, then `--flag [value]` pairs. The
/// config file applies first, then flags in order.
pub fn parse_args(args: &[String]) -> CliResult<RunConfig> {
    let command_name = args
        .first()
        .ok_or_else(|| CliError::Config(format!("missing subcommand; {USAGE}")))?;
    let command = Command::from_name(command_name).ok_or_else(|| {
        CliError::Config(format!("unknown subcommand '{command_name}'; {USAGE}"))
    })?;

    let mut cfg = RunConfig {
        command,
        paths: Paths::default(),
        train: TrainConfig::default(),
        synth: SyntheticConfig::default(),
        overrides: BTreeMap::new(),
        sweep: SweepSpec::default(),
        print_config: false,
    };

    // First pass picks up --config so the file applies before any flag.
    let mut idx = 1;
    let mut flag_keys: Vec<(String, String)> = Vec::new();
    while idx < args.len() {
        let flag = &args[idx];
        let name = flag.strip_prefix("--").ok_or_else(|| {
            CliError::Config(format!("unexpected positional argument '{flag}'; {USAGE}"))
        })?;
        let mut take_value = || -> CliResult<String> {
            idx += 1;
            args.get(idx)
                .cloned()
                .ok_or_else(|| CliError::Config(format!("flag --{name} needs a value")))
        };
        match name {
            "print-config" => cfg.print_config = true,
            "disable-le" => {
                cfg.train.ablation.disable_le = true;
                cfg.overrides.insert("disable_le".into(), "true".into());
            }
            "disable-ld" => {
                cfg.train.ablation.disable_ld = true;
                cfg.overrides.insert("disable_ld".into(), "true".into());
            }
            "unweighted-ld" => {
                cfg.train.ablation.unweighted_ld = true;
                cfg.overrides.insert("unweighted_ld".into(), "true".into());
            }
            "config" => cfg.paths.config = Some(PathBuf::from(take_value()?)),
            "out" => cfg.paths.out = Some(PathBuf::from(take_value()?)),
            "source" => cfg.paths.source = Some(PathBuf::from(take_value()?)),
            "target" => cfg.paths.target = Some(PathBuf::from(take_value()?)),
            "checkpoint" => cfg.paths.checkpoint = Some(PathBuf::from(take_value()?)),
            "bank" => cfg.paths.bank = Some(PathBuf::from(take_value()?)),
            "input" => cfg.paths.input = Some(PathBuf::from(take_value()?)),
            "betas" => cfg.sweep.betas = parse_sweep_list("--betas", &take_value()?)?,
            "gammas" => cfg.sweep.gammas = parse_sweep_list("--gammas", &take_value()?)?,
            "deltas" => cfg.sweep.deltas = parse_sweep_list("--deltas", &take_value()?)?,
            _ => {
                let key = name.replace('-', "_");
                let value = take_value()?;
                flag_keys.push((key, value));
            }
        }
        idx += 1;
    }

    if let Some(path) = cfg.paths.config.clone() {
        parse_config_file(&mut cfg, &path)?;
    }
    for (key, value) in flag_keys {
        apply_key(&mut cfg, &key, &value)?;
        cfg.overrides.insert(key, value);
    }

    cfg.train
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    cfg.synth
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    // --print-config only reports the effective hyperparameters, so it
    // needs no paths.
    if !cfg.print_config {
        validate_paths(&cfg)?;
    }
    Ok(cfg)
}

fn require(path: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.clone()
        .ok_or_else(|| CliError::Config(format!("missing required flag {flag}")))
}

fn require_existing(path: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    let path = require(path, flag)?;
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "{flag} path {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

/// Per-command path requirements; the output directory is created here
/// so a valid RunConfig implies a writable destination.
fn validate_paths(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.paths.out, "--out")?;
    std::fs::create_dir_all(&out).map_err(|e| {
        CliError::Config(format!(
            "output directory {} is not writable: {e}",
            out.display()
        ))
    })?;
    match cfg.command {
        Command::Generate => {}
        Command::Train | Command::Sweep => {
            require_existing(&cfg.paths.source, "--source")?;
            require_existing(&cfg.paths.target, "--target")?;
            if cfg.command == Command::Sweep {
                let spatial = !cfg.sweep.betas.is_empty() || !cfg.sweep.gammas.is_empty();
                let level = !cfg.sweep.deltas.is_empty();
                if spatial && level {
                    return Err(CliError::Config(
                        "sweep grids over (--betas, --gammas) or --deltas, not both".into(),
                    ));
                }
                if !spatial && !level {
                    return Err(CliError::Config(
                        "sweep needs --betas/--gammas or --deltas".into(),
                    ));
                }
            }
        }
        Command::Evaluate => {
            require_existing(&cfg.paths.checkpoint, "--checkpoint")?;
            require_existing(&cfg.paths.bank, "--bank")?;
            require_existing(&cfg.paths.target, "--target")?;
        }
        Command::FitGev => {
            require_existing(&cfg.paths.input, "--input")?;
        }
    }
    Ok(())
}
