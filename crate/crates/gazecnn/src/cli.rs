//! Command-line front end. Every command is deterministic given its flags
//! and config file; unknown flags and unknown config keys are errors.
//!
//! Exit codes: 0 ok, 2 config error, 3 I/O error, 4 training failure,
//! 5 verification failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::data::{load_manifest, GazeSample};
use crate::gradcheck::{self, Kernel};
use crate::harness::{
    cross_dataset_matrix, cross_validate, evaluate, train, HarnessError, TrainConfig,
};
use crate::img::EyeImage;
use crate::model::GazeNet;
use crate::report;
use crate::synth::{generate_dataset, make_characters, Preset, SweepGrid};
use crate::tensor::Precision;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Training(String),
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Training(_) => EXIT_TRAINING,
            CliError::Verification(_) => EXIT_VERIFICATION,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Training(m)
            | CliError::Verification(m) => m,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn training_err(e: HarnessError) -> CliError {
    CliError::Training(e.to_string())
}

/// Full run configuration: training parameters plus the inference
/// precision mode.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            precision: Precision::Single,
        }
    }
}

impl RunConfig {
    /// Apply one `key=value` setting. Unknown keys are rejected.
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |what: &str| {
            Err(CliError::Config(format!(
                "config key `{key}`: `{value}` is not a valid {what}"
            )))
        };
        macro_rules! parse {
            ($what:literal) => {
                match value.parse() {
                    Ok(v) => v,
                    Err(_) => return bad($what),
                }
            };
        }
        match key {
            "max_epochs" => self.train.max_epochs = parse!("integer"),
            "batch_size" => self.train.batch_size = parse!("integer"),
            "patience" => self.train.patience = parse!("integer"),
            "jobs" => self.train.jobs = parse!("integer"),
            "seed" => self.train.seed = parse!("integer"),
            "lr" => self.train.adam.lr = parse!("number"),
            "beta1" => self.train.adam.beta1 = parse!("number"),
            "beta2" => self.train.adam.beta2 = parse!("number"),
            "eps" => self.train.adam.eps = parse!("number"),
            "val_fraction" => self.train.val_fraction = parse!("number"),
            "target_val_mae" => {
                self.train.target_val_mae = match value {
                    "none" => None,
                    _ => Some(parse!("number (or `none`)")),
                }
            }
            "mirror" => self.train.mirror = parse!("boolean (true|false)"),
            "overfit" => self.train.overfit = parse!("boolean (true|false)"),
            "zero_head_pose" => self.train.zero_head_pose = parse!("boolean (true|false)"),
            "precision" => {
                self.precision = match value {
                    "single" => Precision::Single,
                    "double" => Precision::Double,
                    _ => return bad("precision (single|double)"),
                }
            }
            other => {
                return Err(CliError::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Parse a flat `key=value` config file; `#` starts a comment.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    i + 1
                ))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }
}

/// Flag multimap with strict unknown-flag rejection.
#[derive(Debug)]
struct Flags {
    values: BTreeMap<String, Vec<String>>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str]) -> Result<Flags, CliError> {
        let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let name = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("unexpected argument `{arg}`")))?;
            if !allowed.contains(&name) {
                return Err(CliError::Config(format!("unknown flag `--{name}`")));
            }
            let value = it
                .next()
                .ok_or_else(|| CliError::Config(format!("flag --{name} needs a value")))?;
            values.entry(name.to_string()).or_default().push(value.clone());
        }
        Ok(Flags { values })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).and_then(|v| v.last()).map(String::as_str)
    }

    fn get_all(&self, name: &str) -> &[String] {
        self.values.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    fn require(&self, name: &str) -> Result<&str, CliError> {
        self.get(name)
            .ok_or_else(|| CliError::Config(format!("missing required flag --{name}")))
    }

    fn parse_num<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T, CliError> {
        match self.get(name) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::Config(format!("--{name}: `{raw}` is not valid"))),
        }
    }
}

/// Assemble the run configuration: config file, then repeated `--set`
/// overrides, then `--seed`/`--jobs` shorthands.
fn run_config(flags: &Flags) -> Result<RunConfig, CliError> {
    let mut config = match flags.get("config") {
        Some(path) => RunConfig::load(Path::new(path))?,
        None => RunConfig::default(),
    };
    for setting in flags.get_all("set") {
        let (key, value) = setting.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set expects key=value, got `{setting}`"))
        })?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = flags.get("seed") {
        config.set("seed", seed)?;
    }
    if let Some(jobs) = flags.get("jobs") {
        config.set("jobs", jobs)?;
    }
    config.train.validate().map_err(config_err)?;
    Ok(config)
}

fn load_samples(path: &str) -> Result<Vec<GazeSample>, CliError> {
    // Manifest problems (missing files, bad rows) are configuration
    // errors: the run was pointed at an unusable dataset.
    load_manifest(Path::new(path)).map_err(config_err)
}

fn load_ckpt(path: &str) -> Result<GazeNet<f32>, CliError> {
    checkpoint::load(Path::new(path)).map_err(config_err)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn reject_double_for_training(config: &RunConfig) -> Result<(), CliError> {
    if config.precision == Precision::Double {
        return Err(CliError::Config(
            "precision=double applies to eval/predict only; training runs in single precision"
                .into(),
        ));
    }
    Ok(())
}

fn cmd_synth_gen(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["chars", "out", "seed", "preset", "grid"])?;
    let chars: usize = flags
        .require("chars")?
        .parse()
        .map_err(|_| CliError::Config("--chars must be an integer".into()))?;
    let out = PathBuf::from(flags.require("out")?);
    let seed: u64 = flags.parse_num("seed", 0)?;
    let preset: Preset = flags
        .get("preset")
        .unwrap_or("bright")
        .parse()
        .map_err(CliError::Config)?;
    let grid = match flags.get("grid").unwrap_or("default") {
        "default" => SweepGrid::default(),
        "small" => SweepGrid::small(),
        other => {
            return Err(CliError::Config(format!(
                "--grid must be default|small, got `{other}`"
            )))
        }
    };
    let characters = make_characters(chars, preset, seed);
    let rows = generate_dataset(&characters, &grid, preset.name(), &out, seed)
        .map_err(|e| CliError::Io(e.to_string()))?;
    println!("{} rows", rows.len());
    println!("manifest: {}", out.join("manifest.csv").display());
    Ok(())
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["manifest", "config", "out", "history", "set", "seed", "jobs"])?;
    let config = run_config(&flags)?;
    reject_double_for_training(&config)?;
    let samples = load_samples(flags.require("manifest")?)?;
    let out = PathBuf::from(flags.require("out")?);
    let history_path = flags
        .get("history")
        .map(PathBuf::from)
        .unwrap_or_else(|| out.with_extension("history.csv"));

    let run = train(&samples, &config.train).map_err(training_err)?;
    checkpoint::save(&run.net, &out).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&history_path, &report::history_csv(&run.history))?;
    println!(
        "trained {} epochs ({} steps, {} rows/epoch)",
        run.history.len(),
        run.steps,
        run.train_rows
    );
    println!(
        "final validation MAE = {:.4} deg (best epoch {})",
        run.best_val_mae, run.best_epoch
    );
    println!("checkpoint: {}", out.display());
    Ok(())
}

/// Evaluate in the configured precision. Double precision widens the
/// checkpoint exactly and runs the forward pass in f64.
fn eval_report(
    net: &GazeNet<f32>,
    samples: &[GazeSample],
    precision: Precision,
) -> Result<crate::harness::EvalReport, CliError> {
    match precision {
        Precision::Single => evaluate(net, samples).map_err(training_err),
        Precision::Double => {
            let net64 = net.to_f64();
            let mut errors = Vec::with_capacity(samples.len());
            for s in samples {
                let (eyes, head) = crate::data::preprocess(s).map_err(config_err)?;
                let (p, y, _) = net64
                    .forward(&eyes.to_f64(), &[head[0] as f64, head[1] as f64, head[2] as f64])
                    .map_err(|e| CliError::Training(e.to_string()))?;
                errors.push(crate::optim::sample_error(
                    &[p, y],
                    &[s.gaze[0] as f64, s.gaze[1] as f64],
                ));
            }
            errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = errors.len() as f64;
            if errors.is_empty() {
                return Err(CliError::Config("eval: empty sample list".into()));
            }
            let mean = errors.iter().sum::<f64>() / n;
            let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            Ok(crate::harness::EvalReport {
                mae_mean_deg: mean,
                mae_std_deg: var.sqrt(),
                max_error_deg: *errors.last().unwrap(),
                n_samples: errors.len(),
            })
        }
    }
}

fn cmd_eval(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["ckpt", "manifest", "config", "out", "set", "seed", "jobs"])?;
    let config = run_config(&flags)?;
    let net = load_ckpt(flags.require("ckpt")?)?;
    let samples = load_samples(flags.require("manifest")?)?;
    if samples.is_empty() {
        return Err(CliError::Config("eval: manifest has no rows".into()));
    }
    let out = PathBuf::from(flags.require("out")?);
    let report_data = eval_report(&net, &samples, config.precision)?;
    write_file(&out.join("eval.csv"), &report::eval_report_csv(&report_data))?;
    write_file(&out.join("eval.json"), &report::eval_report_json(&report_data))?;
    println!(
        "MAE = {:.4} +- {:.4} deg (max {:.4}, n={})",
        report_data.mae_mean_deg,
        report_data.mae_std_deg,
        report_data.max_error_deg,
        report_data.n_samples
    );
    Ok(())
}

fn cmd_crossval(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["manifest", "config", "out", "k", "set", "seed", "jobs"])?;
    let config = run_config(&flags)?;
    reject_double_for_training(&config)?;
    let k: usize = flags.parse_num("k", 4)?;
    if k == 0 {
        return Err(CliError::Config("--k must be >= 1".into()));
    }
    let samples = load_samples(flags.require("manifest")?)?;
    let out = PathBuf::from(flags.require("out")?);
    let cv = cross_validate(&samples, k, &config.train).map_err(training_err)?;
    write_file(&out.join("crossval.csv"), &report::crossval_csv(&cv))?;
    write_file(&out.join("crossval.json"), &report::crossval_json(&cv))?;
    println!(
        "pooled MAE = {:.4} +- {:.4} deg over {} held-out samples ({} folds)",
        cv.pooled.mae_mean_deg,
        cv.pooled.mae_std_deg,
        cv.pooled.n_samples,
        cv.folds.len()
    );
    Ok(())
}

fn cmd_matrix(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["manifest", "config", "out", "k", "set", "seed", "jobs"])?;
    let config = run_config(&flags)?;
    reject_double_for_training(&config)?;
    let k: usize = flags.parse_num("k", 4)?;
    let out = PathBuf::from(flags.require("out")?);
    let mut datasets = Vec::new();
    for spec in flags.get_all("manifest") {
        let (name, path) = spec.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--manifest expects NAME=PATH, got `{spec}`"))
        })?;
        datasets.push((name.to_string(), load_samples(path)?));
    }
    if datasets.len() < 2 {
        return Err(CliError::Config(
            "matrix needs at least two --manifest NAME=PATH flags".into(),
        ));
    }
    let matrix = cross_dataset_matrix(&datasets, k, &config.train).map_err(training_err)?;
    write_file(&out.join("matrix.csv"), &report::matrix_csv(&matrix))?;
    write_file(&out.join("matrix.json"), &report::matrix_json(&matrix))?;
    for (i, name) in matrix.names.iter().enumerate() {
        println!("row-max MAE trained on {name}: {:.4} deg", matrix.row_max_mae(i));
    }
    Ok(())
}

fn cmd_predict(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["ckpt", "left", "right", "head", "config", "set"])?;
    let config = run_config(&flags)?;
    let net = load_ckpt(flags.require("ckpt")?)?;
    let left = EyeImage::load_png(Path::new(flags.require("left")?)).map_err(config_err)?;
    let right = EyeImage::load_png(Path::new(flags.require("right")?)).map_err(config_err)?;
    let head_raw = flags.require("head")?;
    let parts: Vec<&str> = head_raw.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "--head expects pitch,yaw,roll in degrees, got `{head_raw}`"
        )));
    }
    let mut head = [0.0f32; 3];
    for (slot, raw) in head.iter_mut().zip(&parts) {
        *slot = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("--head component `{raw}` is not a number")))?;
        if !slot.is_finite() {
            return Err(CliError::Config(format!("--head component `{raw}` is not finite")));
        }
    }
    let sample = GazeSample {
        left_eye: std::sync::Arc::new(left),
        right_eye: std::sync::Arc::new(right),
        head_pose: head,
        gaze: [0.0, 0.0],
        subject_id: "cli".into(),
        domain: "cli".into(),
    };
    let pred = match config.precision {
        Precision::Single => crate::harness::predict(&net, &sample).map_err(training_err)?,
        Precision::Double => {
            let (eyes, head) = crate::data::preprocess(&sample).map_err(config_err)?;
            let (p, y, _) = net
                .to_f64()
                .forward(&eyes.to_f64(), &[head[0] as f64, head[1] as f64, head[2] as f64])
                .map_err(|e| CliError::Training(e.to_string()))?;
            [p, y]
        }
    };
    println!("pitch={:.4} yaw={:.4}", pred[0], pred[1]);
    Ok(())
}

fn cmd_gradcheck(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["seed", "inject-sign-error"])?;
    let seed: u64 = flags.parse_num("seed", 2024)?;
    let fault: Option<Kernel> = match flags.get("inject-sign-error") {
        None => None,
        Some(raw) => Some(raw.parse().map_err(CliError::Config)?),
    };
    let outcomes = gradcheck::run_all(seed, fault);
    let mut failed = 0;
    for o in &outcomes {
        println!("{o}");
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Verification(format!(
            "{failed} of {} gradient check suites failed",
            outcomes.len()
        )));
    }
    println!("all {} gradient check suites passed", outcomes.len());
    Ok(())
}

pub const USAGE: &str = "\
gazecnn - eye gaze regression engine

usage: gazecnn <command> [flags]

commands:
  synth-gen   generate a synthetic sweep dataset
              --chars N --out DIR [--seed S] [--preset bright|dim]
              [--grid default|small]
  train       train on a manifest, save the best checkpoint
              --manifest CSV --out CKPT [--config FILE] [--history CSV]
              [--set key=value ...] [--seed S] [--jobs N]
  eval        evaluate a checkpoint on a manifest
              --ckpt CKPT --manifest CSV --out DIR [--config FILE]
              [--set key=value ...]
  crossval    subject-disjoint k-fold cross-validation
              --manifest CSV --out DIR [--k 4] [--config FILE]
              [--set key=value ...] [--seed S] [--jobs N]
  matrix      cross-dataset train/test matrix (plus combined row)
              --manifest NAME=CSV --manifest NAME=CSV [...] --out DIR
              [--k 4] [--config FILE] [--set key=value ...]
  predict     one prediction from two eye PNGs and a head pose
              --ckpt CKPT --left L.png --right R.png --head p,y,r
  gradcheck   run all finite-difference gradient suites
              [--seed S] [--inject-sign-error conv2d|maxpool|linear|relu|mse]
  help        print this text

config file: flat key=value lines, `#` comments. Keys: max_epochs,
batch_size, lr, beta1, beta2, eps, patience, val_fraction, mirror, seed,
overfit, zero_head_pose, target_val_mae (number or none), jobs,
precision (single|double). Flags override file values.

exit codes: 0 ok, 2 config error, 3 I/O error, 4 training failure,
5 verification failure.
";

/// Entry point used by the binary. Returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let (command, rest) = match args.split_first() {
        Some((c, rest)) => (c.as_str(), rest),
        None => {
            eprint!("{USAGE}");
            return EXIT_CONFIG;
        }
    };
    let result = match command {
        "synth-gen" => cmd_synth_gen(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "crossval" => cmd_crossval(rest),
        "matrix" => cmd_matrix(rest),
        "predict" => cmd_predict(rest),
        "gradcheck" => cmd_gradcheck(rest),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            return EXIT_OK;
        }
        other => {
            eprintln!("unknown command `{other}`");
            eprint!("{USAGE}");
            return EXIT_CONFIG;
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
