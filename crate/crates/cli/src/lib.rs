//! Command implementations behind the `wearnet` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;

use wearnet::statespace::{
    observation_samples, transition_samples, write_prognosis_csv, DEFAULT_MAX_HORIZON,
};
use wearnet::training::{gradient_check, UpdateMode};
use wearnet::{
    fit, load_csv, split, synth_generate, train, CellKind, Normalizer, PairedSequence,
    StateSpaceModel, SynthConfig, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "wearnet",
    version,
    about = "Recurrent tool-wear diagnosis and prognosis"
)]
pub struct Cli {
    /// Seed for every random draw the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON config: a generator config for `generate`, a run config otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic tool-wear dataset as CSV.
    Generate(GenerateArgs),
    /// Train the observation and transition models.
    Train(TrainArgs),
    /// Compare validation MSE of every cell kind over several seeds.
    Benchmark(BenchmarkArgs),
    /// Run online diagnosis, 1/2-step prediction and RUL over a dataset.
    Prognose(PrognoseArgs),
    /// Compare BPTT gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n_sequences: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainingFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Stop after this many iterations without validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// One truncated update per timestep instead of one per sequence.
    #[arg(long)]
    pub update_per_step: bool,
    /// GRU candidate without the reset gate.
    #[arg(long)]
    pub gru_no_reset: bool,
    /// z-score wear targets too; reported MSE stays in mm².
    #[arg(long)]
    pub normalize_targets: bool,
    /// Train/validation/test sequence counts, e.g. `7,6,2`.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<[usize; 3]>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cell_obs: Option<CellKind>,
    #[arg(long)]
    pub cell_trans: Option<CellKind>,
    #[command(flatten)]
    pub flags: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of initialization seeds per (kind, function).
    #[arg(long = "seeds")]
    pub n_seeds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<CellKind>>,
    #[command(flatten)]
    pub flags: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct PrognoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Wear criterion in mm; defaults to the model's.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<CellKind>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
}

fn parse_split(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected three comma-separated counts, got `{s}`"));
    };
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok([n(a)?, n(b)?, n(c)?])
}

/// Settings for every command except `generate`, loadable from `--config`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub training: TrainConfig,
    pub cell_obs: CellKind,
    pub cell_trans: CellKind,
    pub split: [usize; 3],
    pub kinds: Vec<CellKind>,
    pub n_seeds: usize,
    pub threshold: Option<f64>,
    pub horizon: usize,
    pub trials: usize,
    pub tolerance: f64,
    pub eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            training: TrainConfig::default(),
            cell_obs: CellKind::Lstm,
            cell_trans: CellKind::Lstm,
            split: [7, 6, 2],
            kinds: CellKind::ALL.to_vec(),
            n_seeds: 5,
            threshold: None,
            horizon: DEFAULT_MAX_HORIZON,
            trials: 10,
            tolerance: 1e-4,
            eps: 1e-5,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.kinds.is_empty() {
            bail!("kinds must not be empty");
        }
        if self.n_seeds == 0 {
            bail!("n_seeds must be >= 1");
        }
        if self.horizon == 0 {
            bail!("horizon must be >= 1");
        }
        if self.trials == 0 {
            bail!("trials must be >= 1");
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 || self.eps.is_nan() || self.eps <= 0.0
        {
            bail!("tolerance and eps must be > 0");
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                bail!("threshold must be > 0");
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &TrainingFlags) {
        let t = &mut self.training;
        if let Some(v) = f.iterations {
            t.iterations = v;
        }
        if let Some(v) = f.hidden {
            t.hidden_dim = v;
        }
        if let Some(v) = f.lr {
            t.lr = v;
        }
        if let Some(v) = f.clip_norm {
            t.clip_norm = v;
        }
        if f.patience.is_some() {
            t.early_stop_patience = f.patience;
        }
        if f.update_per_step {
            t.update_mode = UpdateMode::PerStep;
        }
        if f.gru_no_reset {
            t.gru_reset = false;
        }
        if f.normalize_targets {
            t.normalize_targets = true;
        }
        if let Some(s) = f.split {
            self.split = s;
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => wearnet::error::parse_json::<RunConfig>(&read_text(path)?)
            .with_context(|| format!("invalid config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
    }
    Ok(cfg)
}

/// Writes to `--out` when given, otherwise to `stdout`.
fn emit(out: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => stdout.write_all(bytes).context("writing to stdout"),
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(cli, args, stdout),
        Command::Train(args) => cmd_train(cli, args),
        Command::Benchmark(args) => cmd_benchmark(cli, args, stdout),
        Command::Prognose(args) => cmd_prognose(cli, args, stdout),
        Command::Gradcheck(args) => cmd_gradcheck(cli, args, stdout),
    }
}

pub fn cmd_generate(cli: &Cli, args: &GenerateArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => SynthConfig::from_json(&read_text(path)?)
            .with_context(|| format!("invalid generator config {}", path.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_sequences {
        cfg.n_sequences = n;
    }
    if let Some(l) = args.length {
        cfg.length = l;
    }
    let seqs = synth_generate(&cfg)?;
    let text = wearnet::data::to_csv_string(&seqs)?;
    emit(cli.out.as_deref(), stdout, text.as_bytes())
}

fn load_labelled(path: &Path) -> Result<Vec<PairedSequence>> {
    let seqs = load_csv(path)?;
    for s in &seqs {
        s.labels()?;
    }
    Ok(seqs)
}

fn split_for(cfg: &RunConfig, seqs: &[PairedSequence]) -> Result<wearnet::DatasetSplit> {
    let [n_train, n_val, n_test] = cfg.split;
    split(seqs, n_train, n_val, n_test, cfg.training.seed).with_context(|| {
        format!(
            "dataset has {} sequences; pass --split with counts that add up to it",
            seqs.len()
        )
    })
}

pub fn history_paths(model_out: &Path) -> (PathBuf, PathBuf) {
    (
        model_out.with_extension("obs_history.csv"),
        model_out.with_extension("trans_history.csv"),
    )
}

pub fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut cfg = load_run_config(cli)?;
    cfg.apply_flags(&args.flags);
    if let Some(k) = args.cell_obs {
        cfg.cell_obs = k;
    }
    if let Some(k) = args.cell_trans {
        cfg.cell_trans = k;
    }
    cfg.validate()?;

    let seqs = load_labelled(&args.data)?;
    let parts = split_for(&cfg, &seqs)?;
    let fitted = fit(
        &parts.train,
        &parts.val,
        &cfg.training,
        cfg.cell_obs,
        cfg.cell_trans,
    )?;

    let model_out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("model.json"));
    fs::write(&model_out, fitted.model.to_json()?)
        .with_context(|| format!("writing {}", model_out.display()))?;
    let (obs_path, trans_path) = history_paths(&model_out);
    fs::write(&obs_path, fitted.obs_history.to_csv_string())
        .with_context(|| format!("writing {}", obs_path.display()))?;
    fs::write(&trans_path, fitted.trans_history.to_csv_string())
        .with_context(|| format!("writing {}", trans_path.display()))?;

    eprintln!(
        "observation ({}): best val MSE {:.7} mm² at iteration {}",
        cfg.cell_obs,
        fitted.obs_history.best_val_mse().unwrap_or(f64::NAN),
        fitted.obs_history.best_iteration
    );
    eprintln!(
        "transition ({}): best val MSE {:.7} mm² at iteration {}",
        cfg.cell_trans,
        fitted.trans_history.best_val_mse().unwrap_or(f64::NAN),
        fitted.trans_history.best_iteration
    );
    eprintln!("wrote {}", model_out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelFunction {
    Transition,
    Observation,
}

impl ModelFunction {
    pub fn name(self) -> &'static str {
        match self {
            ModelFunction::Transition => "transition",
            ModelFunction::Observation => "observation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub kind: CellKind,
    pub function: ModelFunction,
    pub avg_mse: f64,
    pub std_mse: f64,
    pub runs: usize,
    pub failures: usize,
}

/// Trains every (kind, function, seed) combination and aggregates the best
/// validation MSE per (kind, function). Seeds are `base, base+1, …`.
pub fn benchmark(
    train_set: &[PairedSequence],
    val_set: &[PairedSequence],
    cfg: &TrainConfig,
    kinds: &[CellKind],
    n_seeds: usize,
) -> Result<Vec<BenchmarkRow>> {
    let norm = Normalizer::fit(train_set)?;
    let target_norm = if cfg.normalize_targets {
        Normalizer::fit_targets(train_set)?
    } else {
        Normalizer::IDENTITY
    };
    // Converts MSE on normalized targets back to mm².
    let to_mm2 = target_norm.scale * target_norm.scale;
    let obs = (
        observation_samples(train_set, &norm, &target_norm)?,
        observation_samples(val_set, &norm, &target_norm)?,
    );
    let trans = (
        transition_samples(train_set, 0.0, &target_norm)?,
        transition_samples(val_set, 0.0, &target_norm)?,
    );

    let mut jobs = Vec::new();
    for &kind in kinds {
        for function in [ModelFunction::Transition, ModelFunction::Observation] {
            for i in 0..n_seeds {
                jobs.push((kind, function, cfg.seed.wrapping_add(i as u64)));
            }
        }
    }
    let mut results: Vec<_> = jobs
        .par_iter()
        .map(|&(kind, function, seed)| {
            let (tr, va) = match function {
                ModelFunction::Transition => (&trans.0, &trans.1),
                ModelFunction::Observation => (&obs.0, &obs.1),
            };
            let run_cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let outcome = train(kind, tr, va, &run_cfg)
                .map(|(_, h)| h.best_val_mse().unwrap_or(f64::NAN) * to_mm2);
            (kind, function, seed, outcome)
        })
        .collect();
    results.sort_by_key(|r| (r.0, r.1, r.2));

    let mut rows = Vec::new();
    for &kind in kinds {
        for function in [ModelFunction::Transition, ModelFunction::Observation] {
            let mut values = Vec::new();
            let mut failures = 0;
            for (k, f, seed, outcome) in &results {
                if *k != kind || *f != function {
                    continue;
                }
                match outcome {
                    Ok(v) => values.push(*v),
                    Err(e) => {
                        failures += 1;
                        eprintln!("{kind}/{} seed {seed}: {e}", function.name());
                    }
                }
            }
            let (avg, std) = mean_std(&values);
            rows.push(BenchmarkRow {
                kind,
                function,
                avg_mse: avg,
                std_mse: std,
                runs: values.len(),
                failures,
            });
        }
    }
    Ok(rows)
}

/// Mean and sample standard deviation; std is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const BENCHMARK_CSV_HEADER: &str = "kind,function,avg_mse_mm2,std_mse_mm2";

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut s = format!("{BENCHMARK_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.kind,
            r.function.name(),
            r.avg_mse,
            r.std_mse
        ));
    }
    s
}

fn kind_label(kind: CellKind) -> &'static str {
    match kind {
        CellKind::ElmanRnn => "Elman RNN",
        CellKind::Lstm => "LSTM",
        CellKind::Gru => "GRU",
    }
}

/// One row per kind, transition columns then observation columns.
pub fn benchmark_table(rows: &[BenchmarkRow], n_seeds: usize) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "Validation MSE over {n_seeds} seed(s)\n{:<14}{:^28}{:^28}\n{:<14}{:>14}{:>14}{:>14}{:>14}\n",
        "RNN Cell Type",
        "System Transition",
        "System Observation",
        "",
        "Avg (mm²)",
        "Std (mm²)",
        "Avg (mm²)",
        "Std (mm²)",
    ));
    let mut kinds: Vec<CellKind> = rows.iter().map(|r| r.kind).collect();
    kinds.dedup();
    for kind in kinds {
        let get = |f: ModelFunction| rows.iter().find(|r| r.kind == kind && r.function == f);
        let cell =
            |r: Option<&BenchmarkRow>| r.map_or((f64::NAN, f64::NAN), |r| (r.avg_mse, r.std_mse));
        let (ta, ts) = cell(get(ModelFunction::Transition));
        let (oa, os) = cell(get(ModelFunction::Observation));
        s.push_str(&format!(
            "{:<14}{ta:>14.7}{ts:>14.7}{oa:>14.7}{os:>14.7}\n",
            kind_label(kind)
        ));
    }
    s
}

pub fn cmd_benchmark(cli: &Cli, args: &BenchmarkArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = load_run_config(cli)?;
    cfg.apply_flags(&args.flags);
    if let Some(n) = args.n_seeds {
        cfg.n_seeds = n;
    }
    if let Some(k) = &args.kinds {
        cfg.kinds = k.clone();
    }
    cfg.validate()?;

    let seqs = load_labelled(&args.data)?;
    let parts = split_for(&cfg, &seqs)?;
    let rows = benchmark(
        &parts.train,
        &parts.val,
        &cfg.training,
        &cfg.kinds,
        cfg.n_seeds,
    )?;
    stdout.write_all(benchmark_table(&rows, cfg.n_seeds).as_bytes())?;
    if let Some(path) = &cli.out {
        fs::write(path, benchmark_csv(&rows))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if rows.iter().all(|r| r.runs == 0) {
        bail!("every benchmark run failed");
    }
    Ok(())
}

pub fn cmd_prognose(cli: &Cli, args: &PrognoseArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load_run_config(cli)?;
    cfg.validate()?;
    let mut model = StateSpaceModel::from_json(&read_text(&args.model)?)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    if let Some(t) = args.threshold.or(cfg.threshold) {
        model = model.with_threshold(t)?;
    }
    let horizon = args.horizon.unwrap_or(cfg.horizon);
    let seqs = load_csv(&args.data)?;

    let mut results = Vec::with_capacity(seqs.len());
    for s in &seqs {
        let mut res = model
            .prognose_online(&s.x, horizon)
            .with_context(|| format!("sequence `{}`", s.id))?;
        if let Some(y) = &s.y {
            res = res.with_truth(y);
        }
        results.push((s.id.clone(), res));
    }
    let mut buf = Vec::new();
    write_prognosis_csv(&results, &mut buf)?;
    emit(cli.out.as_deref(), stdout, &buf)
}

pub fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = load_run_config(cli)?;
    if let Some(k) = &args.kinds {
        cfg.kinds = k.clone();
    }
    if let Some(n) = args.trials {
        cfg.trials = n;
    }
    if let Some(t) = args.tolerance {
        cfg.tolerance = t;
    }
    if let Some(e) = args.eps {
        cfg.eps = e;
    }
    cfg.validate()?;

    let mut report = String::new();
    let mut failed = Vec::new();
    for &kind in &cfg.kinds {
        let trials = gradient_check(kind, cfg.trials, cfg.training.seed, cfg.eps)?;
        let worst = trials.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
        let ok = worst < cfg.tolerance;
        if !ok {
            failed.push(kind);
        }
        report.push_str(&format!(
            "{:<6} trials={} worst_rel_error={:.3e} {}\n",
            kind.name(),
            trials.len(),
            worst,
            if ok { "PASS" } else { "FAIL" }
        ));
    }
    emit(cli.out.as_deref(), stdout, report.as_bytes())?;
    if !failed.is_empty() {
        bail!(
            "gradient check exceeded tolerance {:e} for: {}",
            cfg.tolerance,
            failed
                .iter()
                .map(|k| k.name())
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(())
}
