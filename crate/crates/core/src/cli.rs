//! Subcommands behind the `dparnet` binary.
//!
//! Every run resolves a [`RunConfig`] from an optional TOML file plus flag
//! overrides and echoes it to `<out>/run_config.toml`, so a run can be
//! repeated from its output directory alone. Exit codes: 0 success, 2
//! configuration error, 3 I/O error, 4 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{self, BuildOptions, CorpusSpec, DatasetManifest, Split, Task};
use crate::degrade::DegradationSpec;
use crate::error::{Error, Result};
use crate::eval::{self, AblationReport, AblationRow, BenchOptions, EvalOptions, Restorer};
use crate::models::{Checkpoint, ModelConfig, NetConfig, ParamNetConfig, Variant};
use crate::train::{self, ParamSource, TrainConfig};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";
pub const PARAM_NET_DIR: &str = "param_net";

#[derive(Parser, Debug)]
#[command(name = "dparnet", version, about = "Degradation-parameter-assisted wide & deep restoration toolkit")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed for data synthesis, splits and initialization.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restoration task; selects the degradation kind.
    #[arg(long, global = true, value_enum)]
    pub task: Option<TaskArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Deturbulence,
    Denoise,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Deturbulence => Task::Deturbulence,
            TaskArg::Denoise => Task::Denoise,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Degrade clean sequences into a paired dataset.
    Simulate(SimulateArgs),
    /// Train the parameter net and/or a restoration variant.
    Train(TrainArgs),
    /// Score a trained model and/or benchmark its cost.
    Eval(EvalArgs),
    /// Train and evaluate all four variants under one budget.
    Ablate(AblateArgs),
    /// Render training curves to an SVG file.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Directory of clean sequence directories.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Generate this many synthetic clean sequences instead of reading `--clean`.
    #[arg(long)]
    pub synthetic_corpus: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Param,
    Restore,
    Both,
}

#[derive(Args, Debug, Clone)]
pub struct TrainOverrides {
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Samples per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Square training crop size in pixels.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Trained parameter-net checkpoint directory.
    #[arg(long)]
    pub param_ckpt: Option<PathBuf>,
    /// Feed ground-truth parameter maps instead of a parameter net.
    #[arg(long)]
    pub oracle_param: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "both")]
    pub stage: Stage,
    /// full | v1 | v2 | v3 (or the long names).
    #[arg(long)]
    pub variant: Option<String>,
    #[command(flatten)]
    pub common: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restoration checkpoint directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Parameter-net checkpoint; without it the ground-truth maps are used.
    #[arg(long)]
    pub param_ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Write temporal-profile images for this column.
    #[arg(long)]
    pub profile_column: Option<usize>,
    /// Benchmark parameters, FLOPs and time; alone, skips restoration.
    #[arg(long)]
    pub efficiency: bool,
    /// Also write the restored PNG sequences.
    #[arg(long)]
    pub save_restored: bool,
    /// Timed rounds for --efficiency.
    #[arg(long)]
    pub rounds: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: TrainOverrides,
    /// Timed rounds of the efficiency benchmark.
    #[arg(long)]
    pub rounds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Curve files written by training (`curve.csv`).
    #[arg(required = true)]
    pub curves: Vec<PathBuf>,
    /// Output file name inside `--out`.
    #[arg(long, default_value = "curves.svg")]
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub clean: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub param_ckpt: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    pub rounds: usize,
    pub warmup: usize,
    pub bench_size: usize,
    pub profile_column: Option<usize>,
    pub save_restored: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Split::Test,
            rounds: eval::BENCH_ROUNDS,
            warmup: eval::BENCH_WARMUP,
            bench_size: eval::BENCH_SIZE,
            profile_column: None,
            save_restored: false,
        }
    }
}

/// Fully resolved run configuration. `seed` drives corpus synthesis,
/// degradation and training; `task` fixes the degradation kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub oracle_param: bool,
    pub paths: Paths,
    pub corpus: CorpusSpec,
    pub degradation: DegradationSpec,
    pub dataset: BuildOptions,
    pub model: ModelConfig,
    pub param_net: ParamNetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Denoise,
            seed: 0,
            oracle_param: false,
            paths: Paths::default(),
            corpus: CorpusSpec::default(),
            degradation: DegradationSpec::default(),
            dataset: BuildOptions::default(),
            model: ModelConfig::default(),
            param_net: ParamNetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize run config: {e}")))
    }

    /// Makes derived fields consistent with `task` and `seed`.
    fn resolve(&mut self) -> Result<()> {
        self.degradation.kind = self.task.kind();
        self.corpus.seed = self.seed;
        self.train.seed = self.seed;
        self.degradation.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate()?;
        self.train.validate()
    }

    fn apply_train_overrides(&mut self, o: &TrainOverrides) {
        if let Some(d) = &o.data {
            self.paths.data = Some(d.clone());
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.lr {
            self.train.lr = v;
        }
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = o.crop {
            self.train.crop = v;
        }
        if let Some(p) = &o.param_ckpt {
            self.paths.param_ckpt = Some(p.clone());
        }
        self.oracle_param |= o.oracle_param;
    }
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.task {
        cfg.task = t.into();
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(c) = &a.clean {
                cfg.paths.clean = Some(c.clone());
            }
            if let Some(n) = a.synthetic_corpus {
                cfg.corpus.sequences = n;
            }
            cfg.resolve()?;
            cmd_simulate(&cfg, a.synthetic_corpus.is_some(), &out).map(|_| ())
        }
        Command::Train(a) => {
            cfg.apply_train_overrides(&a.common);
            if let Some(v) = &a.variant {
                cfg.model.variant = v.parse()?;
            }
            cfg.resolve()?;
            cmd_train(&cfg, a.stage, &out).map(|_| ())
        }
        Command::Eval(a) => {
            if let Some(d) = &a.data {
                cfg.paths.data = Some(d.clone());
            }
            if let Some(m) = &a.model {
                cfg.paths.model = Some(m.clone());
            }
            if let Some(p) = &a.param_ckpt {
                cfg.paths.param_ckpt = Some(p.clone());
            }
            if let Some(s) = a.split {
                cfg.eval.split = s.into();
            }
            if let Some(c) = a.profile_column {
                cfg.eval.profile_column = Some(c);
            }
            if let Some(r) = a.rounds {
                cfg.eval.rounds = r;
            }
            cfg.eval.save_restored |= a.save_restored;
            cfg.resolve()?;
            let only_efficiency = a.efficiency && a.data.is_none() && a.profile_column.is_none();
            cmd_eval(&cfg, a.efficiency, only_efficiency, &out)
        }
        Command::Ablate(a) => {
            cfg.apply_train_overrides(&a.common);
            if let Some(r) = a.rounds {
                cfg.eval.rounds = r;
            }
            cfg.resolve()?;
            cmd_ablate(&cfg, &out).map(|_| ())
        }
        Command::Plot(a) => cmd_plot(&a.curves, &out.join(&a.name)),
    }
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(RUN_CONFIG_FILE);
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Config(format!("missing {what}")))
}

/// Synthesizes a dataset under `out` from `paths.clean`, or from a fresh
/// synthetic corpus written to `out/source`.
pub fn cmd_simulate(cfg: &RunConfig, synthetic: bool, out: &Path) -> Result<DatasetManifest> {
    echo_config(cfg, out)?;
    let clean = if synthetic {
        let src = out.join("source");
        data::write_synthetic_corpus(&cfg.corpus, &src)?;
        src
    } else {
        require(&cfg.paths.clean, "--clean directory (or --synthetic-corpus)")?.clone()
    };
    data::build_dataset_with(&clean, cfg.task, &cfg.degradation, out, cfg.seed, &cfg.dataset)
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let dir = require(&cfg.paths.data, "--data dataset directory")?;
    let m = DatasetManifest::load(dir)?;
    if m.task != cfg.task {
        return Err(Error::Config(format!("dataset is for {}, run is configured for {}", m.task, cfg.task)));
    }
    Ok(m)
}

fn load_param_ckpt(cfg: &RunConfig) -> Result<Option<Checkpoint>> {
    cfg.paths.param_ckpt.as_ref().map(|p| Checkpoint::load(p)).transpose()
}

/// Trains the requested stages; checkpoints go to `out/param_net` and
/// `out/<variant>`. Returns the restoration checkpoint when one was trained.
pub fn cmd_train(cfg: &RunConfig, stage: Stage, out: &Path) -> Result<Option<Checkpoint>> {
    let manifest = load_manifest(cfg)?;
    echo_config(cfg, out)?;
    let mut param_ck = load_param_ckpt(cfg)?;
    if matches!(stage, Stage::Param | Stage::Both) {
        param_ck = Some(train::train_param_net(&manifest, &cfg.train, &cfg.param_net, Some(&out.join(PARAM_NET_DIR)))?);
    }
    if stage == Stage::Param {
        return Ok(None);
    }
    let model_cfg = ModelConfig {
        in_channels: channels_of(&manifest)?,
        ..cfg.model.clone()
    };
    let ck = train_variant(cfg, &manifest, &model_cfg, param_ck.as_ref(), &out.join(model_cfg.variant.name()))?;
    Ok(Some(ck))
}

fn channels_of(manifest: &DatasetManifest) -> Result<usize> {
    manifest
        .entries
        .first()
        .map(|e| e.channels)
        .ok_or_else(|| Error::Config("dataset has no entries".into()))
}

fn train_variant(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    model_cfg: &ModelConfig,
    param_ck: Option<&Checkpoint>,
    dir: &Path,
) -> Result<Checkpoint> {
    let param_net = match (model_cfg.variant.needs_param(), cfg.oracle_param, param_ck) {
        (true, false, Some(ck)) => Some(ck.param_net()?),
        _ => None,
    };
    let source = match (model_cfg.variant.needs_param(), cfg.oracle_param, &param_net) {
        (false, _, _) => ParamSource::None,
        (true, true, _) => ParamSource::Oracle,
        (true, false, Some(n)) => ParamSource::Net(n),
        (true, false, None) => ParamSource::None,
    };
    train::train_dparnet(manifest, &cfg.train, model_cfg, source, Some(dir))
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn bench_options(cfg: &RunConfig) -> BenchOptions {
    BenchOptions {
        size: cfg.eval.bench_size,
        rounds: cfg.eval.rounds,
        warmup: cfg.eval.warmup,
    }
}

/// Scores a checkpoint on a split and/or benchmarks its cost.
pub fn cmd_eval(cfg: &RunConfig, efficiency: bool, only_efficiency: bool, out: &Path) -> Result<()> {
    echo_config(cfg, out)?;
    let model_ck = cfg.paths.model.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
    if efficiency {
        let model_cfg = match &model_ck {
            Some(ck) => match &ck.config {
                NetConfig::Dparnet(c) => c.clone(),
                NetConfig::ParamNet(_) => {
                    return Err(Error::Config("--model must be a restoration checkpoint".into()))
                }
            },
            None => cfg.model.clone(),
        };
        let report = eval::benchmark_efficiency(&model_cfg, bench_options(cfg))?;
        report.write(out)?;
        println!("{}", report.table());
        if only_efficiency {
            return Ok(());
        }
    }
    let manifest = load_manifest(cfg)?;
    let model_ck = model_ck.ok_or_else(|| Error::Config("missing --model checkpoint directory".into()))?;
    let param_ck = if cfg.oracle_param { None } else { load_param_ckpt(cfg)? };
    let restorer = Restorer::from_checkpoints(&model_ck, param_ck.as_ref())?;
    let opts = EvalOptions {
        model_id: cfg.paths.model.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        timestamp: timestamp(),
        save_restored: cfg.eval.save_restored,
        profile_column: cfg.eval.profile_column,
    };
    let report = eval::evaluate(&restorer, &manifest, cfg.eval.split, &opts, Some(out))?;
    println!("{}", report.table());
    Ok(())
}

/// Trains all four variants with the same budget and seed, evaluates each
/// on the configured split and writes the comparison table.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<AblationReport> {
    let manifest = load_manifest(cfg)?;
    echo_config(cfg, out)?;
    let param_ck = match (cfg.oracle_param, load_param_ckpt(cfg)?) {
        (true, _) => None,
        (false, Some(ck)) => Some(ck),
        (false, None) => Some(train::train_param_net(&manifest, &cfg.train, &cfg.param_net, Some(&out.join(PARAM_NET_DIR)))?),
    };
    let in_channels = channels_of(&manifest)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let model_cfg = ModelConfig {
            in_channels,
            variant,
            ..cfg.model.clone()
        };
        let dir = out.join(variant.name());
        let ck = train_variant(cfg, &manifest, &model_cfg, param_ck.as_ref(), &dir)?;
        let restorer = Restorer::from_checkpoints(&ck, if variant.needs_param() { param_ck.as_ref() } else { None })?;
        let opts = EvalOptions {
            model_id: variant.name().to_string(),
            timestamp: timestamp(),
            ..Default::default()
        };
        let report = eval::evaluate(&restorer, &manifest, cfg.eval.split, &opts, Some(&dir))?;
        let efficiency = eval::benchmark_efficiency(&model_cfg, bench_options(cfg))?;
        let best_val_psnr = ck
            .train_curve
            .iter()
            .filter_map(|p| p.val_metric)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(AblationRow {
            efficiency,
            metrics: report.aggregate,
            best_val_psnr,
        });
    }
    let report = AblationReport { task: manifest.task, rows };
    report.write(out)?;
    println!("{}", report.table());
    Ok(report)
}

/// Overlays the validation curves of several runs in one SVG.
pub fn cmd_plot(curves: &[PathBuf], out_file: &Path) -> Result<()> {
    use plotters::prelude::*;

    let mut series = Vec::new();
    for path in curves {
        let pts: Vec<(f64, f64)> = train::read_curve(path)?
            .iter()
            .filter_map(|p| p.val_metric.map(|v| (p.epoch as f64, v)))
            .collect();
        if pts.is_empty() {
            return Err(Error::Config(format!("{} has no validation values", path.display())));
        }
        let label = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        series.push((label, pts));
    }
    if let Some(parent) = out_file.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (_, pts) in &series {
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(0.05);
    let draw_err = |e: &dyn std::fmt::Display| Error::io(out_file, std::io::Error::other(e.to_string()));

    let root = SVGBackend::new(out_file, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(|e| draw_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("PSNR")
        .draw()
        .map_err(|e| draw_err(&e))?;
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| draw_err(&e))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| draw_err(&e))?;
    root.present().map_err(|e| draw_err(&e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("tsak = \"denoise\""), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[train]\nlr_rate = 1.0"), Err(Error::Config(_))));
        let c = RunConfig::from_toml("task = \"deturbulence\"\n[train]\nepochs = 3").unwrap();
        assert_eq!(c.task, Task::Deturbulence);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.lr, 1e-4);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.paths.data = Some("ds".into());
        c.eval.profile_column = Some(3);
        c.resolve().unwrap();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
