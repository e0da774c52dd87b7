//! Command line front end.
//!
//! Exit codes: 0 on success, 2 for usage errors, 1 for runtime failures.
//! Runtime failures print one line `error: <kind>: <message>` to stderr.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data_io::{self, Delimiter, ImplicitDataset, SplitConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Target};
use crate::experiment::{fit, hyper_sweep, sweep_tsv, ModelKind, SweepParam};
use crate::manifest::RunManifest;
use crate::model::{FactorModel, TrainConfig};
use crate::par;
use crate::theory::{self, RecoveryConfig, SweepConfig};
use crate::trainer::{bench_grad, BenchReport};

#[derive(Debug, Parser)]
#[command(name = "setrank", version, about = "Setwise collaborative ranking experiments")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Binarize, filter and split a rating log into a dataset file.
    Prepare(PrepareArgs),
    /// Train a SetRank or BPR model.
    Train(TrainArgs),
    /// Top-P evaluation of a model on the test split.
    Evaluate(EvaluateArgs),
    /// Excess-risk scaling experiment on synthetic worlds.
    Simulate(SimulateArgs),
    /// Time the fast and naive gradient paths.
    BenchGrad(BenchArgs),
    /// Test P@5 across values of tau or r.
    Sweep(SweepArgs),
    /// Write a synthetic rating log from a low-rank ranking world.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum DelimiterArg {
    Tab,
    Comma,
    DoubleColon,
}

impl From<DelimiterArg> for Delimiter {
    fn from(d: DelimiterArg) -> Self {
        match d {
            DelimiterArg::Tab => Delimiter::Tab,
            DelimiterArg::Comma => Delimiter::Comma,
            DelimiterArg::DoubleColon => Delimiter::DoubleColon,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "tab")]
    pub delimiter: DelimiterArg,
    /// Ratings strictly above this become positives.
    #[arg(long, default_value_t = 3.0)]
    pub threshold: f64,
    #[arg(long = "min-pos", default_value_t = 1)]
    pub min_pos: usize,
    #[arg(long = "train-frac", default_value_t = 0.5)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 10)]
    pub cap: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModelArg {
    Setrank,
    Bpr,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Setrank => ModelKind::SetRank,
            ModelArg::Bpr => ModelKind::Bpr,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Hyper {
    #[arg(long = "r", default_value_t = 100)]
    pub rank: usize,
    #[arg(long, default_value_t = 0.7)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.95)]
    pub decay: f64,
    #[arg(long, default_value_t = 3)]
    pub tau: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long = "init-std", default_value_t = 0.1)]
    pub init_std: f64,
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Fixed reduction order: bit-identical results across runs and thread counts.
    #[arg(long)]
    pub deterministic: bool,
}

impl Hyper {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            rank: self.rank,
            lambda: self.lambda,
            gamma: self.lr,
            decay: self.decay,
            tau: self.tau,
            epochs: self.epochs,
            seed: self.seed,
            init_std: self.init_std,
            deterministic: self.deterministic,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "setrank")]
    pub model: ModelArg,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch TSV log: epoch, objective, val_p5, gamma.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ReportFormat {
    Tsv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub cutoffs: Vec<usize>,
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: ReportFormat,
    /// Per-user metrics TSV.
    #[arg(long = "per-user")]
    pub per_user: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    #[arg(long, default_value_t = 100)]
    pub items: usize,
    #[arg(long, default_value_t = 5)]
    pub rank: usize,
    #[arg(long = "J", default_value_t = 5)]
    pub positives: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    /// User counts to sweep; overrides --users.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long = "J", value_delimiter = ',', default_value = "100")]
    pub positives: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub tau: usize,
    #[arg(long = "r", default_value_t = 50)]
    pub rank: usize,
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ParamArg {
    Tau,
    R,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Split dataset; omit with --synthetic.
    #[arg(long, required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use the built-in synthetic recovery task instead of --data.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: bool,
    #[arg(long, value_enum, default_value = "setrank")]
    pub model: ModelArg,
    #[arg(long, value_enum)]
    pub param: ParamArg,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    pub users: usize,
    #[arg(long, default_value_t = 40)]
    pub items: usize,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long = "J", default_value_t = 8)]
    pub positives: usize,
    #[arg(long, default_value_t = 2.0)]
    pub sharpness: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn config_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn finish(mut manifest: RunManifest, started: Instant, at: &Path) -> Result<()> {
    manifest.wall_time_secs = started.elapsed().as_secs_f64();
    manifest.write(&RunManifest::path_for(at))
}

fn prepare(a: &PrepareArgs) -> Result<()> {
    let started = Instant::now();
    let ratings = data_io::read_ratings(&a.input, a.delimiter.into())?;
    let ds = data_io::binarize(ratings, a.threshold)?;
    let ds = data_io::filter_users(&ds, a.min_pos)?;
    let ds = data_io::split(
        &ds,
        &SplitConfig {
            train_frac: a.train_frac,
            max_train_per_user: a.cap,
            seed: a.seed,
        },
    )?;
    ds.save(&a.out)?;
    log::info!(
        "{} users, {} items, {} positives",
        ds.n_users(),
        ds.n_items(),
        ds.n_positives()
    );
    let mut m = RunManifest::new("prepare", config_json(a));
    m.input(&a.input)?;
    m.output(&a.out)?;
    finish(m, started, &a.out)
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let ds = ImplicitDataset::load(&a.data)?;
    let cfg = a.hyper.config();
    let out = par::with_threads(a.hyper.threads, || fit(a.model.into(), &ds, &cfg))?;
    out.model.save(&a.out)?;
    let mut m = RunManifest::new("train", config_json(a));
    m.input(&a.data)?;
    m.output(&a.out)?;
    if let Some(log_path) = &a.log {
        write_file(log_path, out.log.to_tsv().as_bytes())?;
        m.output(log_path)?;
    }
    finish(m, started, &a.out)?;
    match out.diverged {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let ds = ImplicitDataset::load(&a.data)?;
    let model = FactorModel::load_for(&a.model, &ds)?;
    let report = par::with_threads(a.threads, || {
        evaluate(&model, &ds, &a.cutoffs, Target::Test, a.per_user.is_some())
    })?;
    let text = match a.format {
        ReportFormat::Tsv => report.to_tsv(),
        ReportFormat::Json => report.to_json(),
    };
    let mut m = RunManifest::new("evaluate", config_json(a));
    m.input(&a.data)?;
    m.input(&a.model)?;
    match &a.out {
        Some(p) => {
            write_file(p, text.as_bytes())?;
            m.output(p)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    if let (Some(p), Some(rows)) = (&a.per_user, report.per_user_tsv()) {
        write_file(p, rows.as_bytes())?;
        m.output(p)?;
    }
    let anchor = match &a.out {
        Some(p) => p.clone(),
        None => {
            let mut s = a.model.as_os_str().to_owned();
            s.push(".evaluate");
            PathBuf::from(s)
        }
    };
    finish(m, started, &anchor)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let counts = a.sweep.clone().unwrap_or_else(|| vec![a.users]);
    let mut cfg = SweepConfig::standard(counts, a.replicates, a.seed);
    cfg.n_items = a.items;
    cfg.rank = a.rank;
    cfg.positives_per_user = a.positives;
    cfg.alpha = a.alpha;
    if let Some(v) = a.lambda {
        cfg.fit.lambda = v;
    }
    if let Some(v) = a.lr {
        cfg.fit.gamma = v;
    }
    if let Some(v) = a.decay {
        cfg.fit.decay = v;
    }
    if let Some(v) = a.tau {
        cfg.fit.tau = v;
    }
    if let Some(v) = a.epochs {
        cfg.fit.epochs = v;
    }
    let table = par::with_threads(a.threads, || theory::scaling_sweep(&cfg))?;
    write_file(&a.out, table.to_tsv().as_bytes())?;
    for s in table.summary() {
        eprintln!("N = {:>6}  mean D = {:.6}  sd = {:.6}", s.n_users, s.mean, s.std);
    }
    if let Some(slope) = table.log_log_slope() {
        eprintln!("log-log slope of D against N: {slope:.3}");
    }
    let mut m = RunManifest::new("simulate", config_json(&cfg));
    m.output(&a.out)?;
    finish(m, started, &a.out)
}

fn bench(a: &BenchArgs) -> Result<()> {
    let started = Instant::now();
    let mut text = format!("{}\n", BenchReport::TSV_HEADER);
    for &j in &a.positives {
        let r = bench_grad(j, a.tau, a.rank, a.users, a.reps, a.seed)?;
        text.push_str(&r.tsv_row());
        text.push('\n');
    }
    match &a.out {
        Some(p) => {
            write_file(p, text.as_bytes())?;
            let mut m = RunManifest::new("bench-grad", config_json(a));
            m.output(p)?;
            finish(m, started, p)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let started = Instant::now();
    let ds = match &a.data {
        Some(p) => ImplicitDataset::load(p)?,
        None => {
            let (raw, _) = theory::recovery_dataset(&RecoveryConfig::default())?;
            data_io::split(
                &raw,
                &SplitConfig {
                    seed: a.hyper.seed,
                    ..SplitConfig::default()
                },
            )?
        }
    };
    let param = match a.param {
        ParamArg::Tau => SweepParam::Tau,
        ParamArg::R => SweepParam::Rank,
    };
    let cfg = a.hyper.config();
    let points = par::with_threads(a.hyper.threads, || {
        hyper_sweep(a.model.into(), &ds, &cfg, param, &a.values)
    })?;
    write_file(&a.out, sweep_tsv(param, &points).as_bytes())?;
    let mut m = RunManifest::new("sweep", config_json(a));
    if let Some(p) = &a.data {
        m.input(p)?;
    }
    m.output(&a.out)?;
    finish(m, started, &a.out)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = RecoveryConfig {
        n_users: a.users,
        n_items: a.items,
        rank: a.rank,
        positives_per_user: a.positives,
        sharpness: a.sharpness,
        seed: a.seed,
    };
    let (ds, _) = theory::recovery_dataset(&cfg)?;
    // positives get 5 stars; a few unobserved items per user get low ratings
    let mut text = String::new();
    let mut r = crate::rng::stream(a.seed, &[0x5359_4e54]);
    for u in 0..ds.n_users() {
        let p = ds.user(u);
        for &i in p.items() {
            text.push_str(&format!("u{u}\ti{i}\t5\n"));
        }
        for i in crate::trainer::sample_unobserved(p.items(), ds.n_items(), p.len() / 2, &mut r) {
            text.push_str(&format!("u{u}\ti{i}\t{}\n", 1 + i % 3));
        }
    }
    write_file(&a.out, text.as_bytes())?;
    let mut m = RunManifest::new("synth", config_json(a));
    m.output(&a.out)?;
    finish(m, started, &a.out)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::BenchGrad(a) => bench(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
    }
}

/// Parses `argv` (including the program name), runs it and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e);
            1
        }
    }
}
