//! Command implementations behind the `ropeattn` binary.
//!
//! Instances are drawn from a seeded ChaCha8 stream (see [`RNG_ALGORITHM`]);
//! reports are JSON objects, one per line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ropeattn::engine::{DEFAULT_CACHE_BYTES, RunStats};
use ropeattn::io::{read_matrix_csv, read_weights, write_matrix_csv, write_weights, MANIFEST_FILE};
use ropeattn::polyexp::DEFAULT_MONOMIAL_BUDGET;
use ropeattn::rope::DEFAULT_ROPE_BASE;
use ropeattn::structured::{ToeplitzGenerator, DEFAULT_DENSE_LIMIT};
use ropeattn::{
    arattc_fast, arattc_oracle, linear_attention, linear_attention_oracle, linf_error, rope_weights,
    AttentionInstance, EngineConfig, Error, Matrix, Result, SupportSet, WeightSequence,
};

/// How instances are derived from a seed.
///
/// `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha 0.3) yields uniforms
/// `u = (next_u64 >> 11) * 2^-53`. Q, K and V are filled row-major in that
/// order with `B * (2u - 1)`. In random-support mode the support is then
/// drawn by partial Fisher-Yates over the row-major `d x d` coordinates
/// (`j = i + floor(u * (d^2 - i))`), and each generator in support order is
/// filled for offsets `-(n-1)..=n-1` with `2u - 1`.
pub const RNG_ALGORITHM: &str = "chacha8-seed_from_u64/u53/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Rope,
    RandomSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Gen,
    Verify,
    Bench,
    Linear,
}

/// Parameters shared by every command.
#[derive(Debug, Clone, PartialEq, Args, Serialize)]
pub struct RunConfig {
    /// Sequence length.
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// Head dimension.
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    /// Entry bound on Q, K and V.
    #[arg(long = "B", visible_alias = "bound", default_value_t = 0.5)]
    #[serde(rename = "B")]
    pub bound: f64,
    /// Target max-norm error of the fast output.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// RoPE frequency base.
    #[arg(long, default_value_t = DEFAULT_ROPE_BASE)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Rope)]
    pub mode: Mode,
    /// Support size in random-support mode (default `min(2d, d^2)`).
    #[arg(long)]
    pub support_size: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Largest n for which the quadratic oracle runs.
    #[arg(long, default_value_t = DEFAULT_DENSE_LIMIT)]
    pub dense_limit: usize,
    /// Memory for cached spectra, in MiB.
    #[arg(long, default_value_t = DEFAULT_CACHE_BYTES >> 20)]
    pub cache_mib: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 16,
            d: 4,
            bound: 0.5,
            eps: 1e-6,
            alpha: DEFAULT_ROPE_BASE,
            seed: 1,
            mode: Mode::Rope,
            support_size: None,
            threads: None,
            dense_limit: DEFAULT_DENSE_LIMIT,
            cache_mib: DEFAULT_CACHE_BYTES >> 20,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Domain(msg));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if self.mode == Mode::Rope && !self.d.is_multiple_of(2) {
            return fail(format!("rope mode needs an even d, got {}", self.d));
        }
        if !(self.bound >= 0.0 && self.bound.is_finite()) {
            return fail(format!("B must be finite and non-negative, got {}", self.bound));
        }
        if !(self.eps > 0.0 && self.eps < 0.1) {
            return fail(format!("eps must lie in (0, 0.1), got {}", self.eps));
        }
        if self.mode == Mode::RandomSupport {
            let s = self.support_size();
            if s == 0 || s > self.d * self.d {
                return fail(format!("support size must lie in [1, {}], got {s}", self.d * self.d));
            }
        }
        Ok(())
    }

    pub fn support_size(&self) -> usize {
        match self.mode {
            Mode::Rope => 2 * self.d,
            Mode::RandomSupport => self.support_size.unwrap_or((2 * self.d).min(self.d * self.d)),
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            dense_limit: self.dense_limit,
            monomial_budget: DEFAULT_MONOMIAL_BUDGET,
            cache_bytes: self.cache_mib.saturating_mul(1 << 20),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ropeattn", version, about = "Almost-linear-time RoPE attention harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Write a seeded instance as CSV files plus a weight manifest.
    Gen {
        #[command(flatten)]
        config: RunConfig,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare the fast path against the exact oracle.
    Verify {
        #[command(flatten)]
        config: RunConfig,
        /// Read Q.csv, K.csv, V.csv and the manifest from here instead of generating.
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
    /// Time the fast path (and the oracle up to the dense limit) over a sweep of n.
    Bench {
        #[command(flatten)]
        config: RunConfig,
        /// Comma-separated sequence lengths; defaults to --n.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        /// Timed runs per n; the median is reported.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Linear attention against its dense reference.
    Linear {
        #[command(flatten)]
        config: RunConfig,
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
}

impl CliCommand {
    pub fn config(&self) -> &RunConfig {
        match self {
            CliCommand::Gen { config, .. }
            | CliCommand::Verify { config, .. }
            | CliCommand::Bench { config, .. }
            | CliCommand::Linear { config, .. } => config,
        }
    }
}

/// One JSON report line.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: Command,
    pub config: RunConfig,
    pub rng: &'static str,
    pub n: usize,
    pub d: usize,
    pub linf_error: Option<f64>,
    pub oracle_time: Option<f64>,
    pub fast_time: Option<f64>,
    pub monomial_count: Option<usize>,
    pub poly_degree: Option<usize>,
    pub exponent_bound: Option<f64>,
    /// `fast_time(n) / fast_time(previous n)` in a bench sweep.
    pub ratio: Option<f64>,
    pub oracle_ratio: Option<f64>,
    pub pass: Option<bool>,
    pub stats: Option<RunStats>,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

impl Report {
    fn new(command: Command, config: &RunConfig, n: usize, d: usize) -> Self {
        Self {
            command,
            config: config.clone(),
            rng: RNG_ALGORITHM,
            n,
            d,
            linf_error: None,
            oracle_time: None,
            fast_time: None,
            monomial_count: None,
            poly_degree: None,
            exponent_bound: None,
            ratio: None,
            oracle_ratio: None,
            pass: None,
            stats: None,
            files: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn record_fast(&mut self, stats: &RunStats) {
        self.monomial_count = Some(stats.monomial_count);
        self.poly_degree = stats.poly_degree;
        self.exponent_bound = stats.exponent_bound;
    }
}

/// JSON body printed when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    pub message: String,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        Self {
            error: ErrorBody {
                kind: e.kind(),
                message: e.to_string(),
            },
        }
    }
}

fn signed_unit(rng: &mut ChaCha8Rng) -> f64 {
    2.0 * rng.gen::<f64>() - 1.0
}

fn draw_matrix(n: usize, d: usize, bound: f64, rng: &mut ChaCha8Rng) -> Matrix {
    // `+ 0.0` turns the -0.0 produced when B = 0 into 0.0.
    Matrix::from_fn(n, d, |_, _| bound * signed_unit(rng) + 0.0)
}

/// The seeded instance described by `config` (see [`RNG_ALGORITHM`]).
pub fn generate_instance(config: &RunConfig) -> Result<AttentionInstance> {
    config.validate()?;
    let (n, d) = (config.n, config.d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let q = draw_matrix(n, d, config.bound, &mut rng);
    let k = draw_matrix(n, d, config.bound, &mut rng);
    let v = draw_matrix(n, d, config.bound, &mut rng);
    let weights = match config.mode {
        Mode::Rope => rope_weights(n, d, config.alpha)?,
        Mode::RandomSupport => {
            let mut cells: Vec<(usize, usize)> =
                (0..d).flat_map(|a| (0..d).map(move |b| (a, b))).collect();
            let size = config.support_size();
            for i in 0..size {
                let last = cells.len() - 1;
                let j = i + (rng.gen::<f64>() * (cells.len() - i) as f64) as usize;
                cells.swap(i, j.min(last));
            }
            cells.truncate(size);
            let gens = (0..size)
                .map(|_| ToeplitzGenerator::from_offsets(n, |_| signed_unit(&mut rng)))
                .collect::<Result<Vec<_>>>()?;
            WeightSequence::new(n, SupportSet::new(d, cells)?, gens)?
        }
    };
    AttentionInstance::new(q, k, v, weights, config.bound, config.eps)
}

/// Reads an instance written by [`cmd_gen`]; B and eps come from `config`.
pub fn load_instance(dir: &Path, config: &RunConfig) -> Result<AttentionInstance> {
    let weights = read_weights(&dir.join(MANIFEST_FILE))?;
    let q = read_matrix_csv(&dir.join("Q.csv"))?;
    let k = read_matrix_csv(&dir.join("K.csv"))?;
    let v = read_matrix_csv(&dir.join("V.csv"))?;
    AttentionInstance::new(q, k, v, weights, config.bound, config.eps)
}

pub fn cmd_gen(config: &RunConfig, out_dir: &Path) -> Result<Report> {
    let inst = generate_instance(config)?;
    std::fs::create_dir_all(out_dir)?;
    let mut report = Report::new(Command::Gen, config, inst.n(), inst.d());
    for (name, m) in [("Q.csv", &inst.q), ("K.csv", &inst.k), ("V.csv", &inst.v)] {
        let path = out_dir.join(name);
        write_matrix_csv(&path, m)?;
        report.files.push(path.display().to_string());
    }
    let manifest = write_weights(out_dir, &inst.weights)?;
    report.files.push(manifest.display().to_string());
    Ok(report)
}

/// The instance to run and the config to echo; for loaded instances the
/// echoed `n` and `d` are the file's.
fn instance_for(config: &RunConfig, input_dir: Option<&Path>) -> Result<(AttentionInstance, RunConfig)> {
    match input_dir {
        Some(dir) => {
            let inst = load_instance(dir, config)?;
            let echo = RunConfig {
                n: inst.n(),
                d: inst.d(),
                ..config.clone()
            };
            Ok((inst, echo))
        }
        None => Ok((generate_instance(config)?, config.clone())),
    }
}

/// Runs fast and oracle paths; `pass` is `linf_error <= eps`.
pub fn cmd_verify(config: &RunConfig, input_dir: Option<&Path>) -> Result<Report> {
    let (inst, config) = instance_for(config, input_dir)?;
    let engine = config.engine();
    let mut report = Report::new(Command::Verify, &config, inst.n(), inst.d());

    let start = Instant::now();
    let fast = arattc_fast(&inst, &engine)?;
    report.fast_time = Some(start.elapsed().as_secs_f64());

    let start = Instant::now();
    let exact = arattc_oracle(&inst, &engine)?;
    report.oracle_time = Some(start.elapsed().as_secs_f64());

    let err = linf_error(&fast.t, &exact.t)?;
    report.linf_error = Some(err);
    report.pass = Some(err <= inst.eps);
    report.record_fast(&fast.stats);
    report.stats = Some(fast.stats);
    Ok(report)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Times the fast path for each n; the oracle only up to the dense limit.
/// Reports are handed to `emit` as they complete.
pub fn cmd_bench(
    config: &RunConfig,
    sweep: &[usize],
    repeats: usize,
    mut emit: impl FnMut(&Report),
) -> Result<Vec<Report>> {
    let sizes: Vec<usize> = if sweep.is_empty() { vec![config.n] } else { sweep.to_vec() };
    let repeats = repeats.max(1);
    let engine = config.engine();
    let mut reports: Vec<Report> = Vec::new();
    for &n in &sizes {
        let cfg = RunConfig { n, ..config.clone() };
        let inst = generate_instance(&cfg)?;
        let mut report = Report::new(Command::Bench, &cfg, n, inst.d());

        let mut times = Vec::with_capacity(repeats);
        let mut fast = None;
        for _ in 0..repeats {
            let start = Instant::now();
            let out = arattc_fast(&inst, &engine)?;
            times.push(start.elapsed().as_secs_f64());
            fast = Some(out);
        }
        let fast = fast.expect("at least one repeat");
        report.fast_time = Some(median(times));
        report.record_fast(&fast.stats);

        if n <= engine.dense_limit {
            let mut times = Vec::with_capacity(repeats);
            let mut exact = None;
            for _ in 0..repeats {
                let start = Instant::now();
                let out = arattc_oracle(&inst, &engine)?;
                times.push(start.elapsed().as_secs_f64());
                exact = Some(out);
            }
            let exact = exact.expect("at least one repeat");
            report.oracle_time = Some(median(times));
            let err = linf_error(&fast.t, &exact.t)?;
            report.linf_error = Some(err);
            report.pass = Some(err <= inst.eps);
        } else {
            report.notes.push(format!("oracle skipped: n exceeds dense limit {}", engine.dense_limit));
        }
        if let Some(prev) = reports.last() {
            report.ratio = prev.fast_time.zip(report.fast_time).map(|(a, b)| b / a);
            report.oracle_ratio = prev.oracle_time.zip(report.oracle_time).map(|(a, b)| b / a);
        }
        report.stats = Some(fast.stats);
        emit(&report);
        reports.push(report);
    }
    Ok(reports)
}

/// Linear attention against its dense reference (skipped above the dense limit).
pub fn cmd_linear(config: &RunConfig, input_dir: Option<&Path>) -> Result<Report> {
    let (inst, config) = instance_for(config, input_dir)?;
    let mut report = Report::new(Command::Linear, &config, inst.n(), inst.d());
    let start = Instant::now();
    let fast = linear_attention(&inst)?;
    report.fast_time = Some(start.elapsed().as_secs_f64());
    if inst.n() <= config.dense_limit {
        let start = Instant::now();
        let dense = linear_attention_oracle(&inst, config.dense_limit)?;
        report.oracle_time = Some(start.elapsed().as_secs_f64());
        let err = linf_error(&fast.t, &dense.t)?;
        report.linf_error = Some(err);
        report.pass = Some(err <= inst.eps);
    } else {
        report.notes.push(format!("dense reference skipped: n exceeds dense limit {}", config.dense_limit));
    }
    report
        .notes
        .push("components carry 1/sqrt(d); the factor cancels in D^-1 A V".into());
    report.stats = Some(fast.stats);
    Ok(report)
}

/// Runs a parsed command, printing JSON lines via `out`; returns the exit code.
pub fn run(cli: &Cli, mut out: impl FnMut(String) + Send) -> i32 {
    let threads = cli.command.config().threads;
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            out(error_json(&Error::Configuration(format!("thread pool: {e}"))));
            return 1;
        }
    };
    pool.install(|| {
        let result = match &cli.command {
            CliCommand::Gen { config, out_dir } => cmd_gen(config, out_dir).map(|r| vec![r]),
            CliCommand::Verify { config, input_dir } => cmd_verify(config, input_dir.as_deref()).map(|r| vec![r]),
            CliCommand::Linear { config, input_dir } => cmd_linear(config, input_dir.as_deref()).map(|r| vec![r]),
            CliCommand::Bench { config, sweep, repeats } => {
                cmd_bench(config, sweep, *repeats, |r| out(to_json(r))).map(|_| Vec::new())
            }
        };
        match result {
            Ok(reports) => {
                let mut code = 0;
                for r in &reports {
                    out(to_json(r));
                    if matches!(r.command, Command::Verify) && r.pass != Some(true) {
                        code = 1;
                    }
                }
                code
            }
            Err(e) => {
                out(error_json(&e));
                1
            }
        }
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("reports serialize")
}

pub fn error_json(e: &Error) -> String {
    to_json(&ErrorReport::from(e))
}
