//! Command-line front end: `generate`, `cluster`, `tune`, `bench`, `verify`.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 uncorrectable fault,
//! 4 verification failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::faultsim::FaultSpec;
use crate::gemm::TileConfig;
use crate::kmeans::{
    lloyd, resolve_tile, FtMode, InitMethod, KMeansConfig, KMeansResult, TileChoice,
};
use crate::matrix::{
    mat_load, mat_random_dyn, mat_store, Distribution, DynMat, FileFormat, Mat, Precision, Real,
};
use crate::tuner::{
    enumerate_configs, load_shapes, measure_overhead, select, BenchData, Bounds, MachineLimits,
    SelectOptions, Shape, TuneTable, BENCH_CSV_HEADER,
};
use crate::verify::{false_alarm_check, oracle_assign_check, sweep_tile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNCORRECTABLE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

pub const REPORT_VERSION_LINE: &str = "# ftkm-report v1";
pub const REPORT_HEADER: &str = "phase,metric,value";

#[derive(Debug, Parser)]
#[command(name = "ftkm", version, about = "Fault-tolerant K-means")]
pub struct Cli {
    /// Worker threads; falls back to FTKM_THREADS, then all cores.
    #[arg(long, global = true, env = "FTKM_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Run K-means on a dataset.
    Cluster(ClusterArgs),
    /// Search tile configurations and write a tune table.
    Tune(TuneArgs),
    /// Measure checked vs unchecked assignment throughput.
    Bench(BenchArgs),
    /// Run the built-in oracle and fault-sweep checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, default_value = "single")]
    pub precision: Precision,
    /// `uniform` or `mixture:K:SPREAD`.
    #[arg(long, default_value = "uniform")]
    pub dist: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `.csv` writes CSV, anything else the binary format.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// off, abft or abft+dmr.
    #[arg(long, default_value = "off")]
    pub ft: FtMode,
    /// Fault spec, e.g. `fixed:3`, `prob:0.01@exp`, `fixed:2@sign/update`.
    #[arg(long, default_value = "none")]
    pub inject: String,
    /// Seed for the fault schedule; defaults to --seed.
    #[arg(long)]
    pub inject_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// random-sample or kmeans++.
    #[arg(long, default_value = "kmeans++")]
    pub init: InitMethod,
    /// `auto` or `bm,bn,bk,sm,sn,sk`.
    #[arg(long, default_value = "auto")]
    pub tile: String,
    #[arg(long)]
    pub tune_table: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write detection events as CSV.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Run a fault-free `--ft off` baseline first and report the overhead.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// `grid:default` or a file of `MxNxK` lines.
    #[arg(long, default_value = "grid:default")]
    pub shapes: String,
    #[arg(long, default_value = "single")]
    pub precision: Precision,
    #[arg(long, default_value = "off")]
    pub ft: FtMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Cache budget in bytes; 0 means unlimited.
    #[arg(long, default_value_t = 1 << 20)]
    pub cache_bytes: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `grid:default` or a file of `MxNxK` lines.
    #[arg(long, default_value = "grid:default")]
    pub grid: String,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value = "single")]
    pub precision: Precision,
    /// Protection measured against the unprotected run.
    #[arg(long, default_value = "abft")]
    pub ft: FtMode,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// `auto` or `bm,bn,bk,sm,sn,sk`.
    #[arg(long, default_value = "auto")]
    pub tile: String,
    #[arg(long)]
    pub tune_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Sweep all 32 bits instead of the sign and exponent bits.
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DmrPersistent { .. } => EXIT_UNCORRECTABLE,
        _ => EXIT_USAGE,
    }
}

/// Runs a parsed command on a pool of `--threads` workers.
pub fn run(cli: Cli) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Cluster(a) => cluster(&a),
        Command::Tune(a) => tune(&a),
        Command::Bench(a) => bench(&a),
        Command::Verify(a) => verify(&a),
    })
}

/// Parses `uniform` or `mixture:K:SPREAD`.
pub fn parse_distribution(text: &str) -> Result<Distribution> {
    if text == "uniform" {
        return Ok(Distribution::Uniform);
    }
    let bad = || {
        Error::invalid(format!(
            "distribution '{text}' is not uniform or mixture:K:SPREAD"
        ))
    };
    let rest = text.strip_prefix("mixture:").ok_or_else(bad)?;
    let (k, spread) = rest.split_once(':').ok_or_else(bad)?;
    Ok(Distribution::GaussianMixture {
        k: k.parse().map_err(|_| bad())?,
        spread: spread.parse().map_err(|_| bad())?,
    })
}

fn generate(a: &GenerateArgs) -> Result<i32> {
    let dist = parse_distribution(&a.dist)?;
    let m = mat_random_dyn(a.rows, a.cols, a.precision, a.seed, dist)?;
    mat_store(&m, &a.out, FileFormat::from_path(&a.out))?;
    println!(
        "wrote {} x {} {} matrix to {}",
        m.rows(),
        m.cols(),
        a.precision,
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn parse_tile(text: &str, precision: Precision) -> Result<TileChoice> {
    if text == "auto" {
        Ok(TileChoice::Auto)
    } else {
        Ok(TileChoice::Fixed(TileConfig::parse(text, precision)?))
    }
}

fn load_table(path: &Option<PathBuf>) -> Result<Option<TuneTable>> {
    path.as_deref().map(TuneTable::load).transpose()
}

fn cluster(a: &ClusterArgs) -> Result<i32> {
    let data = mat_load(&a.input, FileFormat::from_path(&a.input))?;
    let precision = data.precision();
    let mut cfg = KMeansConfig::new(a.k)
        .with_seed(a.seed)
        .with_ft(a.ft)
        .with_max_iters(a.max_iters)
        .with_init(a.init)
        .with_faults(FaultSpec::parse(
            &a.inject,
            a.inject_seed.unwrap_or(a.seed),
        )?);
    cfg.tol = a.tol;
    cfg.tile = parse_tile(&a.tile, precision)?;
    cfg.tune_table = load_table(&a.tune_table)?;
    match &data {
        DynMat::Single(x) => cluster_typed(x, &cfg, a),
        DynMat::Double(x) => cluster_typed(x, &cfg, a),
    }
}

fn cluster_typed<T: Real>(x: &Mat<T>, cfg: &KMeansConfig, a: &ClusterArgs) -> Result<i32> {
    let baseline = if a.compare {
        let base = KMeansConfig {
            ft_mode: FtMode::Off,
            faults: FaultSpec::none(),
            ..cfg.clone()
        };
        Some(lloyd(x, &base)?)
    } else {
        None
    };
    let result = lloyd(x, cfg)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let r = &result.report;
    println!(
        "k={} iters={} converged={} inertia={:.6e} detections={} corrections={} uncorrectable={} dmr_mismatches={} injected={}",
        cfg.k,
        result.iters,
        result.converged,
        result.inertia,
        r.detections,
        r.corrections,
        r.uncorrectable,
        r.dmr_mismatches,
        result.injections.len()
    );
    if let Some(b) = &baseline {
        println!(
            "overhead vs baseline: {:.2}% (assignments identical: {})",
            overhead_pct(b, &result),
            b.assignments == result.assignments
        );
    }
    if let Some(path) = &a.report {
        let text = run_report(x, cfg, a, &result, baseline.as_ref());
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &a.events {
        std::fs::write(path, result.report.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(if result.report.has_uncorrectable() {
        EXIT_UNCORRECTABLE
    } else {
        EXIT_OK
    })
}

fn overhead_pct<T: Real>(base: &KMeansResult<T>, ft: &KMeansResult<T>) -> f64 {
    100.0 * (ft.timings.total_ns as f64 - base.timings.total_ns as f64)
        / base.timings.total_ns.max(1) as f64
}

fn csv_safe(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

/// The `phase,metric,value` report of one clustering run.
pub fn run_report<T: Real>(
    x: &Mat<T>,
    cfg: &KMeansConfig,
    a: &ClusterArgs,
    res: &KMeansResult<T>,
    baseline: Option<&KMeansResult<T>>,
) -> String {
    let mut s = format!("{REPORT_VERSION_LINE}\n{REPORT_HEADER}\n");
    let mut row = |phase: &str, metric: &str, value: String| {
        let _ = writeln!(s, "{phase},{metric},{}", csv_safe(&value));
    };
    let (_, tile_warn) = resolve_tile::<T>(cfg, Shape::new(x.rows(), x.cols(), cfg.k));
    let t = &res.tile;
    row("config", "input", a.input.display().to_string());
    row("config", "precision", T::PRECISION.to_string());
    row("config", "rows", x.rows().to_string());
    row("config", "cols", x.cols().to_string());
    row("config", "k", cfg.k.to_string());
    row("config", "ft", cfg.ft_mode.to_string());
    row("config", "inject", cfg.faults.to_string());
    row("config", "inject_seed", cfg.faults.seed.to_string());
    row("config", "seed", cfg.seed.to_string());
    row("config", "init", cfg.init.to_string());
    row("config", "max_iters", cfg.max_iters.to_string());
    row("config", "tol", cfg.tol.to_string());
    row(
        "config",
        "tile_block",
        format!("{}x{}x{}", t.block.m, t.block.n, t.block.k),
    );
    row(
        "config",
        "tile_sub",
        format!("{}x{}x{}", t.sub.m, t.sub.n, t.sub.k),
    );
    row(
        "config",
        "tile_micro",
        format!("{}x{}x{}", t.micro.m, t.micro.n, t.micro.k),
    );
    row("timing", "init_ns", res.timings.init_ns.to_string());
    row("timing", "assign_ns", res.timings.assign_ns.to_string());
    row("timing", "update_ns", res.timings.update_ns.to_string());
    row("timing", "total_ns", res.timings.total_ns.to_string());
    let flops = Shape::new(x.rows(), x.cols(), cfg.k).flops() * (res.iters + 1) as f64;
    row(
        "summary",
        "gflops",
        format!("{:.3}", flops / res.timings.assign_ns.max(1) as f64),
    );
    row("summary", "iterations", res.iters.to_string());
    row("summary", "converged", res.converged.to_string());
    row("summary", "inertia", format!("{:e}", res.inertia));
    let r = &res.report;
    row("ft", "detections", r.detections.to_string());
    row("ft", "corrections", r.corrections.to_string());
    row("ft", "uncorrectable", r.uncorrectable.to_string());
    row("ft", "false_alarms", r.false_alarms.to_string());
    row("ft", "dmr_mismatches", r.dmr_mismatches.to_string());
    row("ft", "injections", res.injections.len().to_string());
    if let Some(b) = baseline {
        row(
            "compare",
            "baseline_total_ns",
            b.timings.total_ns.to_string(),
        );
        row(
            "compare",
            "overhead_pct",
            format!("{:.2}", overhead_pct(b, res)),
        );
        row(
            "compare",
            "assignments_identical",
            (b.assignments == res.assignments).to_string(),
        );
    }
    for w in res
        .warnings
        .iter()
        .chain(tile_warn.iter().filter(|w| !res.warnings.contains(w)))
    {
        row("warning", "message", w.clone());
    }
    for (i, c) in res.assignments.iter().enumerate() {
        row("assignment", &i.to_string(), c.to_string());
    }
    s
}

/// Reads the `assignment` rows of a report.
pub fn report_assignments(text: &str) -> Vec<usize> {
    text.lines()
        .filter_map(|l| l.strip_prefix("assignment,"))
        .filter_map(|l| l.split_once(',').and_then(|(_, v)| v.parse().ok()))
        .collect()
}

/// Value of one `phase,metric` row of a report.
pub fn report_value<'a>(text: &'a str, phase: &str, metric: &str) -> Option<&'a str> {
    let prefix = format!("{phase},{metric},");
    text.lines().find_map(|l| l.strip_prefix(prefix.as_str()))
}

fn tune(a: &TuneArgs) -> Result<i32> {
    let shapes = load_shapes(&a.shapes)?;
    let space = enumerate_configs(a.precision, &Bounds::default_for(a.precision))?;
    println!(
        "{} {} candidates, {} shapes",
        space.len(),
        a.precision,
        shapes.len()
    );
    let opts = SelectOptions {
        reps: a.reps,
        limits: MachineLimits {
            cache_bytes: (a.cache_bytes > 0).then_some(a.cache_bytes),
            ft: a.ft != FtMode::Off,
        },
        ..SelectOptions::default()
    };
    let out = select(&shapes, &space, a.ft, &opts)?;
    out.table.store(&a.out)?;
    let beats = out
        .shapes
        .iter()
        .filter(|s| s.gflops > s.default_gflops)
        .count();
    println!(
        "wrote {} entries to {}; {} distinct configs; tuned beats default on {}/{} shapes",
        out.table.len(),
        a.out.display(),
        out.table.distinct_configs().len(),
        beats,
        out.shapes.len()
    );
    Ok(EXIT_OK)
}

fn bench(a: &BenchArgs) -> Result<i32> {
    if a.ft == FtMode::Off {
        return Err(Error::invalid(
            "bench compares against --ft off; choose abft or abft+dmr",
        ));
    }
    let shapes = load_shapes(&a.grid)?;
    let table = load_table(&a.tune_table)?;
    let choice = parse_tile(&a.tile, a.precision)?;
    let mut text = format!("{BENCH_CSV_HEADER}\n");
    println!("{BENCH_CSV_HEADER}");
    let mut total = 0.0;
    for &shape in &shapes {
        let cfg = match (&choice, &table) {
            (TileChoice::Fixed(c), _) => *c,
            (TileChoice::Auto, Some(t)) => t.lookup(shape, a.precision).cfg,
            (TileChoice::Auto, None) => TileConfig::default_for(a.precision),
        };
        let row = match a.precision {
            Precision::Single => {
                measure_overhead(&BenchData::<f32>::new(shape, 7)?, &cfg, a.reps, a.ft)?
            }
            Precision::Double => {
                measure_overhead(&BenchData::<f64>::new(shape, 7)?, &cfg, a.reps, a.ft)?
            }
        };
        total += row.overhead_pct();
        println!("{}", row.csv_line());
        text.push_str(&row.csv_line());
        text.push('\n');
    }
    println!("mean overhead {:.2}%", total / shapes.len() as f64);
    if let Some(path) = &a.report {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(EXIT_OK)
}

fn verify(a: &VerifyArgs) -> Result<i32> {
    let oracle = oracle_assign_check(20, (1024, 64, 128), a.seed)?;
    println!(
        "oracle: {} instances, {} rows, {} near-ties, {} mismatches",
        oracle.instances, oracle.rows, oracle.near_ties, oracle.mismatches
    );
    let bits: Vec<u32> = if a.exhaustive {
        (0..32).collect()
    } else {
        std::iter::once(31)
            .chain(Precision::Single.exponent_bits())
            .collect()
    };
    let sweep = sweep_tile(&bits, a.seed)?;
    println!(
        "sweep: {} cases, {} corrected, {} sub-threshold, {} unrecovered, {} silent (tau {:.3e})",
        sweep.cases,
        sweep.corrected,
        sweep.sub_threshold,
        sweep.unrecovered,
        sweep.silent,
        sweep.tau
    );
    let alarms = false_alarm_check(50, (512, 64, 128), a.seed)?;
    println!(
        "false alarms: {} detections over {} fault-free runs, {} output mismatches",
        alarms.detections, alarms.runs, alarms.output_mismatches
    );
    let ok = oracle.passed() && sweep.passed() && alarms.passed();
    println!("verify: {}", if ok { "pass" } else { "FAIL" });
    Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
}

/// Writes `m` to `path`, choosing the format from the extension.
pub fn store(m: &DynMat, path: &Path) -> Result<()> {
    mat_store(m, path, FileFormat::from_path(path))
}
