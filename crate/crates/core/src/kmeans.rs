//! Lloyd's iteration over the fused assignment engine.
//!
//! Each iteration is a barrier-separated pair of phases: assignment (tiled
//! product with fused argmin, optionally checksum-protected) and centroid
//! update (fixed-size row chunks reduced in chunk order, optionally under
//! dual modular redundancy).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abft::{
    dmr_reduce, DetectionEvent, DetectionReport, EventKind, ReduceOp, Threshold, DMR_MAX_ATTEMPTS,
};
use crate::error::{Error, Result};
use crate::faultsim::{
    flip_bit, plan_faults, ElementFlip, FaultHook, FaultInjector, FaultLayout, FaultSite,
    FaultSpec, Injection, SiteGeometry,
};
use crate::gemm::{run_argmin, AssignResult, Job, TileConfig};
use crate::matrix::{row_sq_norms, Mat, Real};
use crate::tuner::{LookupSource, Shape, TuneTable};

/// Rows per update chunk. Fixed so results do not depend on thread count.
pub const UPDATE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FtMode {
    Off,
    Abft,
    AbftDmr,
}

impl FtMode {
    pub fn name(self) -> &'static str {
        match self {
            FtMode::Off => "off",
            FtMode::Abft => "abft",
            FtMode::AbftDmr => "abft+dmr",
        }
    }
}

impl fmt::Display for FtMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FtMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(FtMode::Off),
            "abft" => Ok(FtMode::Abft),
            "abft+dmr" => Ok(FtMode::AbftDmr),
            _ => Err(Error::invalid(format!(
                "ft mode '{s}' is not off, abft or abft+dmr"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    RandomSample,
    KMeansPlusPlus,
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMethod::RandomSample => "random-sample",
            InitMethod::KMeansPlusPlus => "kmeans++",
        })
    }
}

impl FromStr for InitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random-sample" => Ok(InitMethod::RandomSample),
            "kmeans++" | "kmeanspp" => Ok(InitMethod::KMeansPlusPlus),
            _ => Err(Error::invalid(format!(
                "init method '{s}' is not random-sample or kmeans++"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TileChoice {
    /// Tune-table lookup, falling back to the precision default.
    Auto,
    Fixed(TileConfig),
}

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the largest relative centroid movement falls below this.
    pub tol: f64,
    pub seed: u64,
    pub ft_mode: FtMode,
    pub init: InitMethod,
    pub tile: TileChoice,
    pub tune_table: Option<TuneTable>,
    /// Defaults to the precision's standard threshold.
    pub threshold: Option<Threshold>,
    pub faults: FaultSpec,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        KMeansConfig {
            k,
            max_iters: 300,
            tol: 1e-4,
            seed: 0,
            ft_mode: FtMode::Off,
            init: InitMethod::KMeansPlusPlus,
            tile: TileChoice::Auto,
            tune_table: None,
            threshold: None,
            faults: FaultSpec::none(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_ft(mut self, ft_mode: FtMode) -> Self {
        self.ft_mode = ft_mode;
        self
    }

    pub fn with_faults(mut self, faults: FaultSpec) -> Self {
        self.faults = faults;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tile(mut self, tile: TileConfig) -> Self {
        self.tile = TileChoice::Fixed(tile);
        self
    }

    pub fn with_init(mut self, init: InitMethod) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!(
                "tol {} must be finite and >= 0",
                self.tol
            )));
        }
        if let TileChoice::Fixed(t) = &self.tile {
            t.validate()?;
        }
        if let Some(t) = self.threshold {
            t.validate()?;
        }
        self.faults.validate()
    }
}

/// Wall-clock nanoseconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Timings {
    pub init_ns: u64,
    pub assign_ns: u64,
    pub update_ns: u64,
    pub total_ns: u64,
}

#[derive(Debug, Clone)]
pub struct KMeansResult<T: Real> {
    pub centroids: Mat<T>,
    pub assignments: Vec<usize>,
    /// Sum of true squared distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after every assignment, starting with the initial one.
    pub inertia_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    pub report: DetectionReport,
    pub injections: Vec<Injection>,
    pub timings: Timings,
    pub tile: TileConfig,
    pub warnings: Vec<String>,
}

/// Picks `k` initial centroids from the rows of `x`.
pub fn init_centroids<T: Real>(
    x: &Mat<T>,
    k: usize,
    seed: u64,
    method: InitMethod,
) -> Result<Mat<T>> {
    let m = x.rows();
    if k == 0 || k > m {
        return Err(Error::invalid(format!(
            "cannot pick {k} centroids from {m} samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = match method {
        InitMethod::RandomSample => sample(&mut rng, m, k).into_vec(),
        InitMethod::KMeansPlusPlus => {
            let mut picks = vec![rng.random_range(0..m)];
            let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(x.row(i), x.row(picks[0]))).collect();
            while picks.len() < k {
                let total: f64 = d2.iter().sum();
                let next = if total > 0.0 {
                    let mut r = rng.random::<f64>() * total;
                    let mut chosen = None;
                    for (i, &d) in d2.iter().enumerate() {
                        if d > 0.0 {
                            chosen = Some(i);
                            if r < d {
                                break;
                            }
                            r -= d;
                        }
                    }
                    chosen.expect("positive total weight")
                } else {
                    let free: Vec<usize> = (0..m).filter(|i| !picks.contains(i)).collect();
                    free[rng.random_range(0..free.len())]
                };
                picks.push(next);
                for (i, d) in d2.iter_mut().enumerate() {
                    *d = d.min(sq_dist(x.row(i), x.row(next)));
                }
            }
            picks
        }
    };
    let rows: Vec<&[T]> = picks.iter().map(|&i| x.row(i)).collect();
    Mat::from_rows(&rows)
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let d = p.as_f64() - q.as_f64();
            d * d
        })
        .sum()
}

/// Settings shared by the two Lloyd phases of one iteration.
pub struct StepContext<'a> {
    pub tile: TileConfig,
    pub ft_mode: FtMode,
    pub threshold: Threshold,
    pub hook: &'a dyn FaultHook,
    pub iteration: usize,
}

/// Nearest-centroid assignment; under `abft` modes the distance tiles are
/// verified and corrected before the fused argmin consumes them.
pub fn assign_step<T: Real>(
    x: &Mat<T>,
    y: &Mat<T>,
    ctx: &StepContext<'_>,
) -> Result<(AssignResult<T>, DetectionReport)> {
    let y_norms = row_sq_norms(y);
    let job = Job {
        a: x,
        b: y,
        cfg: &ctx.tile,
        threshold: (ctx.ft_mode != FtMode::Off).then_some(ctx.threshold),
        dmr_epilogue: ctx.ft_mode == FtMode::AbftDmr,
        hook: ctx.hook,
        iteration: ctx.iteration,
    };
    run_argmin(&job, &y_norms.values)
}

#[derive(Debug, Clone)]
pub struct UpdateOutcome<T: Real> {
    pub centroids: Mat<T>,
    pub counts: Vec<u64>,
    /// Clusters that were empty and re-seeded.
    pub reseeded: Vec<usize>,
    pub report: DetectionReport,
}

struct Partial<T> {
    sums: Vec<T>,
    counts: Vec<u64>,
}

/// Per-cluster sums and counts of one chunk.
///
/// Slots are laid out as `k x (n + 1)`, the last slot of each cluster being
/// its count; a scheduled flip addresses `(slot, replica)`.
fn chunk_partial<T: Real>(
    x: &Mat<T>,
    assignments: &[usize],
    k: usize,
    chunk: usize,
    dmr: bool,
    ctx: &StepContext<'_>,
) -> Result<(Partial<T>, DetectionReport)> {
    let n = x.cols();
    let rows = chunk * UPDATE_CHUNK..((chunk + 1) * UPDATE_CHUNK).min(x.rows());
    let half = rows.start + rows.len() / 2;
    let replicas = if dmr { 2 } else { 1 };
    let mut report = DetectionReport::default();
    for attempt in 0..DMR_MAX_ATTEMPTS {
        let flip = if attempt == 0 {
            ctx.hook
                .fault_at(FaultSite::UpdateAccumulator, ctx.iteration, (chunk, 0))
        } else {
            None
        };
        let mut parts: Vec<Partial<T>> = (0..replicas)
            .map(|_| Partial {
                sums: vec![T::zero(); k * n],
                counts: vec![0u64; k],
            })
            .collect();
        for i in rows.clone() {
            if i == half {
                if let Some(f) = flip {
                    corrupt(&mut parts, f, n, k, chunk, ctx);
                }
            }
            let a = assignments[i];
            let xr = x.row(i);
            for p in parts.iter_mut() {
                for (s, &v) in p.sums[a * n..(a + 1) * n].iter_mut().zip(xr) {
                    *s = *s + v;
                }
                p.counts[a] += 1;
            }
        }
        if !dmr {
            return Ok((parts.swap_remove(0), report));
        }
        match first_difference(&parts[0], &parts[1], n) {
            None => return Ok((parts.swap_remove(0), report)),
            Some((slot, delta)) => {
                report.dmr_mismatches += 1;
                report.events.push(DetectionEvent {
                    iteration: ctx.iteration,
                    tile: (chunk, 0),
                    kind: EventKind::DmrMismatch,
                    loc: Some((slot, 0)),
                    delta: crate::abft::saturate(delta),
                });
            }
        }
    }
    Err(Error::DmrPersistent {
        attempts: DMR_MAX_ATTEMPTS,
        site: format!("update chunk {chunk}, iteration {}", ctx.iteration),
    })
}

fn corrupt<T: Real>(
    parts: &mut [Partial<T>],
    f: ElementFlip,
    n: usize,
    k: usize,
    chunk: usize,
    ctx: &StepContext<'_>,
) {
    let width = n + 1;
    let slot = f.elem.0 % (k * width);
    let replica = f.elem.1 % parts.len();
    let (c, d) = (slot / width, slot % width);
    let p = &mut parts[replica];
    let (before, after, bit) = if d == n {
        let bit = f.bit % 64;
        let before = p.counts[c];
        p.counts[c] ^= 1 << bit;
        (before as f64, p.counts[c] as f64, bit)
    } else {
        let bit = f.bit % T::BITS;
        let before = p.sums[c * n + d];
        p.sums[c * n + d] = flip_bit(before, bit);
        (before.as_f64(), p.sums[c * n + d].as_f64(), bit)
    };
    ctx.hook.record(Injection {
        site: FaultSite::UpdateAccumulator,
        iteration: ctx.iteration,
        tile: (chunk, 0),
        elem: (slot, replica),
        bit,
        before,
        after,
        delta: after - before,
    });
}

fn first_difference<T: Real>(a: &Partial<T>, b: &Partial<T>, n: usize) -> Option<(usize, f64)> {
    let width = n + 1;
    for (c, (ca, cb)) in a.counts.iter().zip(&b.counts).enumerate() {
        for d in 0..n {
            let (va, vb) = (a.sums[c * n + d], b.sums[c * n + d]);
            if !va.bit_eq(vb) {
                return Some((c * width + d, va.as_f64() - vb.as_f64()));
            }
        }
        if ca != cb {
            return Some((c * width + n, *ca as f64 - *cb as f64));
        }
    }
    None
}

/// New centroids as per-cluster means.
///
/// Rows are reduced in fixed chunks of [`UPDATE_CHUNK`], merged in chunk
/// order. Under `abft+dmr` every chunk runs with two replicas and every merged
/// slot passes through [`dmr_reduce`]. An empty cluster is re-seeded with the
/// sample farthest from its assigned centroid in `prev`.
pub fn update_step<T: Real>(
    x: &Mat<T>,
    assignments: &[usize],
    k: usize,
    prev: &Mat<T>,
    ctx: &StepContext<'_>,
) -> Result<UpdateOutcome<T>> {
    let (m, n) = (x.rows(), x.cols());
    if assignments.len() != m {
        return Err(Error::invalid(format!(
            "{} assignments for {m} samples",
            assignments.len()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(Error::invalid(format!(
            "assignment {bad} out of range for k={k}"
        )));
    }
    if prev.rows() != k || prev.cols() != n {
        return Err(Error::invalid("previous centroids have the wrong shape"));
    }
    let dmr = ctx.ft_mode == FtMode::AbftDmr;
    let parts: Vec<Result<(Partial<T>, DetectionReport)>> = (0..m.div_ceil(UPDATE_CHUNK))
        .into_par_iter()
        .map(|c| chunk_partial(x, assignments, k, c, dmr, ctx))
        .collect();
    let mut report = DetectionReport::default();
    let mut partials = Vec::with_capacity(parts.len());
    for p in parts {
        let (p, r) = p?;
        report.merge(r);
        partials.push(p);
    }

    let mut sums = vec![T::zero(); k * n];
    let mut counts = vec![0u64; k];
    if dmr {
        let mut col_t = Vec::with_capacity(partials.len());
        for (s, out) in sums.iter_mut().enumerate() {
            col_t.clear();
            col_t.extend(partials.iter().map(|p| p.sums[s]));
            *out = dmr_value(&col_t, T::zero(), s)?;
        }
        let mut col_u = Vec::with_capacity(partials.len());
        for (c, out) in counts.iter_mut().enumerate() {
            col_u.clear();
            col_u.extend(partials.iter().map(|p| p.counts[c]));
            *out = dmr_value(&col_u, 0u64, c)?;
        }
    } else {
        for p in &partials {
            for (s, &v) in sums.iter_mut().zip(&p.sums) {
                *s = *s + v;
            }
            for (c, &v) in counts.iter_mut().zip(&p.counts) {
                *c += v;
            }
        }
    }

    let mut centroids = Mat::zeros(k, n);
    let mut empty = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            empty.push(c);
            continue;
        }
        let cnt = T::from_f64(counts[c] as f64);
        for (dst, &s) in centroids
            .row_mut(c)
            .iter_mut()
            .zip(&sums[c * n..(c + 1) * n])
        {
            *dst = s / cnt;
        }
    }
    if !empty.is_empty() {
        let far = farthest_points(x, assignments, prev, empty.len());
        for (&c, &i) in empty.iter().zip(&far) {
            centroids.row_mut(c).copy_from_slice(x.row(i));
        }
    }
    Ok(UpdateOutcome {
        centroids,
        counts,
        reseeded: empty,
        report,
    })
}

fn dmr_value<V: crate::abft::DmrValue>(values: &[V], init: V, slot: usize) -> Result<V> {
    dmr_reduce(values, init, ReduceOp::Sum)
        .map(|o| o.value)
        .map_err(|_| Error::DmrPersistent {
            attempts: DMR_MAX_ATTEMPTS,
            site: format!("chunk merge of slot {slot}"),
        })
}

/// The `count` samples farthest from their assigned centroid, farthest
/// first, ties to the lower index.
fn farthest_points<T: Real>(
    x: &Mat<T>,
    assignments: &[usize],
    centroids: &Mat<T>,
    count: usize,
) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.rows())
        .map(|i| (sq_dist(x.row(i), centroids.row(assignments[i])), i))
        .collect();
    d.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(count).map(|(_, i)| i).collect()
}

/// Exact `f64` sum of squared distances to the assigned centroids.
pub fn inertia<T: Real>(x: &Mat<T>, centroids: &Mat<T>, assignments: &[usize]) -> f64 {
    (0..x.rows())
        .map(|i| sq_dist(x.row(i), centroids.row(assignments[i])))
        .sum()
}

fn max_relative_move<T: Real>(old: &Mat<T>, new: &Mat<T>) -> f64 {
    (0..old.rows())
        .map(|j| {
            let norm = sq_dist(old.row(j), &vec![T::zero(); old.cols()]).sqrt();
            sq_dist(old.row(j), new.row(j)).sqrt() / (norm + f64::EPSILON)
        })
        .fold(0.0, f64::max)
}

/// Resolves the tile configuration for `shape`, with a warning on fallback.
pub fn resolve_tile<T: Real>(cfg: &KMeansConfig, shape: Shape) -> (TileConfig, Option<String>) {
    match &cfg.tile {
        TileChoice::Fixed(t) => (*t, None),
        TileChoice::Auto => match &cfg.tune_table {
            Some(table) => {
                let hit = table.lookup(shape, T::PRECISION);
                let warn = (hit.source == LookupSource::Default).then(|| {
                    format!("no tune table entry near {shape}; using the default tile config")
                });
                (hit.cfg, warn)
            }
            None => (
                TileConfig::default_for(T::PRECISION),
                Some("no tune table given; using the default tile config".to_string()),
            ),
        },
    }
}

/// Fault-site geometry of a Lloyd run.
pub fn fault_layout<T: Real>(m: usize, n: usize, k: usize, tile: &TileConfig) -> FaultLayout {
    FaultLayout {
        gemm: Some(SiteGeometry {
            grid: (m.div_ceil(tile.block.m), k.div_ceil(tile.block.n)),
            dims: (tile.block.m, tile.block.n),
            width: T::BITS,
        }),
        update: Some(SiteGeometry {
            grid: (m.div_ceil(UPDATE_CHUNK), 1),
            dims: (k * (n + 1), 2),
            width: T::BITS,
        }),
    }
}

/// Runs Lloyd's algorithm, injecting the faults described by
/// `config.faults`.
pub fn lloyd<T: Real>(x: &Mat<T>, config: &KMeansConfig) -> Result<KMeansResult<T>> {
    config.validate()?;
    let shape = Shape::new(x.rows(), x.cols(), config.k);
    let (tile, _) = resolve_tile::<T>(config, shape);
    let layout = fault_layout::<T>(x.rows(), x.cols(), config.k, &tile);
    let schedule = plan_faults(&config.faults, config.max_iters + 1, &layout)?;
    let injector = FaultInjector::new(&schedule);
    let mut result = lloyd_with_hook(x, config, &injector)?;
    result.injections = injector.injections();
    Ok(result)
}

/// Runs Lloyd's algorithm with a caller-supplied fault hook.
pub fn lloyd_with_hook<T: Real>(
    x: &Mat<T>,
    config: &KMeansConfig,
    hook: &dyn FaultHook,
) -> Result<KMeansResult<T>> {
    config.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    let shape = Shape::new(x.rows(), x.cols(), config.k);
    let (tile, warn) = resolve_tile::<T>(config, shape);
    warnings.extend(warn);
    if !config.faults.is_none() && config.ft_mode == FtMode::Off {
        warnings.push("faults injected without protection".to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let threshold = config
        .threshold
        .unwrap_or_else(|| Threshold::default_for(T::PRECISION));
    let mut timings = Timings::default();
    let mut ctx = StepContext {
        tile,
        ft_mode: config.ft_mode,
        threshold,
        hook,
        iteration: 0,
    };

    let t = Instant::now();
    let mut centroids = init_centroids(x, config.k, config.seed, config.init)?;
    timings.init_ns = t.elapsed().as_nanos() as u64;

    let t = Instant::now();
    let (mut assign, mut report) = assign_step(x, &centroids, &ctx)?;
    timings.assign_ns += t.elapsed().as_nanos() as u64;
    let mut trace = vec![inertia(x, &centroids, &assign.assignments)];

    let mut iters = 0;
    let mut converged = false;
    while iters < config.max_iters {
        let t = Instant::now();
        let upd = update_step(x, &assign.assignments, config.k, &centroids, &ctx)?;
        timings.update_ns += t.elapsed().as_nanos() as u64;
        report.merge(upd.report);
        let moved = max_relative_move(&centroids, &upd.centroids);
        centroids = upd.centroids;
        iters += 1;
        ctx.iteration = iters;

        let t = Instant::now();
        let (next, rep) = assign_step(x, &centroids, &ctx)?;
        timings.assign_ns += t.elapsed().as_nanos() as u64;
        report.merge(rep);
        trace.push(inertia(x, &centroids, &next.assignments));
        let unchanged = next.assignments == assign.assignments;
        assign = next;
        if unchanged || moved < config.tol {
            converged = true;
            break;
        }
    }
    timings.total_ns = start.elapsed().as_nanos() as u64;
    Ok(KMeansResult {
        inertia: *trace.last().expect("initial inertia"),
        inertia_trace: trace,
        centroids,
        assignments: assign.assignments,
        iters,
        converged,
        report,
        injections: Vec::new(),
        timings,
        tile,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultsim::{FaultSchedule, NoFaults, ScheduledFault};
    use crate::matrix::{gaussian_mixture, mat_random, Distribution, Precision};

    fn ctx(ft_mode: FtMode, hook: &dyn FaultHook) -> StepContext<'_> {
        StepContext {
            tile: TileConfig::default_for(Precision::Single),
            ft_mode,
            threshold: Threshold::default_for(Precision::Single),
            hook,
            iteration: 0,
        }
    }

    #[test]
    fn init_with_k_equal_m_is_a_permutation() {
        let x: Mat<f32> = mat_random(10, 3, 4, Distribution::Uniform).unwrap();
        for method in [InitMethod::RandomSample, InitMethod::KMeansPlusPlus] {
            let y = init_centroids(&x, 10, 9, method).unwrap();
            let mut seen: Vec<usize> = (0..10)
                .map(|r| (0..10).find(|&i| x.row(i) == y.row(r)).unwrap())
                .collect();
            seen.sort();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
            assert!(y.bit_eq(&init_centroids(&x, 10, 9, method).unwrap()));
        }
        assert!(init_centroids(&x, 11, 0, InitMethod::RandomSample).is_err());
    }

    #[test]
    fn mean_of_two_points() {
        let x = Mat::<f32>::from_f64_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        let prev = Mat::<f32>::zeros(1, 2);
        let out = update_step(&x, &[0, 0], 1, &prev, &ctx(FtMode::AbftDmr, &NoFaults)).unwrap();
        assert_eq!(out.centroids.as_slice(), &[1.0, 1.0]);
        assert_eq!(out.counts, vec![2]);
    }

    #[test]
    fn empty_cluster_takes_farthest_point() {
        let x = Mat::<f64>::from_f64_rows(&[[0.0], [1.0], [5.0], [0.5]]).unwrap();
        let prev = Mat::<f64>::from_f64_rows(&[[0.0], [100.0]]).unwrap();
        let out = update_step(&x, &[0, 0, 0, 0], 2, &prev, &ctx(FtMode::Off, &NoFaults)).unwrap();
        assert_eq!(out.reseeded, vec![1]);
        assert_eq!(out.centroids.row(1), &[5.0]);
    }

    #[test]
    fn k_one_assigns_everything_to_zero() {
        let x: Mat<f32> = mat_random(50, 3, 1, Distribution::Uniform).unwrap();
        let y = x.submatrix(0, 1, 0, 3);
        let (r, _) = assign_step(&x, &y, &ctx(FtMode::Abft, &NoFaults)).unwrap();
        assert!(r.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn update_then_assign_with_k_equal_m_is_fixed() {
        let x: Mat<f32> = mat_random(40, 5, 2, Distribution::Uniform).unwrap();
        let ids: Vec<usize> = (0..40).collect();
        let c = ctx(FtMode::AbftDmr, &NoFaults);
        let out = update_step(&x, &ids, 40, &x, &c).unwrap();
        assert!(out.centroids.bit_eq(&x));
        let (r, rep) = assign_step(&x, &out.centroids, &c).unwrap();
        assert_eq!(r.assignments, ids);
        assert!(rep.is_clean());
    }

    #[test]
    fn update_is_thread_count_independent() {
        let x: Mat<f32> = mat_random(10_000, 6, 3, Distribution::Uniform).unwrap();
        let a: Vec<usize> = (0..10_000).map(|i| (i * 7919) % 13).collect();
        let prev = Mat::<f32>::zeros(13, 6);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    update_step(&x, &a, 13, &prev, &ctx(FtMode::Off, &NoFaults))
                        .unwrap()
                        .centroids
                })
        };
        assert!(run(1).bit_eq(&run(8)));
    }

    #[test]
    fn dmr_repairs_update_fault() {
        let x: Mat<f32> = mat_random(9000, 4, 3, Distribution::Uniform).unwrap();
        let a: Vec<usize> = (0..9000).map(|i| i % 5).collect();
        let prev = Mat::<f32>::zeros(5, 4);
        let clean = update_step(&x, &a, 5, &prev, &ctx(FtMode::AbftDmr, &NoFaults)).unwrap();
        let hook = FaultInjector::new(&FaultSchedule {
            entries: vec![ScheduledFault {
                site: FaultSite::UpdateAccumulator,
                iteration: 0,
                tile: (1, 0),
                elem: (7, 1),
                bit: 29,
            }],
        });
        let out = update_step(&x, &a, 5, &prev, &ctx(FtMode::AbftDmr, &hook)).unwrap();
        assert_eq!(out.report.dmr_mismatches, 1);
        assert!(out.centroids.bit_eq(&clean.centroids));
        let silent = update_step(&x, &a, 5, &prev, &ctx(FtMode::Off, &hook)).unwrap();
        assert!(!silent.centroids.bit_eq(&clean.centroids));
    }

    #[test]
    fn zero_iterations_returns_initial_centroids() {
        let x: Mat<f32> = mat_random(100, 3, 1, Distribution::Uniform).unwrap();
        let cfg = KMeansConfig::new(4).with_max_iters(0).with_seed(5);
        let r = lloyd(&x, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iters, 0);
        assert!(r
            .centroids
            .bit_eq(&init_centroids(&x, 4, 5, cfg.init).unwrap()));
    }

    #[test]
    fn blobs_converge_with_monotone_inertia() {
        let mix = gaussian_mixture::<f64>(2000, 5, 4, 0.05, 3).unwrap();
        let r = lloyd(
            &mix.data,
            &KMeansConfig::new(4).with_seed(1).with_ft(FtMode::AbftDmr),
        )
        .unwrap();
        assert!(r.converged);
        for w in r.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6));
        }
        assert!(r.report.is_clean());
    }
}
