//! Tile-parameter search.
//!
//! [`enumerate_configs`] generates every rule-satisfying configuration,
//! [`feasible`] filters by cache budget, [`benchmark`] times the fused
//! assignment, and [`select`] builds a [`TuneTable`] keyed by problem shape.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use crate::abft::Threshold;
use crate::error::{Error, Result};
use crate::faultsim::NoFaults;
use crate::gemm::{run_argmin, Dims3, Job, TileConfig};
use crate::kmeans::FtMode;
use crate::matrix::{mat_random, row_sq_norms, Distribution, Mat, Precision, Real};

/// Assignment problem size: `m` samples, `n` features, `k` clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl Shape {
    pub const fn new(m: usize, n: usize, k: usize) -> Self {
        Shape { m, n, k }
    }

    /// Floating-point operations of one distance product.
    pub fn flops(&self) -> f64 {
        2.0 * self.m as f64 * self.n as f64 * self.k as f64
    }

    /// Parses `MxNxK`.
    pub fn parse(text: &str) -> Result<Self> {
        let v: Vec<usize> = text
            .trim()
            .split(['x', 'X', ','])
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid(format!("shape '{text}' is not MxNxK")))?;
        match v[..] {
            [m, n, k] if m > 0 && n > 0 && k > 0 => Ok(Shape::new(m, n, k)),
            _ => Err(Error::invalid(format!(
                "shape '{text}' is not MxNxK with positive sizes"
            ))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.n, self.k)
    }
}

pub const GRID_M: [usize; 2] = [1 << 14, 1 << 17];
pub const GRID_N: [usize; 4] = [2, 8, 32, 128];
pub const GRID_K: [usize; 4] = [8, 32, 128, 1024];

/// The 32-shape benchmark grid, ordered by `M`, then `N`, then `K`.
pub fn default_grid() -> Vec<Shape> {
    let mut out = Vec::new();
    for m in GRID_M {
        for n in GRID_N {
            for k in GRID_K {
                out.push(Shape::new(m, n, k));
            }
        }
    }
    out
}

/// Reads a shape list: `grid:default`, or a file with one `MxNxK` (or
/// `M,N,K`) per line and `#` comments.
pub fn load_shapes(spec: &str) -> Result<Vec<Shape>> {
    if spec == "grid:default" {
        return Ok(default_grid());
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(Shape::parse(line).map_err(|e| Error::Format {
            path: path.into(),
            row: Some(i + 1),
            col: None,
            msg: e.to_string(),
        })?);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{spec} lists no shapes")));
    }
    Ok(out)
}

/// Search bounds, inclusive, all powers of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub block_mn: (usize, usize),
    pub block_k: (usize, usize),
    pub micro: Dims3,
}

impl Bounds {
    pub fn default_for(precision: Precision) -> Self {
        Bounds {
            block_mn: (32, 256),
            block_k: (8, 32),
            micro: TileConfig::default_micro(precision),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    pub precision: Precision,
    pub candidates: Vec<TileConfig>,
}

impl ParamSpace {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

fn pow2_range((lo, hi): (usize, usize)) -> impl Iterator<Item = usize> {
    (0..usize::BITS)
        .map(|b| 1usize << b)
        .filter(move |&v| v >= lo && v <= hi)
}

/// All configurations within `bounds` satisfying the tile rules, in a fixed
/// order (block, then sub, ascending).
pub fn enumerate_configs(precision: Precision, bounds: &Bounds) -> Result<ParamSpace> {
    let mut candidates = Vec::new();
    for bm in pow2_range(bounds.block_mn) {
        for bn in pow2_range(bounds.block_mn) {
            for bk in pow2_range(bounds.block_k) {
                for sm in pow2_range((1, bm)) {
                    for sn in pow2_range((1, bn)) {
                        let cfg = TileConfig {
                            block: Dims3::new(bm, bn, bk),
                            sub: Dims3::new(sm, sn, bk),
                            micro: bounds.micro,
                        };
                        if cfg.validate().is_ok() {
                            candidates.push(cfg);
                        }
                    }
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::invalid(format!(
            "no {precision} tile configs within the given bounds"
        )));
    }
    Ok(ParamSpace {
        precision,
        candidates,
    })
}

/// Resource limits used by [`feasible`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MachineLimits {
    /// `None` means unlimited.
    pub cache_bytes: Option<usize>,
    /// Count the two checksum rows in the working set.
    pub ft: bool,
}

impl Default for MachineLimits {
    fn default() -> Self {
        MachineLimits {
            cache_bytes: Some(1 << 20),
            ft: false,
        }
    }
}

/// Bytes of one block tile of both operands, plus the checksum rows of each
/// operand when checking is on.
pub fn working_set_bytes(cfg: &TileConfig, precision: Precision, ft: bool) -> usize {
    let checksum = if ft { 4 * cfg.block.k } else { 0 };
    (cfg.block_footprint() + checksum) * precision.bytes()
}

pub fn feasible(
    cfg: &TileConfig,
    shape: Shape,
    precision: Precision,
    limits: &MachineLimits,
) -> bool {
    if cfg.validate().is_err() {
        return false;
    }
    if let Some(budget) = limits.cache_bytes {
        if working_set_bytes(cfg, precision, limits.ft) > budget {
            return false;
        }
    }
    let overhang = |dim: usize, t: usize| dim.div_ceil(t) * t - dim < t;
    overhang(shape.m, cfg.block.m)
        && overhang(shape.k, cfg.block.n)
        && overhang(shape.n, cfg.block.k)
}

/// Timed runs of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub times_ns: Vec<u64>,
    pub median_ns: u64,
    pub gflops: f64,
}

impl Measurement {
    fn from_times(times_ns: Vec<u64>, flops: f64) -> Self {
        let mut sorted = times_ns.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        let median_ns = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2
        };
        Measurement {
            times_ns,
            median_ns,
            gflops: flops / median_ns.max(1) as f64,
        }
    }
}

/// Uniform benchmark inputs for one shape.
pub struct BenchData<T> {
    pub x: Mat<T>,
    pub y: Mat<T>,
    pub y_norms: Vec<T>,
}

impl<T: Real> BenchData<T> {
    pub fn new(shape: Shape, seed: u64) -> Result<Self> {
        let x = mat_random(shape.m, shape.n, seed, Distribution::Uniform)?;
        let y = mat_random(
            shape.k,
            shape.n,
            seed ^ 0x9e37_79b9_7f4a_7c15,
            Distribution::Uniform,
        )?;
        let y_norms = row_sq_norms(&y).values;
        Ok(BenchData { x, y, y_norms })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.x.rows(), self.x.cols(), self.y.rows())
    }

    /// One fused assignment, returning elapsed nanoseconds.
    pub fn run_once(&self, cfg: &TileConfig, ft: FtMode) -> Result<u64> {
        let job = Job {
            a: &self.x,
            b: &self.y,
            cfg,
            threshold: (ft != FtMode::Off).then(|| Threshold::default_for(T::PRECISION)),
            dmr_epilogue: ft == FtMode::AbftDmr,
            hook: &NoFaults,
            iteration: 0,
        };
        let t = Instant::now();
        let out = run_argmin(&job, &self.y_norms)?;
        let ns = t.elapsed().as_nanos() as u64;
        std::hint::black_box(out);
        Ok(ns.max(1))
    }
}

/// One warm-up run, then the median of `reps` timed runs.
pub fn benchmark_on<T: Real>(
    data: &BenchData<T>,
    cfg: &TileConfig,
    reps: usize,
    ft: FtMode,
) -> Result<Measurement> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    data.run_once(cfg, ft)?;
    let times = (0..reps)
        .map(|_| data.run_once(cfg, ft))
        .collect::<Result<Vec<_>>>()?;
    Ok(Measurement::from_times(times, data.shape().flops()))
}

/// Throughput of `cfg` on uniform data of `shape`, in GFLOPS.
pub fn benchmark(
    cfg: &TileConfig,
    shape: Shape,
    precision: Precision,
    reps: usize,
    ft: FtMode,
) -> Result<Measurement> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    cfg.validate()?;
    match precision {
        Precision::Single => benchmark_on(&BenchData::<f32>::new(shape, 7)?, cfg, reps, ft),
        Precision::Double => benchmark_on(&BenchData::<f64>::new(shape, 7)?, cfg, reps, ft),
    }
}

/// Paired measurement of the unchecked and checked engine.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadRow {
    pub shape: Shape,
    pub precision: Precision,
    pub off: Measurement,
    pub ft: Measurement,
}

impl OverheadRow {
    /// `(t_ft - t_off) / t_off`, in percent.
    pub fn overhead_pct(&self) -> f64 {
        100.0 * (self.ft.median_ns as f64 - self.off.median_ns as f64) / self.off.median_ns as f64
    }
}

pub const BENCH_CSV_HEADER: &str = "m,n,k,precision,gflops_off,gflops_ft,overhead_pct";

impl OverheadRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{:.2}",
            self.shape.m,
            self.shape.n,
            self.shape.k,
            self.precision,
            self.off.gflops,
            self.ft.gflops,
            self.overhead_pct()
        )
    }
}

/// Times `ft` against `off` on identical data, alternating runs.
pub fn measure_overhead<T: Real>(
    data: &BenchData<T>,
    cfg: &TileConfig,
    reps: usize,
    ft: FtMode,
) -> Result<OverheadRow> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    data.run_once(cfg, FtMode::Off)?;
    data.run_once(cfg, ft)?;
    let mut off = Vec::with_capacity(reps);
    let mut on = Vec::with_capacity(reps);
    for _ in 0..reps {
        off.push(data.run_once(cfg, FtMode::Off)?);
        on.push(data.run_once(cfg, ft)?);
    }
    let flops = data.shape().flops();
    Ok(OverheadRow {
        shape: data.shape(),
        precision: T::PRECISION,
        off: Measurement::from_times(off, flops),
        ft: Measurement::from_times(on, flops),
    })
}

/// Knobs for [`select`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectOptions {
    pub reps: usize,
    pub limits: MachineLimits,
    /// Sample count used when screening the whole space.
    pub screen_m: usize,
    /// Maximum number of configurations that survive screening.
    pub shortlist: usize,
    /// Screening scores within this fraction of a shape's best count as good.
    pub near_best: f64,
    /// Shortlisted configurations measured per shape, besides the default.
    pub finalists: usize,
    pub seed: u64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            reps: 10,
            limits: MachineLimits::default(),
            screen_m: 4096,
            shortlist: 8,
            near_best: 0.95,
            finalists: 2,
            seed: 7,
        }
    }
}

/// Measurements behind one selected table entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeOutcome {
    pub shape: Shape,
    pub cfg: TileConfig,
    pub gflops: f64,
    pub default_gflops: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub table: TuneTable,
    pub shapes: Vec<ShapeOutcome>,
    /// Configurations that survived screening.
    pub shortlist: Vec<TileConfig>,
}

/// Picks the fastest feasible configuration per shape.
///
/// Every candidate is screened once per distinct `(N, K)` at a reduced `M`;
/// a greedy cover then keeps at most `shortlist` configurations that are
/// near-best somewhere. Each shape finally measures its best finalists and
/// the default configuration at full size with `reps` repetitions; ties go
/// to the smaller `block.m * block.n`.
pub fn select(
    shapes: &[Shape],
    space: &ParamSpace,
    ft: FtMode,
    opts: &SelectOptions,
) -> Result<TuneOutcome> {
    match space.precision {
        Precision::Single => select_typed::<f32>(shapes, space, ft, opts),
        Precision::Double => select_typed::<f64>(shapes, space, ft, opts),
    }
}

fn select_typed<T: Real>(
    shapes: &[Shape],
    space: &ParamSpace,
    ft: FtMode,
    opts: &SelectOptions,
) -> Result<TuneOutcome> {
    if shapes.is_empty() {
        return Err(Error::invalid("no shapes to tune"));
    }
    if opts.reps == 0 || opts.shortlist == 0 || opts.finalists == 0 {
        return Err(Error::invalid(
            "reps, shortlist and finalists must be at least 1",
        ));
    }
    let precision = space.precision;
    let limits = MachineLimits {
        ft: ft != FtMode::Off,
        ..opts.limits
    };
    let default = TileConfig::default_for(precision);

    let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for s in shapes {
        let m = pairs.entry((s.n, s.k)).or_insert(0);
        *m = (*m).max(s.m);
    }
    let mut scores: Vec<Vec<Option<f64>>> = Vec::with_capacity(pairs.len());
    for (&(n, k), &m) in &pairs {
        let screen = Shape::new(m.min(opts.screen_m), n, k);
        let data = BenchData::<T>::new(screen, opts.seed)?;
        let mut row = Vec::with_capacity(space.len());
        for cfg in &space.candidates {
            let ok = shapes
                .iter()
                .filter(|s| (s.n, s.k) == (n, k))
                .all(|s| feasible(cfg, *s, precision, &limits));
            row.push(if ok {
                let best = data.run_once(cfg, ft)?.min(data.run_once(cfg, ft)?);
                Some(screen.flops() / best as f64)
            } else {
                None
            });
        }
        log::debug!(
            "screened {} configs for N={n} K={k}",
            row.iter().flatten().count()
        );
        scores.push(row);
    }

    let shortlist = greedy_cover(&scores, space, opts);
    let pair_index: BTreeMap<(usize, usize), usize> =
        pairs.keys().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut table = TuneTable::default();
    let mut outcomes = Vec::with_capacity(shapes.len());
    for &shape in shapes {
        let row = &scores[pair_index[&(shape.n, shape.k)]];
        let mut finalists: Vec<(f64, usize)> = shortlist
            .iter()
            .filter_map(|&c| row[c].map(|g| (g, c)))
            .collect();
        finalists.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut cfgs: Vec<TileConfig> = finalists
            .iter()
            .take(opts.finalists)
            .map(|&(_, c)| space.candidates[c])
            .collect();
        let default_ok = feasible(&default, shape, precision, &limits);
        if default_ok && !cfgs.contains(&default) {
            cfgs.push(default);
        }
        if cfgs.is_empty() {
            return Err(Error::NoFeasibleConfig(shape.to_string()));
        }
        let data = BenchData::<T>::new(shape, opts.seed)?;
        let mut best: Option<(TileConfig, f64)> = None;
        let mut default_gflops = f64::NAN;
        for cfg in cfgs {
            let g = benchmark_on(&data, &cfg, opts.reps, ft)?.gflops;
            if cfg == default {
                default_gflops = g;
            }
            let area = |c: &TileConfig| c.block.m * c.block.n;
            best = match best {
                Some((b, bg)) if bg > g || (bg == g && area(&b) <= area(&cfg)) => Some((b, bg)),
                _ => Some((cfg, g)),
            };
        }
        let (cfg, gflops) = best.expect("at least one finalist");
        log::info!("{shape}: {cfg} at {gflops:.2} GFLOPS (default {default_gflops:.2})");
        table.insert(shape, precision, cfg, gflops, opts.reps)?;
        outcomes.push(ShapeOutcome {
            shape,
            cfg,
            gflops,
            default_gflops,
        });
    }
    Ok(TuneOutcome {
        table,
        shapes: outcomes,
        shortlist: shortlist.iter().map(|&c| space.candidates[c]).collect(),
    })
}

/// Indices of at most `opts.shortlist` candidates covering as many
/// `(N, K)` pairs as possible with a near-best score.
fn greedy_cover(
    scores: &[Vec<Option<f64>>],
    space: &ParamSpace,
    opts: &SelectOptions,
) -> Vec<usize> {
    let good: Vec<Vec<bool>> = scores
        .iter()
        .map(|row| {
            let best = row.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
            row.iter()
                .map(|s| s.is_some_and(|g| g >= opts.near_best * best))
                .collect()
        })
        .collect();
    let normalized = |c: usize, p: usize| {
        let best = scores[p].iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        scores[p][c].map_or(0.0, |g| g / best)
    };
    let mut covered = vec![false; scores.len()];
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < opts.shortlist && covered.iter().any(|c| !c) {
        let mut pick: Option<(usize, f64, usize)> = None;
        for (c, _) in space.candidates.iter().enumerate() {
            if chosen.contains(&c) {
                continue;
            }
            let gain = (0..scores.len())
                .filter(|&p| !covered[p] && good[p][c])
                .count();
            if gain == 0 {
                continue;
            }
            let quality: f64 = (0..scores.len())
                .filter(|&p| !covered[p])
                .map(|p| normalized(c, p))
                .sum();
            let better = match pick {
                None => true,
                Some((g, q, _)) => gain > g || (gain == g && quality > q),
            };
            if better {
                pick = Some((gain, quality, c));
            }
        }
        let Some((_, _, c)) = pick else { break };
        for (p, cov) in covered.iter_mut().enumerate() {
            *cov |= good[p][c];
        }
        chosen.push(c);
    }
    chosen
}

/// Key of a tuned entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TuneKey {
    pub m_bucket: usize,
    pub n: usize,
    pub k: usize,
    pub precision: Precision,
}

impl TuneKey {
    pub fn of(shape: Shape, precision: Precision) -> Self {
        TuneKey {
            m_bucket: shape.m.next_power_of_two(),
            n: shape.n,
            k: shape.k,
            precision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneEntry {
    pub cfg: TileConfig,
    pub gflops: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupSource {
    Exact,
    Nearest,
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub cfg: TileConfig,
    pub source: LookupSource,
}

pub const TUNE_TABLE_HEADER: &str =
    "# M_bucket,N,K,precision,bm,bn,bk,sm,sn,sk,um,un,uk,gflops,reps";

/// Selected configuration per bucketed shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuneTable {
    entries: BTreeMap<TuneKey, TuneEntry>,
}

impl TuneTable {
    pub fn insert(
        &mut self,
        shape: Shape,
        precision: Precision,
        cfg: TileConfig,
        gflops: f64,
        reps: usize,
    ) -> Result<()> {
        self.insert_key(
            TuneKey::of(shape, precision),
            TuneEntry { cfg, gflops, reps },
        )
    }

    fn insert_key(&mut self, key: TuneKey, entry: TuneEntry) -> Result<()> {
        entry.cfg.validate()?;
        if !(entry.gflops > 0.0 && entry.gflops.is_finite()) {
            return Err(Error::invalid(format!(
                "throughput {} must be positive",
                entry.gflops
            )));
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&TuneKey, &TuneEntry)> {
        self.entries.iter()
    }

    pub fn get(&self, shape: Shape, precision: Precision) -> Option<&TuneEntry> {
        self.entries.get(&TuneKey::of(shape, precision))
    }

    /// Distinct configurations stored.
    pub fn distinct_configs(&self) -> Vec<TileConfig> {
        let mut v: Vec<TileConfig> = self.entries.values().map(|e| e.cfg).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Exact key, else the entry nearest in `(log N, log K)` (then in
    /// `log M`), else the precision default.
    pub fn lookup(&self, shape: Shape, precision: Precision) -> Lookup {
        let key = TuneKey::of(shape, precision);
        if let Some(e) = self.entries.get(&key) {
            return Lookup {
                cfg: e.cfg,
                source: LookupSource::Exact,
            };
        }
        let ln = |v: usize| (v.max(1) as f64).ln();
        let nearest = self
            .entries
            .iter()
            .filter(|(k, _)| k.precision == precision)
            .map(|(k, e)| {
                let d = (ln(k.n) - ln(shape.n)).powi(2) + (ln(k.k) - ln(shape.k)).powi(2);
                let dm = (ln(k.m_bucket) - ln(key.m_bucket)).abs();
                (d, dm, e)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        match nearest {
            Some((_, _, e)) => Lookup {
                cfg: e.cfg,
                source: LookupSource::Nearest,
            },
            None => Lookup {
                cfg: TileConfig::default_for(precision),
                source: LookupSource::Default,
            },
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(TUNE_TABLE_HEADER);
        out.push('\n');
        for (k, e) in &self.entries {
            let c = &e.cfg;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                k.m_bucket,
                k.n,
                k.k,
                k.precision,
                c.block.m,
                c.block.n,
                c.block.k,
                c.sub.m,
                c.sub.n,
                c.sub.k,
                c.micro.m,
                c.micro.n,
                c.micro.k,
                e.gflops,
                e.reps
            ));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table = TuneTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |col: usize, msg: String| Error::Format {
                path: path.into(),
                row: Some(i + 1),
                col: Some(col),
                msg,
            };
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 15 {
                return Err(bad(
                    cells.len(),
                    format!("expected 15 fields, found {}", cells.len()),
                ));
            }
            let int = |c: usize| {
                cells[c]
                    .parse::<usize>()
                    .map_err(|_| bad(c + 1, format!("'{}' is not a count", cells[c])))
            };
            let precision: Precision = cells[3].parse().map_err(|e: String| bad(4, e))?;
            let cfg = TileConfig {
                block: Dims3::new(int(4)?, int(5)?, int(6)?),
                sub: Dims3::new(int(7)?, int(8)?, int(9)?),
                micro: Dims3::new(int(10)?, int(11)?, int(12)?),
            };
            let gflops = cells[13]
                .parse::<f64>()
                .map_err(|_| bad(14, format!("'{}' is not a number", cells[13])))?;
            let key = TuneKey {
                m_bucket: int(0)?,
                n: int(1)?,
                k: int(2)?,
                precision,
            };
            if !key.m_bucket.is_power_of_two() {
                return Err(bad(
                    1,
                    format!("M bucket {} is not a power of two", key.m_bucket),
                ));
            }
            table
                .insert_key(
                    key,
                    TuneEntry {
                        cfg,
                        gflops,
                        reps: int(14)?,
                    },
                )
                .map_err(|e| bad(5, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sizes of the default single and double precision spaces.
    const SINGLE_SPACE: usize = 276;
    const DOUBLE_SPACE: usize = 336;

    fn cfg(
        b: (usize, usize, usize),
        s: (usize, usize, usize),
        u: (usize, usize, usize),
    ) -> TileConfig {
        TileConfig {
            block: Dims3::new(b.0, b.1, b.2),
            sub: Dims3::new(s.0, s.1, s.2),
            micro: Dims3::new(u.0, u.1, u.2),
        }
    }

    #[test]
    fn space_sizes_are_stable() {
        let s =
            enumerate_configs(Precision::Single, &Bounds::default_for(Precision::Single)).unwrap();
        let d =
            enumerate_configs(Precision::Double, &Bounds::default_for(Precision::Double)).unwrap();
        assert_eq!((s.len(), d.len()), (SINGLE_SPACE, DOUBLE_SPACE));
        assert!(s.candidates.iter().all(|c| c.validate().is_ok()));
        let again =
            enumerate_configs(Precision::Single, &Bounds::default_for(Precision::Single)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn reference_configs_are_members() {
        let s =
            enumerate_configs(Precision::Single, &Bounds::default_for(Precision::Single)).unwrap();
        assert!(s
            .candidates
            .contains(&cfg((32, 256, 16), (32, 64, 16), (16, 8, 4))));
        assert!(s
            .candidates
            .contains(&cfg((256, 32, 16), (64, 32, 16), (16, 8, 4))));
        assert!(!s.candidates.iter().any(|c| c.sub.k != c.block.k));
        let d =
            enumerate_configs(Precision::Double, &Bounds::default_for(Precision::Double)).unwrap();
        assert!(d
            .candidates
            .contains(&TileConfig::default_for(Precision::Double)));
    }

    #[test]
    fn empty_space_is_an_error() {
        let b = Bounds {
            block_mn: (3, 3),
            ..Bounds::default_for(Precision::Single)
        };
        assert!(enumerate_configs(Precision::Single, &b).is_err());
    }

    #[test]
    fn feasibility_examples() {
        let limits = MachineLimits::default();
        let shape = Shape::new(4096, 64, 64);
        assert!(feasible(
            &TileConfig::default_for(Precision::Single),
            shape,
            Precision::Single,
            &limits
        ));
        assert!(feasible(
            &cfg((256, 32, 16), (64, 32, 16), (16, 8, 4)),
            shape,
            Precision::Single,
            &limits
        ));
        let big = cfg((256, 256, 32), (64, 32, 32), (8, 8, 4));
        let small = MachineLimits {
            cache_bytes: Some(64 << 10),
            ft: false,
        };
        assert_eq!(working_set_bytes(&big, Precision::Double, false), 128 << 10);
        assert!(!feasible(&big, shape, Precision::Double, &small));
        let unlimited = MachineLimits {
            cache_bytes: None,
            ft: true,
        };
        let space =
            enumerate_configs(Precision::Double, &Bounds::default_for(Precision::Double)).unwrap();
        assert!(space
            .candidates
            .iter()
            .all(|c| feasible(c, shape, Precision::Double, &unlimited)));
    }

    #[test]
    fn zero_reps_rejected() {
        let c = TileConfig::default_for(Precision::Single);
        assert!(benchmark(&c, Shape::new(64, 4, 8), Precision::Single, 0, FtMode::Off).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(Measurement::from_times(vec![5, 1, 3], 1.0).median_ns, 3);
        assert_eq!(Measurement::from_times(vec![4, 1, 3, 10], 1.0).median_ns, 3);
    }

    #[test]
    fn lookup_exact_nearest_default() {
        let mut t = TuneTable::default();
        let a = cfg((64, 32, 8), (32, 32, 8), (16, 8, 4));
        let b = cfg((128, 128, 16), (32, 64, 16), (16, 8, 4));
        t.insert(Shape::new(16384, 8, 32), Precision::Single, a, 10.0, 10)
            .unwrap();
        t.insert(Shape::new(16384, 128, 1024), Precision::Single, b, 20.0, 10)
            .unwrap();
        let hit = t.lookup(Shape::new(10000, 8, 32), Precision::Single);
        assert_eq!((hit.cfg, hit.source), (a, LookupSource::Exact));
        let near = t.lookup(Shape::new(100, 64, 512), Precision::Single);
        assert_eq!((near.cfg, near.source), (b, LookupSource::Nearest));
        let miss = t.lookup(Shape::new(100, 64, 512), Precision::Double);
        assert_eq!(miss.source, LookupSource::Default);
        assert_eq!(miss.cfg, TileConfig::default_for(Precision::Double));
    }

    #[test]
    fn table_rejects_bad_rows() {
        let p = Path::new("t.csv");
        assert!(TuneTable::parse("16384,8,32,single,64,32,8,32,32,8,16,8,4,0,10", p).is_err());
        assert!(TuneTable::parse("16384,8,32,single,64,32,8,32,32,16,16,8,4,1.5,10", p).is_err());
        assert!(TuneTable::parse("16384,8,32,single,64,32,8", p).is_err());
        assert!(TuneTable::parse("# only a comment\n\n", p)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn shape_parsing() {
        assert_eq!(
            Shape::parse("16384x8x32").unwrap(),
            Shape::new(16384, 8, 32)
        );
        assert_eq!(Shape::parse("1,2,3").unwrap(), Shape::new(1, 2, 3));
        assert!(Shape::parse("0x2x3").is_err());
        assert!(Shape::parse("2x3").is_err());
        assert_eq!(default_grid().len(), 32);
    }

    #[test]
    fn select_small_grid() {
        let space =
            enumerate_configs(Precision::Single, &Bounds::default_for(Precision::Single)).unwrap();
        let shapes = [Shape::new(512, 8, 8), Shape::new(512, 32, 64)];
        let opts = SelectOptions {
            reps: 3,
            screen_m: 256,
            ..SelectOptions::default()
        };
        let out = select(&shapes, &space, FtMode::Off, &opts).unwrap();
        assert_eq!(out.table.len(), 2);
        assert!(out.shortlist.len() <= 8);
        for s in &out.shapes {
            assert!(s.gflops >= s.default_gflops);
            assert_eq!(out.table.lookup(s.shape, Precision::Single).cfg, s.cfg);
        }
        assert!(select(&[], &space, FtMode::Off, &opts).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn table_round_trips(picks in prop::collection::vec((0usize..200, 0usize..4, 0usize..4, 1u32..24, 0.01f64..1e4), 0..20)) {
            let space = enumerate_configs(Precision::Single, &Bounds::default_for(Precision::Single)).unwrap();
            let mut t = TuneTable::default();
            for (c, n, k, mb, g) in picks {
                let shape = Shape::new(1 << mb, GRID_N[n], GRID_K[k]);
                t.insert(shape, Precision::Single, space.candidates[c % space.len()], g, 10).unwrap();
            }
            let back = TuneTable::parse(&t.to_text(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
