//! Deterministic single-bit soft-error injection.
//!
//! Faults are planned up front into a [`FaultSchedule`] keyed by
//! `(site, iteration, tile)`, so serial and parallel runs corrupt exactly the
//! same accumulator elements. Engines query a [`FaultHook`] at the end of a
//! tile's accumulation (GEMM) or midway through a reduction chunk (centroid
//! update), before any verification runs.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{Precision, Real};

/// XOR of bit `b` in the IEEE-754 interchange encoding of `value`.
///
/// # Panics
/// If `b` is not below the width of `T`.
pub fn flip_bit<T: Real>(value: T, b: u32) -> T {
    assert!(
        b < T::BITS,
        "bit {b} out of range for {}-bit value",
        T::BITS
    );
    T::from_bits_u64(value.to_bits_u64() ^ (1u64 << b))
}

/// Where a fault lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultSite {
    /// An element of a GEMM accumulator tile.
    GemmAccumulator,
    /// One replica of a centroid-update accumulator.
    UpdateAccumulator,
}

impl FaultSite {
    fn name(self) -> &'static str {
        match self {
            FaultSite::GemmAccumulator => "gemm",
            FaultSite::UpdateAccumulator => "update",
        }
    }
}

/// Which sites a [`FaultSpec`] targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultTarget {
    GemmAccumulator,
    UpdateAccumulator,
    Both,
}

impl FaultTarget {
    pub fn includes(self, site: FaultSite) -> bool {
        matches!(
            (self, site),
            (FaultTarget::Both, _)
                | (FaultTarget::GemmAccumulator, FaultSite::GemmAccumulator)
                | (FaultTarget::UpdateAccumulator, FaultSite::UpdateAccumulator)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultMode {
    None,
    /// One Bernoulli(p) draw per (iteration, tile).
    PerTileProb(f64),
    /// `n` distinct tiles per iteration (capped at the number of tiles).
    FixedCount(usize),
    /// Iteration `t` flips the `t`-th (element, bit) pair in every tile.
    ExhaustiveSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitPolicy {
    UniformOverWidth,
    SignOnly,
    ExponentOnly,
    Chosen(u32),
}

impl BitPolicy {
    /// Bits this policy can produce for a value of `width` bits.
    pub fn bits(self, width: u32) -> Vec<u32> {
        match self {
            BitPolicy::UniformOverWidth => (0..width).collect(),
            BitPolicy::SignOnly => vec![width - 1],
            BitPolicy::ExponentOnly => precision_of(width).exponent_bits().collect(),
            BitPolicy::Chosen(b) => vec![b],
        }
    }

    fn draw(self, rng: &mut ChaCha8Rng, width: u32) -> u32 {
        match self {
            BitPolicy::UniformOverWidth => rng.random_range(0..width),
            BitPolicy::SignOnly => width - 1,
            BitPolicy::ExponentOnly => rng.random_range(precision_of(width).exponent_bits()),
            BitPolicy::Chosen(b) => b,
        }
    }
}

fn precision_of(width: u32) -> Precision {
    if width <= 32 {
        Precision::Single
    } else {
        Precision::Double
    }
}

/// A fault campaign description.
///
/// The textual form is `MODE[@BITS][/TARGET]` where `MODE` is `none`,
/// `prob:P`, `fixed:N` or `sweep`; `BITS` is `any`, `sign`, `exp` or `bK`;
/// `TARGET` is `gemm`, `update` or `both` (default). The seed is carried
/// separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub mode: FaultMode,
    pub bit_policy: BitPolicy,
    pub seed: u64,
    pub target: FaultTarget,
}

impl FaultSpec {
    pub fn none() -> Self {
        FaultSpec {
            mode: FaultMode::None,
            bit_policy: BitPolicy::UniformOverWidth,
            seed: 0,
            target: FaultTarget::Both,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_target(mut self, target: FaultTarget) -> Self {
        self.target = target;
        self
    }

    pub fn is_none(&self) -> bool {
        matches!(self.mode, FaultMode::None)
    }

    pub fn validate(&self) -> Result<()> {
        if let FaultMode::PerTileProb(p) = self.mode {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "fault probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Parses the textual form; `seed` is attached as given.
    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let bad = |why: &str| Error::invalid(format!("bad inject spec '{text}': {why}"));
        let (rest, target) = match text.trim().rsplit_once('/') {
            Some((r, t)) => (
                r,
                match t {
                    "gemm" => FaultTarget::GemmAccumulator,
                    "update" => FaultTarget::UpdateAccumulator,
                    "both" => FaultTarget::Both,
                    _ => return Err(bad("target must be gemm, update or both")),
                },
            ),
            None => (text.trim(), FaultTarget::Both),
        };
        let (mode_s, bits_s) = match rest.split_once('@') {
            Some((m, b)) => (m, Some(b)),
            None => (rest, None),
        };
        let mode = match mode_s.split_once(':') {
            None if mode_s == "none" => FaultMode::None,
            None if mode_s == "sweep" => FaultMode::ExhaustiveSweep,
            Some(("prob", p)) => FaultMode::PerTileProb(p.parse().map_err(|_| bad("probability"))?),
            Some(("fixed", n)) => FaultMode::FixedCount(n.parse().map_err(|_| bad("count"))?),
            _ => return Err(bad("mode must be none, prob:P, fixed:N or sweep")),
        };
        let bit_policy = match bits_s {
            None | Some("any") => BitPolicy::UniformOverWidth,
            Some("sign") => BitPolicy::SignOnly,
            Some("exp") => BitPolicy::ExponentOnly,
            Some(b) => match b.strip_prefix('b').map(str::parse::<u32>) {
                Some(Ok(k)) if k < 64 => BitPolicy::Chosen(k),
                _ => return Err(bad("bit policy must be sign, exp, any or b<k>")),
            },
        };
        let spec = FaultSpec {
            mode,
            bit_policy,
            seed,
            target,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            FaultMode::None => write!(f, "none")?,
            FaultMode::PerTileProb(p) => write!(f, "prob:{p}")?,
            FaultMode::FixedCount(n) => write!(f, "fixed:{n}")?,
            FaultMode::ExhaustiveSweep => write!(f, "sweep")?,
        }
        match self.bit_policy {
            BitPolicy::UniformOverWidth => write!(f, "@any")?,
            BitPolicy::SignOnly => write!(f, "@sign")?,
            BitPolicy::ExponentOnly => write!(f, "@exp")?,
            BitPolicy::Chosen(b) => write!(f, "@b{b}")?,
        }
        let t = match self.target {
            FaultTarget::GemmAccumulator => "gemm",
            FaultTarget::UpdateAccumulator => "update",
            FaultTarget::Both => "both",
        };
        write!(f, "/{t}")
    }
}

impl FromStr for FaultSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FaultSpec::parse(s, 0)
    }
}

/// Tile grid and tile shape of one injection site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteGeometry {
    pub grid: (usize, usize),
    pub dims: (usize, usize),
    /// Width in bits of the corrupted values.
    pub width: u32,
}

/// The sites a computation exposes; absent sites receive no faults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultLayout {
    pub gemm: Option<SiteGeometry>,
    pub update: Option<SiteGeometry>,
}

impl FaultLayout {
    pub fn gemm(grid: (usize, usize), dims: (usize, usize), width: u32) -> Self {
        FaultLayout {
            gemm: Some(SiteGeometry { grid, dims, width }),
            update: None,
        }
    }
}

/// One planned corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledFault {
    pub site: FaultSite,
    pub iteration: usize,
    pub tile: (usize, usize),
    pub elem: (usize, usize),
    pub bit: u32,
}

/// Element and bit to flip at a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementFlip {
    pub elem: (usize, usize),
    pub bit: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultSchedule {
    pub entries: Vec<ScheduledFault>,
}

pub const SCHEDULE_CSV_HEADER: &str = "iteration,tile_i,tile_j,elem_i,elem_j,bit,target";

impl FaultSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(SCHEDULE_CSV_HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.iteration,
                e.tile.0,
                e.tile.1,
                e.elem.0,
                e.elem.1,
                e.bit,
                e.site.name()
            ));
        }
        s
    }

    /// Accepts the six-column form (GEMM site implied) or the seven-column
    /// form with a trailing `gemm`/`update` target.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (li, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("iteration") {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Format {
                path: "<schedule>".into(),
                row: Some(li + 1),
                col: None,
                msg: format!("bad schedule line '{line}'"),
            };
            if f.len() != 6 && f.len() != 7 {
                return Err(bad());
            }
            let n = |i: usize| f[i].parse::<usize>().map_err(|_| bad());
            let site = match f.get(6) {
                None | Some(&"gemm") => FaultSite::GemmAccumulator,
                Some(&"update") => FaultSite::UpdateAccumulator,
                _ => return Err(bad()),
            };
            entries.push(ScheduledFault {
                site,
                iteration: n(0)?,
                tile: (n(1)?, n(2)?),
                elem: (n(3)?, n(4)?),
                bit: f[5].parse().map_err(|_| bad())?,
            });
        }
        Ok(FaultSchedule { entries })
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Plans every fault of a campaign before execution.
///
/// Each site draws from its own RNG stream derived from `spec.seed`, so the
/// GEMM plan does not change when update faults are added. At most one fault
/// is scheduled per (site, iteration, tile).
pub fn plan_faults(
    spec: &FaultSpec,
    n_iters: usize,
    layout: &FaultLayout,
) -> Result<FaultSchedule> {
    spec.validate()?;
    let mut entries = Vec::new();
    for (site, geom) in [
        (FaultSite::GemmAccumulator, layout.gemm),
        (FaultSite::UpdateAccumulator, layout.update),
    ] {
        let Some(geom) = geom else { continue };
        if !spec.target.includes(site) {
            continue;
        }
        if let BitPolicy::Chosen(b) = spec.bit_policy {
            if b >= geom.width {
                return Err(Error::invalid(format!(
                    "bit {b} outside {}-bit values",
                    geom.width
                )));
            }
        }
        plan_site(spec, n_iters, site, geom, &mut entries);
    }
    Ok(FaultSchedule { entries })
}

fn plan_site(
    spec: &FaultSpec,
    n_iters: usize,
    site: FaultSite,
    g: SiteGeometry,
    out: &mut Vec<ScheduledFault>,
) {
    let stream = match site {
        FaultSite::GemmAccumulator => 0x9e37_79b9_7f4a_7c15,
        FaultSite::UpdateAccumulator => 0xc2b2_ae3d_27d4_eb4f,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ stream);
    let n_tiles = g.grid.0 * g.grid.1;
    if n_tiles == 0 || g.dims.0 * g.dims.1 == 0 {
        return;
    }
    let tile_of = |t: usize| (t / g.grid.1, t % g.grid.1);
    let random_entry = |rng: &mut ChaCha8Rng, iteration: usize, t: usize| ScheduledFault {
        site,
        iteration,
        tile: tile_of(t),
        elem: (rng.random_range(0..g.dims.0), rng.random_range(0..g.dims.1)),
        bit: spec.bit_policy.draw(rng, g.width),
    };
    match spec.mode {
        FaultMode::None => {}
        FaultMode::PerTileProb(p) => {
            for it in 0..n_iters {
                for t in 0..n_tiles {
                    if rng.random::<f64>() < p {
                        out.push(random_entry(&mut rng, it, t));
                    }
                }
            }
        }
        FaultMode::FixedCount(n) => {
            let n = n.min(n_tiles);
            for it in 0..n_iters {
                let mut tiles = sample(&mut rng, n_tiles, n).into_vec();
                tiles.sort_unstable();
                for t in tiles {
                    out.push(random_entry(&mut rng, it, t));
                }
            }
        }
        FaultMode::ExhaustiveSweep => {
            let bits = spec.bit_policy.bits(g.width);
            let positions = g.dims.0 * g.dims.1;
            for it in 0..n_iters.min(positions * bits.len()) {
                let pos = it / bits.len();
                for t in 0..n_tiles {
                    out.push(ScheduledFault {
                        site,
                        iteration: it,
                        tile: tile_of(t),
                        elem: (pos / g.dims.1, pos % g.dims.1),
                        bit: bits[it % bits.len()],
                    });
                }
            }
        }
    }
}

/// A corruption that actually happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub site: FaultSite,
    pub iteration: usize,
    pub tile: (usize, usize),
    pub elem: (usize, usize),
    pub bit: u32,
    pub before: f64,
    pub after: f64,
    /// `after - before`; non-finite when the flip produced Inf/NaN.
    pub delta: f64,
}

/// Injection interface queried by the engines.
pub trait FaultHook: Sync {
    /// The flip scheduled for `(site, iteration, tile)`, if any.
    fn fault_at(
        &self,
        site: FaultSite,
        iteration: usize,
        tile: (usize, usize),
    ) -> Option<ElementFlip>;

    /// Every flip for the slot. Schedules hold at most one; custom hooks may
    /// return more to model upsets outside the single-error model.
    fn faults_at(
        &self,
        site: FaultSite,
        iteration: usize,
        tile: (usize, usize),
    ) -> Vec<ElementFlip> {
        self.fault_at(site, iteration, tile).into_iter().collect()
    }

    fn record(&self, _injection: Injection) {}
}

/// Hook that never injects.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFaults;

impl FaultHook for NoFaults {
    fn fault_at(&self, _: FaultSite, _: usize, _: (usize, usize)) -> Option<ElementFlip> {
        None
    }
}

/// Applies a [`FaultSchedule`] and logs what it injected.
#[derive(Debug, Default)]
pub struct FaultInjector {
    plan: HashMap<(FaultSite, usize, (usize, usize)), ElementFlip>,
    log: Mutex<Vec<Injection>>,
}

impl FaultInjector {
    pub fn new(schedule: &FaultSchedule) -> Self {
        let plan = schedule
            .entries
            .iter()
            .map(|e| {
                (
                    (e.site, e.iteration, e.tile),
                    ElementFlip {
                        elem: e.elem,
                        bit: e.bit,
                    },
                )
            })
            .collect();
        FaultInjector {
            plan,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Injections performed so far, sorted by (site, iteration, tile).
    pub fn injections(&self) -> Vec<Injection> {
        let mut v = self.log.lock().unwrap().clone();
        v.sort_by_key(|a| (a.site, a.iteration, a.tile));
        v
    }

    pub fn injected_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl FaultHook for FaultInjector {
    fn fault_at(
        &self,
        site: FaultSite,
        iteration: usize,
        tile: (usize, usize),
    ) -> Option<ElementFlip> {
        self.plan.get(&(site, iteration, tile)).copied()
    }

    fn record(&self, injection: Injection) {
        self.log.lock().unwrap().push(injection);
    }
}

/// Applies the hook's scheduled flips to an accumulator tile.
///
/// Element `(i, j)` of `acc` sits at `i * stride.0 + j * stride.1`; `valid` is the populated
/// region. Scheduled coordinates outside `valid` (edge tiles) wrap around.
pub fn maybe_corrupt<T: Real>(
    hook: &dyn FaultHook,
    site: FaultSite,
    iteration: usize,
    tile: (usize, usize),
    acc: &mut [T],
    stride: (usize, usize),
    valid: (usize, usize),
) -> Vec<Injection> {
    let flips = hook.faults_at(site, iteration, tile);
    if flips.is_empty() || valid.0 == 0 || valid.1 == 0 {
        return Vec::new();
    }
    flips
        .into_iter()
        .map(|flip| {
            let (i, j) = (flip.elem.0 % valid.0, flip.elem.1 % valid.1);
            let bit = flip.bit % T::BITS;
            let slot = &mut acc[i * stride.0 + j * stride.1];
            let before = *slot;
            let after = flip_bit(before, bit);
            *slot = after;
            let inj = Injection {
                site,
                iteration,
                tile,
                elem: (i, j),
                bit,
                before: before.as_f64(),
                after: after.as_f64(),
                delta: after.as_f64() - before.as_f64(),
            };
            hook.record(inj);
            inj
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_flip_of_one() {
        assert_eq!(flip_bit(1.0f32, 31), -1.0);
        assert_eq!(flip_bit(1.0f64, 63), -1.0);
    }

    #[test]
    fn lowest_bit_of_zero_is_smallest_subnormal() {
        let v = flip_bit(0.0f32, 0);
        assert_eq!(v.to_bits(), 1);
        assert_eq!(v, f32::from_bits(1));
        assert!((v as f64 - 1.401298464324817e-45).abs() < 1e-50);
    }

    #[test]
    #[should_panic]
    fn out_of_range_bit_panics() {
        flip_bit(1.0f32, 32);
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(bits in any::<u32>(), b in 0u32..32) {
            let x = f32::from_bits(bits);
            prop_assert_eq!(flip_bit(flip_bit(x, b), b).to_bits(), bits);
        }

        #[test]
        fn flip_is_an_involution_f64(bits in any::<u64>(), b in 0u32..64) {
            let x = f64::from_bits(bits);
            prop_assert_eq!(flip_bit(flip_bit(x, b), b).to_bits(), bits);
        }

        #[test]
        fn at_most_one_fault_per_tile(seed in any::<u64>(), n in 0usize..20, p in 0.0f64..1.0) {
            let layout = FaultLayout::gemm((3, 4), (8, 8), 32);
            for mode in [FaultMode::FixedCount(n), FaultMode::PerTileProb(p)] {
                let spec = FaultSpec { mode, ..FaultSpec::none() }.with_seed(seed);
                let s = plan_faults(&spec, 5, &layout).unwrap();
                let mut keys: Vec<_> = s.entries.iter().map(|e| (e.iteration, e.tile)).collect();
                let before = keys.len();
                keys.sort();
                keys.dedup();
                prop_assert_eq!(keys.len(), before);
                for e in &s.entries {
                    prop_assert!(e.elem.0 < 8 && e.elem.1 < 8 && e.bit < 32);
                }
            }
        }
    }

    #[test]
    fn none_plans_nothing() {
        let s = plan_faults(
            &FaultSpec::none(),
            10,
            &FaultLayout::gemm((4, 4), (32, 32), 32),
        )
        .unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn fixed_count_counts() {
        let spec = FaultSpec::parse("fixed:3", 9).unwrap();
        let s = plan_faults(&spec, 2, &FaultLayout::gemm((4, 2), (16, 16), 32)).unwrap();
        assert_eq!(s.len(), 6);
        for it in 0..2 {
            assert_eq!(s.entries.iter().filter(|e| e.iteration == it).count(), 3);
        }
    }

    #[test]
    fn fixed_count_is_capped_by_tiles() {
        let spec = FaultSpec::parse("fixed:10", 1).unwrap();
        let s = plan_faults(&spec, 1, &FaultLayout::gemm((2, 2), (4, 4), 32)).unwrap();
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn plans_are_deterministic() {
        let spec = FaultSpec::parse("prob:0.3@exp", 42).unwrap();
        let layout = FaultLayout::gemm((5, 5), (32, 32), 32);
        let a = plan_faults(&spec, 7, &layout).unwrap();
        let b = plan_faults(&spec, 7, &layout).unwrap();
        assert_eq!(a, b);
        assert!(a.entries.iter().all(|e| (23..31).contains(&e.bit)));
    }

    #[test]
    fn gemm_plan_unchanged_by_update_site() {
        let spec = FaultSpec::parse("fixed:2", 5).unwrap();
        let g = SiteGeometry {
            grid: (3, 3),
            dims: (8, 8),
            width: 32,
        };
        let u = SiteGeometry {
            grid: (4, 1),
            dims: (20, 2),
            width: 32,
        };
        let only = plan_faults(
            &spec,
            3,
            &FaultLayout {
                gemm: Some(g),
                update: None,
            },
        )
        .unwrap();
        let both = plan_faults(
            &spec,
            3,
            &FaultLayout {
                gemm: Some(g),
                update: Some(u),
            },
        )
        .unwrap();
        let gemm_part: Vec<_> = both
            .entries
            .iter()
            .filter(|e| e.site == FaultSite::GemmAccumulator)
            .copied()
            .collect();
        assert_eq!(only.entries, gemm_part);
        assert_eq!(both.len(), 12);
    }

    #[test]
    fn sweep_covers_every_pair() {
        let spec = FaultSpec::parse("sweep", 0).unwrap();
        let s = plan_faults(&spec, usize::MAX, &FaultLayout::gemm((1, 1), (8, 8), 32)).unwrap();
        assert_eq!(s.len(), 64 * 32);
        let mut pairs: Vec<_> = s.entries.iter().map(|e| (e.elem, e.bit)).collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 2048);
    }

    #[test]
    fn spec_strings_round_trip() {
        for text in [
            "none@any/both",
            "prob:0.01@sign/gemm",
            "fixed:3@exp/update",
            "sweep@b7/both",
        ] {
            let spec = FaultSpec::parse(text, 3).unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert_eq!(
            FaultSpec::parse("fixed:10", 0).unwrap().bit_policy,
            BitPolicy::UniformOverWidth
        );
        for bad in ["often", "prob:2", "fixed:x", "fixed:1@nope", "fixed:1/mem"] {
            assert!(FaultSpec::parse(bad, 0).is_err(), "{bad}");
        }
    }

    #[test]
    fn schedule_csv_round_trip() {
        let spec = FaultSpec::parse("fixed:2", 11).unwrap();
        let layout = FaultLayout {
            gemm: Some(SiteGeometry {
                grid: (2, 2),
                dims: (8, 8),
                width: 32,
            }),
            update: Some(SiteGeometry {
                grid: (3, 1),
                dims: (9, 2),
                width: 32,
            }),
        };
        let s = plan_faults(&spec, 4, &layout).unwrap();
        assert_eq!(FaultSchedule::from_csv(&s.to_csv()).unwrap(), s);
        let six = "iteration,tile_i,tile_j,elem_i,elem_j,bit\n0,1,2,3,4,5\n";
        let parsed = FaultSchedule::from_csv(six).unwrap();
        assert_eq!(parsed.entries[0].site, FaultSite::GemmAccumulator);
        assert_eq!(parsed.entries[0].bit, 5);
    }

    #[test]
    fn empty_schedule_leaves_tile_untouched() {
        let inj = FaultInjector::new(&FaultSchedule::default());
        let mut acc = vec![1.5f32; 16];
        assert!(maybe_corrupt(
            &inj,
            FaultSite::GemmAccumulator,
            0,
            (0, 0),
            &mut acc,
            (4, 1),
            (4, 4)
        )
        .is_empty());
        assert!(acc.iter().all(|&v| v == 1.5));
    }

    #[test]
    fn sign_flip_records_delta() {
        let schedule = FaultSchedule {
            entries: vec![ScheduledFault {
                site: FaultSite::GemmAccumulator,
                iteration: 2,
                tile: (1, 0),
                elem: (1, 1),
                bit: 31,
            }],
        };
        let inj = FaultInjector::new(&schedule);
        let mut acc = vec![0.0f32; 4];
        acc[3] = 7.5;
        assert!(maybe_corrupt(
            &inj,
            FaultSite::GemmAccumulator,
            1,
            (1, 0),
            &mut acc,
            (2, 1),
            (2, 2)
        )
        .is_empty());
        let got = maybe_corrupt(
            &inj,
            FaultSite::GemmAccumulator,
            2,
            (1, 0),
            &mut acc,
            (2, 1),
            (2, 2),
        )[0];
        assert_eq!(acc[3], -7.5);
        assert_eq!(got.delta, -15.0);
        assert_eq!(inj.injections(), vec![got]);
    }
}
