//! Two-vector checksum protection for the tiled product, plus a DMR guard for
//! scalar reductions.
//!
//! Within a tile, `e1 = [1, 1, ...]` and `e2 = [1, 2, ...]` (tile-local,
//! 1-based). For the product `C = A * B^T` the column checksums of `C` are
//! predicted from `e^T A` and the row checksums from `B e`. A single
//! corrupted element shows up as one violated column and one violated row;
//! the `e2 / e1` divergence quotients give its coordinates and the `e1`
//! divergence its magnitude. All checksum arithmetic is carried out in `f64`.

mod dmr;
mod repair;

pub use dmr::{dmr_reduce, dmr_reduce_hooked, DmrOutcome, DmrValue, ReduceOp, DMR_MAX_ATTEMPTS};
pub(crate) use repair::{repair_tile, Repair, TileCheck};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::faultsim::FaultHook;
use crate::gemm::{check_inner, run_store, Job, TileConfig};
use crate::matrix::{Mat, Precision, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// `delta_rel * max(1, P) * k`, where `P` bounds any partial product seen
    /// so far in the tile and `k` is the accumulated length.
    Relative,
    /// `delta_rel` as an absolute bound.
    Absolute,
}

/// Detection threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub delta_rel: f64,
    pub mode: ThresholdMode,
}

impl Threshold {
    pub fn new(delta_rel: f64, mode: ThresholdMode) -> Result<Self> {
        let t = Threshold { delta_rel, mode };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_rel.is_finite() && self.delta_rel > 0.0) {
            return Err(Error::invalid(format!(
                "threshold {} must be positive",
                self.delta_rel
            )));
        }
        Ok(())
    }

    /// `1e-4` for single, `1e-10` for double, relative mode.
    pub fn default_for(precision: Precision) -> Self {
        let delta_rel = match precision {
            Precision::Single => 1e-4,
            Precision::Double => 1e-10,
        };
        Threshold {
            delta_rel,
            mode: ThresholdMode::Relative,
        }
    }

    /// Absolute bound after accumulating `k_acc` terms whose products are
    /// bounded by `pmax`.
    pub fn tau(&self, pmax: f64, k_acc: usize) -> f64 {
        match self.mode {
            ThresholdMode::Relative => self.delta_rel * pmax.max(1.0) * k_acc.max(1) as f64,
            ThresholdMode::Absolute => self.delta_rel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    DetectedCorrected,
    DetectedUncorrectable,
    DmrMismatch,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::DetectedCorrected => "detected-corrected",
            EventKind::DetectedUncorrectable => "detected-uncorrectable",
            EventKind::DmrMismatch => "dmr-mismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub iteration: usize,
    /// `(bi, bj)` for product tiles, `(chunk, 0)` for update reductions.
    pub tile: (usize, usize),
    pub kind: EventKind,
    /// Tile-local location, when known.
    pub loc: Option<(usize, usize)>,
    /// Removed error (`corrupted - restored`), saturated to `f64::MAX` when
    /// the corrupted value was not finite.
    pub delta: f64,
}

/// Detection log and counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionReport {
    pub events: Vec<DetectionEvent>,
    pub detections: usize,
    pub corrections: usize,
    pub uncorrectable: usize,
    /// Detections in tiles where nothing was injected.
    pub false_alarms: usize,
    pub dmr_mismatches: usize,
}

pub const REPORT_CSV_HEADER: &str = "iteration,tile_i,tile_j,kind,loc_i,loc_j,delta";

impl DetectionReport {
    pub fn merge(&mut self, other: DetectionReport) {
        self.events.extend(other.events);
        self.detections += other.detections;
        self.corrections += other.corrections;
        self.uncorrectable += other.uncorrectable;
        self.false_alarms += other.false_alarms;
        self.dmr_mismatches += other.dmr_mismatches;
    }

    pub fn is_clean(&self) -> bool {
        self.events.is_empty()
    }

    pub fn has_uncorrectable(&self) -> bool {
        self.uncorrectable > 0
    }

    /// One line per event; unknown locations are left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_CSV_HEADER);
        s.push('\n');
        for e in &self.events {
            let (li, lj) = match e.loc {
                Some((i, j)) => (i.to_string(), j.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.iteration,
                e.tile.0,
                e.tile.1,
                e.kind.name(),
                li,
                lj,
                e.delta
            );
        }
        s
    }
}

pub(crate) fn saturate(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else if x.is_nan() {
        f64::MAX
    } else {
        f64::MAX.copysign(x)
    }
}

/// `e1^T X` and `e2^T X`: column sums with unit and 1-based row weights.
pub fn encode_cols<T: Real>(x: &Mat<T>) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = vec![0.0; x.cols()];
    let mut c2 = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        let w = (i + 1) as f64;
        for (j, v) in x.row(i).iter().enumerate() {
            c1[j] += v.as_f64();
            c2[j] += w * v.as_f64();
        }
    }
    (c1, c2)
}

/// `Y e1` and `Y e2`: row sums with unit and 1-based column weights.
pub fn encode_rows<T: Real>(y: &Mat<T>) -> (Vec<f64>, Vec<f64>) {
    (0..y.rows())
        .map(|i| {
            y.row(i)
                .iter()
                .enumerate()
                .fold((0.0, 0.0), |(s1, s2), (j, v)| {
                    (s1 + v.as_f64(), s2 + (j + 1) as f64 * v.as_f64())
                })
        })
        .unzip()
}

/// Input encodings and predicted output checksums for one `A * B^T` tile.
#[derive(Debug, Clone, PartialEq)]
pub struct ChecksumSet {
    /// `e1^T A`, length `K`.
    pub colsum1: Vec<f64>,
    /// `e2^T A`, length `K`.
    pub colsum2: Vec<f64>,
    /// `B^T e1` (the right operand enters transposed), length `K`.
    pub rowsum1: Vec<f64>,
    pub rowsum2: Vec<f64>,
    /// Predicted `e1^T C` and `e2^T C`, one per output column.
    pub outsum_r1: Vec<f64>,
    pub outsum_r2: Vec<f64>,
    /// Predicted `C e1` and `C e2`, one per output row.
    pub outsum_c1: Vec<f64>,
    pub outsum_c2: Vec<f64>,
}

/// `actual - predicted` for all four output checksums.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub col1: Vec<f64>,
    pub col2: Vec<f64>,
    pub row1: Vec<f64>,
    pub row2: Vec<f64>,
}

impl Divergence {
    /// True when every entry is finite and within bound: `tau` for the `e1`
    /// sums, `tau` times the largest weight for the `e2` sums.
    pub fn within(&self, tau: f64) -> bool {
        let (m, n) = (self.row1.len().max(1) as f64, self.col1.len().max(1) as f64);
        let ok = |v: &[f64], t: f64| v.iter().all(|d| d.abs() <= t);
        ok(&self.col1, tau)
            && ok(&self.row1, tau)
            && ok(&self.col2, tau * m)
            && ok(&self.row2, tau * n)
    }
}

impl ChecksumSet {
    pub fn encode<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Result<Self> {
        check_inner(a, b)?;
        let (colsum1, colsum2) = encode_cols(a);
        let (rowsum1, rowsum2) = encode_cols(b);
        let dot = |x: &[T], w: &[f64]| x.iter().zip(w).map(|(v, w)| v.as_f64() * w).sum::<f64>();
        Ok(ChecksumSet {
            outsum_r1: (0..b.rows()).map(|j| dot(b.row(j), &colsum1)).collect(),
            outsum_r2: (0..b.rows()).map(|j| dot(b.row(j), &colsum2)).collect(),
            outsum_c1: (0..a.rows()).map(|i| dot(a.row(i), &rowsum1)).collect(),
            outsum_c2: (0..a.rows()).map(|i| dot(a.row(i), &rowsum2)).collect(),
            colsum1,
            colsum2,
            rowsum1,
            rowsum2,
        })
    }

    pub fn divergence<T: Real>(&self, tile: &Mat<T>) -> Divergence {
        let (c1, c2) = encode_cols(tile);
        let (r1, r2) = encode_rows(tile);
        let diff = |a: Vec<f64>, p: &[f64]| a.iter().zip(p).map(|(a, p)| a - p).collect();
        Divergence {
            col1: diff(c1, &self.outsum_r1),
            col2: diff(c2, &self.outsum_r2),
            row1: diff(r1, &self.outsum_c1),
            row2: diff(r2, &self.outsum_c2),
        }
    }

    pub fn verify<T: Real>(&self, tile: &Mat<T>, tau: f64) -> bool {
        self.divergence(tile).within(tau)
    }
}

/// A located single error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Located {
    pub i: usize,
    pub j: usize,
    pub delta: f64,
}

const INTEGRALITY_SLACK: f64 = 0.05;

fn index_from_quotient(q: f64, len: usize) -> Option<usize> {
    let r = q.round();
    if !q.is_finite() || (q - r).abs() > INTEGRALITY_SLACK || r < 1.0 || r > len as f64 {
        return None;
    }
    Some(r as usize - 1)
}

/// Locates a single error from checksum divergences.
///
/// `d_c1, d_c2` are the `e1`/`e2` divergences of the faulty row's checksum
/// (weights over column index) and `d_r1, d_r2` those of the faulty column's
/// checksum (weights over row index). Returns `None` when the pair is
/// inconsistent, non-integral or out of the `tile` range.
pub fn locate(
    d_c1: f64,
    d_c2: f64,
    d_r1: f64,
    d_r2: f64,
    tau: f64,
    tile: (usize, usize),
) -> Option<Located> {
    if ![d_c1, d_c2, d_r1, d_r2].iter().all(|v| v.is_finite()) {
        return None;
    }
    if d_c1.abs() <= tau && d_r1.abs() <= tau {
        return None;
    }
    if (d_c1 - d_r1).abs() > tau {
        return None;
    }
    let i = index_from_quotient(d_r2 / d_r1, tile.0)?;
    let j = index_from_quotient(d_c2 / d_c1, tile.1)?;
    Some(Located { i, j, delta: d_c1 })
}

/// Subtracts `delta` at `(i, j)` and re-verifies all four checksums.
///
/// Returns [`EventKind::DetectedUncorrectable`] when the re-check fails.
pub fn correct<T: Real>(
    tile: &mut Mat<T>,
    i: usize,
    j: usize,
    delta: f64,
    sums: &ChecksumSet,
    tau: f64,
) -> EventKind {
    tile[(i, j)] = T::from_f64(tile[(i, j)].as_f64() - delta);
    if sums.verify(tile, tau) {
        EventKind::DetectedCorrected
    } else {
        EventKind::DetectedUncorrectable
    }
}

/// [`checked_gemm_at`] for iteration 0.
pub fn checked_gemm<T: Real>(
    a: &Mat<T>,
    b: &Mat<T>,
    cfg: &TileConfig,
    thr: Threshold,
    hook: &dyn FaultHook,
) -> Result<(Mat<T>, DetectionReport)> {
    checked_gemm_at(a, b, cfg, thr, hook, 0)
}

/// `A * B^T` verified after every `block.k` interval of every tile; a single
/// error per tile and interval is located and corrected before the tile is
/// published.
pub fn checked_gemm_at<T: Real>(
    a: &Mat<T>,
    b: &Mat<T>,
    cfg: &TileConfig,
    thr: Threshold,
    hook: &dyn FaultHook,
    iteration: usize,
) -> Result<(Mat<T>, DetectionReport)> {
    run_store(&Job {
        a,
        b,
        cfg,
        threshold: Some(thr),
        dmr_epilogue: false,
        hook,
        iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultsim::{
        ElementFlip, FaultInjector, FaultSchedule, FaultSite, NoFaults, ScheduledFault,
    };
    use crate::gemm::{gemm_tiled, Dims3};
    use crate::matrix::{mat_random, Distribution};
    use proptest::prelude::*;

    #[test]
    fn encode_cols_example() {
        let x = Mat::<f64>::from_f64_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(encode_cols(&x), (vec![4.0, 6.0], vec![7.0, 10.0]));
        assert_eq!(encode_rows(&x), (vec![3.0, 7.0], vec![5.0, 11.0]));
    }

    #[test]
    fn encode_degenerate_tiles() {
        let z = Mat::<f32>::zeros(3, 4);
        assert_eq!(encode_cols(&z), (vec![0.0; 4], vec![0.0; 4]));
        assert_eq!(encode_rows(&z), (vec![0.0; 3], vec![0.0; 3]));
        let row = Mat::<f32>::from_f64_rows(&[[1.5, -2.0, 3.0]]).unwrap();
        let (c1, c2) = encode_cols(&row);
        assert_eq!(c1, c2);
        assert_eq!(c1, vec![1.5, -2.0, 3.0]);
        let col = Mat::<f32>::from_f64_rows(&[[1.5], [-2.0]]).unwrap();
        let (r1, r2) = encode_rows(&col);
        assert_eq!(r1, r2);
    }

    #[test]
    fn locate_examples() {
        assert_eq!(
            locate(5.0, 15.0, 5.0, 35.0, 1e-3, (8, 8)),
            Some(Located {
                i: 6,
                j: 2,
                delta: 5.0
            })
        );
        assert_eq!(locate(1e-9, 0.0, 4.0, 8.0, 1e-3, (8, 8)), None);
        assert_eq!(
            locate(1.0, 1.0, 1.0, 1.0, 1e-3, (8, 8)),
            Some(Located {
                i: 0,
                j: 0,
                delta: 1.0
            })
        );
        assert_eq!(locate(5.0, 17.0, 5.0, 35.0, 1e-3, (8, 8)), None);
        assert_eq!(locate(5.0, 15.0, 5.0, 50.0, 1e-3, (8, 8)), None);
        assert_eq!(locate(f64::NAN, 15.0, 5.0, 35.0, 1e-3, (8, 8)), None);
    }

    #[test]
    fn locate_recovers_every_position() {
        let (m, n) = (8, 8);
        for i in 0..m {
            for j in 0..n {
                for delta in [-3.25, 1e-2, 7.0, 1e6] {
                    let got = locate(
                        delta,
                        (j + 1) as f64 * delta,
                        delta,
                        (i + 1) as f64 * delta,
                        1e-3,
                        (m, n),
                    );
                    assert_eq!(got, Some(Located { i, j, delta }));
                }
            }
        }
    }

    fn corrupted_tile() -> (Mat<f64>, Mat<f64>, ChecksumSet) {
        let a: Mat<f64> = mat_random(8, 5, 1, Distribution::Uniform).unwrap();
        let b: Mat<f64> = mat_random(4, 5, 2, Distribution::Uniform).unwrap();
        let c = gemm_tiled(&a, &b, &TileConfig::default_for(Precision::Double)).unwrap();
        let sums = ChecksumSet::encode(&a, &b).unwrap();
        (c, a, sums)
    }

    #[test]
    fn correct_restores_known_corruption() {
        let (clean, _, sums) = corrupted_tile();
        let mut tile = clean.clone();
        tile[(6, 2)] += 5.0;
        let tau = 1e-9;
        let d = sums.divergence(&tile);
        let loc = locate(d.row1[6], d.row2[6], d.col1[2], d.col2[2], tau, (8, 4)).unwrap();
        assert_eq!((loc.i, loc.j), (6, 2));
        assert!((loc.delta - 5.0).abs() < 1e-9);
        assert_eq!(
            correct(&mut tile, loc.i, loc.j, loc.delta, &sums, tau),
            EventKind::DetectedCorrected
        );
        assert!(tile.max_abs_diff(&clean) <= tau);
    }

    #[test]
    fn correction_at_wrong_place_escalates() {
        let (clean, _, sums) = corrupted_tile();
        let mut tile = clean.clone();
        tile[(6, 2)] += 5.0;
        assert_eq!(
            correct(&mut tile, 1, 1, 5.0, &sums, 1e-9),
            EventKind::DetectedUncorrectable
        );
    }

    #[test]
    fn checksum_linearity_holds() {
        for seed in 0..100u64 {
            let a: Mat<f32> =
                mat_random(1 + (seed as usize % 40), 17, seed, Distribution::Uniform).unwrap();
            let b: Mat<f32> = mat_random(
                1 + (seed as usize % 23),
                17,
                seed + 1000,
                Distribution::Uniform,
            )
            .unwrap();
            let c = gemm_tiled(&a, &b, &TileConfig::default_for(Precision::Single)).unwrap();
            let sums = ChecksumSet::encode(&a, &b).unwrap();
            let tau = Threshold::default_for(Precision::Single).tau(1.0, 17);
            assert!(sums.verify(&c, tau), "seed {seed}");
        }
    }

    fn single(site_tile: (usize, usize), elem: (usize, usize), bit: u32) -> FaultInjector {
        FaultInjector::new(&FaultSchedule {
            entries: vec![ScheduledFault {
                site: FaultSite::GemmAccumulator,
                iteration: 0,
                tile: site_tile,
                elem,
                bit,
            }],
        })
    }

    #[test]
    fn fault_free_checked_gemm_is_bit_identical() {
        let a: Mat<f32> = mat_random(128, 64, 5, Distribution::Uniform).unwrap();
        let b: Mat<f32> = mat_random(32, 64, 6, Distribution::Uniform).unwrap();
        let cfg = TileConfig::default_for(Precision::Single);
        let (c, rep) = checked_gemm(
            &a,
            &b,
            &cfg,
            Threshold::default_for(Precision::Single),
            &NoFaults,
        )
        .unwrap();
        assert!(c.bit_eq(&gemm_tiled(&a, &b, &cfg).unwrap()));
        assert!(rep.is_clean());
    }

    #[test]
    fn sign_flip_is_corrected() {
        let a: Mat<f32> = mat_random(128, 64, 5, Distribution::Uniform).unwrap();
        let b: Mat<f32> = mat_random(32, 64, 6, Distribution::Uniform).unwrap();
        let cfg = TileConfig::default_for(Precision::Single);
        let thr = Threshold::default_for(Precision::Single);
        let clean = gemm_tiled(&a, &b, &cfg).unwrap();
        let hook = single((2, 0), (5, 9), 31);
        let (c, rep) = checked_gemm(&a, &b, &cfg, thr, &hook).unwrap();
        assert_eq!(
            (rep.detections, rep.corrections, rep.false_alarms),
            (1, 1, 0)
        );
        assert_eq!(rep.events[0].loc, Some((5, 9)));
        assert!(c.max_abs_diff(&clean) <= thr.tau(1.0, 64));
        assert_eq!(hook.injected_count(), 1);
    }

    struct DoubleFlip;
    impl FaultHook for DoubleFlip {
        fn fault_at(&self, _: FaultSite, _: usize, _: (usize, usize)) -> Option<ElementFlip> {
            None
        }
        fn faults_at(&self, _: FaultSite, _: usize, tile: (usize, usize)) -> Vec<ElementFlip> {
            if tile == (0, 0) {
                vec![
                    ElementFlip {
                        elem: (1, 2),
                        bit: 30,
                    },
                    ElementFlip {
                        elem: (4, 7),
                        bit: 31,
                    },
                ]
            } else {
                Vec::new()
            }
        }
    }

    #[test]
    fn two_flips_in_one_tile_are_uncorrectable() {
        let a: Mat<f32> = mat_random(64, 16, 5, Distribution::Uniform).unwrap();
        let b: Mat<f32> = mat_random(16, 16, 6, Distribution::Uniform).unwrap();
        let cfg = TileConfig::default_for(Precision::Single);
        let (_, rep) = checked_gemm(
            &a,
            &b,
            &cfg,
            Threshold::default_for(Precision::Single),
            &DoubleFlip,
        )
        .unwrap();
        assert!(rep.has_uncorrectable());
        assert_eq!(rep.corrections, 0);
    }

    #[test]
    fn nan_producing_flip_is_detected_and_repaired() {
        let a = Mat::<f32>::from_vec(8, 4, vec![0.75; 32]).unwrap();
        let b = Mat::<f32>::from_vec(8, 4, vec![0.5; 32]).unwrap();
        let cfg = TileConfig::new(
            Dims3::new(8, 8, 4),
            Dims3::new(8, 8, 4),
            Dims3::new(2, 2, 4),
        )
        .unwrap();
        let clean = gemm_tiled(&a, &b, &cfg).unwrap();
        let mut hook = None;
        for bit in 23..31 {
            let v = crate::faultsim::flip_bit(clean[(3, 3)], bit);
            if v.is_nan() || v.is_infinite() {
                hook = Some(single((0, 0), (3, 3), bit));
            }
        }
        let hook = hook.expect("some exponent bit overflows");
        let (c, rep) = checked_gemm(
            &a,
            &b,
            &cfg,
            Threshold::default_for(Precision::Single),
            &hook,
        )
        .unwrap();
        assert_eq!(rep.corrections, 1);
        assert!(c.is_finite());
        assert!(rep.events[0].delta.is_finite());
        assert!(c.max_abs_diff(&clean) <= 1e-4 * 4.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn any_large_single_error_is_corrected(
            seed in any::<u64>(), m in 1usize..70, n in 1usize..40, k in 1usize..50,
            ei in 0usize..64, ej in 0usize..64, bit in 23u32..32
        ) {
            let a: Mat<f32> = mat_random(m, k, seed, Distribution::Uniform).unwrap();
            let b: Mat<f32> = mat_random(n, k, seed ^ 9, Distribution::Uniform).unwrap();
            let cfg = TileConfig::new(Dims3::new(32, 32, 8), Dims3::new(16, 16, 8), Dims3::new(4, 4, 4)).unwrap();
            let thr = Threshold::default_for(Precision::Single);
            let clean = gemm_tiled(&a, &b, &cfg).unwrap();
            let hook = single((0, 0), (ei, ej), bit);
            let (c, rep) = checked_gemm(&a, &b, &cfg, thr, &hook).unwrap();
            let inj = hook.injections()[0];
            let tau = thr.tau(1.0, k);
            prop_assert!(!rep.has_uncorrectable());
            prop_assert_eq!(rep.false_alarms, 0);
            if rep.detections == 0 {
                prop_assert!(inj.delta.abs() <= tau);
            }
            prop_assert!(c.max_abs_diff(&clean) <= tau);
        }

        #[test]
        fn no_false_alarms_double(seed in any::<u64>(), m in 1usize..100, n in 1usize..60, k in 1usize..200) {
            let a: Mat<f64> = mat_random(m, k, seed, Distribution::Uniform).unwrap();
            let b: Mat<f64> = mat_random(n, k, seed ^ 5, Distribution::Uniform).unwrap();
            let cfg = TileConfig::default_for(Precision::Double);
            let (c, rep) = checked_gemm(&a, &b, &cfg, Threshold::default_for(Precision::Double), &NoFaults).unwrap();
            prop_assert!(rep.is_clean());
            prop_assert!(c.bit_eq(&gemm_tiled(&a, &b, &cfg).unwrap()));
        }
    }
}
