//! Self-checks used by `ftkm verify`: assignment against a brute-force
//! oracle, a single-flip sweep over a small tile, and false-alarm counting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abft::{checked_gemm, Threshold};
use crate::error::Result;
use crate::faultsim::{FaultInjector, FaultSchedule, FaultSite, NoFaults, ScheduledFault};
use crate::gemm::{fused_assign, gemm_tiled, Dims3, TileConfig};
use crate::matrix::{mat_random, row_sq_norms, Distribution, Mat, Precision, Real};

/// Relative gap below which two candidate centroids count as tied.
pub const NEAR_TIE_REL: f64 = 1e-5;

/// Nearest centroid per row in `f64`, ties to the lower index, with the
/// squared distance to every centroid.
pub fn brute_force_argmin<T: Real>(x: &Mat<T>, y: &Mat<T>) -> Vec<(usize, Vec<f64>)> {
    (0..x.rows())
        .map(|i| {
            let d: Vec<f64> = (0..y.rows())
                .map(|j| {
                    x.row(i)
                        .iter()
                        .zip(y.row(j))
                        .map(|(a, b)| {
                            let t = a.as_f64() - b.as_f64();
                            t * t
                        })
                        .sum()
                })
                .collect();
            let best = (0..d.len()).fold(0, |b, j| if d[j] < d[b] { j } else { b });
            (best, d)
        })
        .collect()
}

/// Whether choosing `pick` is within [`NEAR_TIE_REL`] of the best distance.
pub fn acceptable_pick(dists: &[f64], best: usize, pick: usize) -> bool {
    let (db, dp) = (dists[best], dists[pick]);
    pick == best || dp - db <= NEAR_TIE_REL * db.abs().max(dp.abs())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleSummary {
    pub instances: usize,
    pub rows: usize,
    /// Rows assigned differently from the oracle but within the tie gap.
    pub near_ties: usize,
    pub mismatches: usize,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Random instance sizes, bounded by `max` (`M`, `N`, `K`).
pub fn random_shape(rng: &mut impl Rng, max: (usize, usize, usize)) -> (usize, usize, usize) {
    let k = rng.random_range(1..=max.2);
    (
        rng.random_range(k..=max.0.max(k)),
        rng.random_range(1..=max.1),
        k,
    )
}

/// Compares [`fused_assign`] with the oracle on `instances` random problems,
/// alternating precision and cycling through tile configurations.
pub fn oracle_assign_check(
    instances: usize,
    max: (usize, usize, usize),
    seed: u64,
) -> Result<OracleSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = [
        TileConfig::default_for(Precision::Single),
        TileConfig::default_for(Precision::Double),
        TileConfig::new(
            Dims3::new(64, 32, 8),
            Dims3::new(32, 32, 8),
            Dims3::new(8, 8, 4),
        )?,
    ];
    let mut sum = OracleSummary::default();
    for t in 0..instances {
        let (m, n, k) = random_shape(&mut rng, max);
        let s: u64 = rng.random();
        let cfg = &configs[t % configs.len()];
        let r = if t % 2 == 0 {
            oracle_one::<f32>(m, n, k, s, cfg)?
        } else {
            oracle_one::<f64>(m, n, k, s, cfg)?
        };
        sum.instances += 1;
        sum.rows += m;
        sum.near_ties += r.0;
        sum.mismatches += r.1;
    }
    Ok(sum)
}

fn oracle_one<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    seed: u64,
    cfg: &TileConfig,
) -> Result<(usize, usize)> {
    let x: Mat<T> = mat_random(m, n, seed, Distribution::Uniform)?;
    let y: Mat<T> = mat_random(k, n, seed.wrapping_add(1), Distribution::Uniform)?;
    let got = fused_assign(&x, &y, &row_sq_norms(&y), cfg)?;
    let mut ties = 0;
    let mut bad = 0;
    for (i, (best, d)) in brute_force_argmin(&x, &y).iter().enumerate() {
        let pick = got.assignments[i];
        if pick != *best {
            if acceptable_pick(d, *best, pick) {
                ties += 1;
            } else {
                bad += 1;
            }
        }
    }
    Ok((ties, bad))
}

/// Result of one injected flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipOutcome {
    /// Detected and repaired; remaining error within the threshold.
    Corrected,
    /// Not flagged, and the induced error is within the threshold.
    SubThreshold,
    /// Flagged but the remaining error exceeds the threshold.
    Unrecovered,
    /// Not flagged and the error exceeds the threshold.
    Silent,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSummary {
    pub cases: usize,
    pub corrected: usize,
    pub sub_threshold: usize,
    pub unrecovered: usize,
    pub silent: usize,
    /// The tolerance `delta * scale` outcomes were judged against.
    pub tau: f64,
    /// Largest remaining error over all cases.
    pub worst_error: f64,
}

impl SweepSummary {
    pub fn passed(&self) -> bool {
        self.unrecovered == 0 && self.silent == 0
    }
}

/// The sweep tile geometry: one `8 x 8` output tile with a 16-long inner
/// dimension in a single verification interval.
pub fn sweep_config() -> TileConfig {
    TileConfig {
        block: Dims3::new(8, 8, 16),
        sub: Dims3::new(8, 8, 16),
        micro: Dims3::new(2, 4, 4),
    }
}

/// Flips every listed bit at every position of an `8 x 8` single-precision
/// tile, one flip per run.
pub fn sweep_tile(bits: &[u32], seed: u64) -> Result<SweepSummary> {
    let cfg = sweep_config();
    let (m, n, kd) = (cfg.block.m, cfg.block.n, cfg.block.k);
    let signed = |rows, s| -> Result<Mat<f32>> {
        let u: Mat<f32> = mat_random(rows, kd, s, Distribution::Uniform)?;
        Mat::from_vec(
            rows,
            kd,
            u.as_slice().iter().map(|v| 2.0 * v - 1.0).collect(),
        )
    };
    let a = signed(m, seed)?;
    let b = signed(n, seed ^ 0xabcd)?;
    let thr = Threshold::default_for(Precision::Single);
    let pmax = a.max_abs() * b.max_abs();
    let tau = thr.tau(pmax, kd);
    let clean = gemm_tiled(&a, &b, &cfg)?;
    let mut s = SweepSummary {
        tau,
        ..SweepSummary::default()
    };
    for i in 0..m {
        for j in 0..n {
            for &bit in bits {
                let hook = FaultInjector::new(&FaultSchedule {
                    entries: vec![ScheduledFault {
                        site: FaultSite::GemmAccumulator,
                        iteration: 0,
                        tile: (0, 0),
                        elem: (i, j),
                        bit,
                    }],
                });
                let (out, report) = checked_gemm(&a, &b, &cfg, thr, &hook)?;
                let err = out
                    .as_slice()
                    .iter()
                    .zip(clean.as_slice())
                    .map(|(o, c)| {
                        let d = (o.as_f64() - c.as_f64()).abs();
                        if d.is_nan() {
                            f64::INFINITY
                        } else {
                            d
                        }
                    })
                    .fold(0.0, f64::max);
                s.cases += 1;
                s.worst_error = s.worst_error.max(err);
                let outcome = match (report.detections > 0, err <= tau) {
                    (true, true) if report.corrections > 0 => FlipOutcome::Corrected,
                    (_, true) => FlipOutcome::SubThreshold,
                    (true, false) => FlipOutcome::Unrecovered,
                    (false, false) => FlipOutcome::Silent,
                };
                match outcome {
                    FlipOutcome::Corrected => s.corrected += 1,
                    FlipOutcome::SubThreshold => s.sub_threshold += 1,
                    FlipOutcome::Unrecovered => s.unrecovered += 1,
                    FlipOutcome::Silent => s.silent += 1,
                }
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FalseAlarmSummary {
    pub runs: usize,
    pub detections: usize,
    /// Runs whose checked output differed bitwise from the unchecked one.
    pub output_mismatches: usize,
}

impl FalseAlarmSummary {
    pub fn passed(&self) -> bool {
        self.detections == 0 && self.output_mismatches == 0
    }
}

/// Fault-free checked products at the default threshold.
pub fn false_alarm_check(
    runs: usize,
    max: (usize, usize, usize),
    seed: u64,
) -> Result<FalseAlarmSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = FalseAlarmSummary::default();
    for t in 0..runs {
        let (m, n, k) = random_shape(&mut rng, max);
        let seed: u64 = rng.random();
        let (det, same) = if t % 2 == 0 {
            checked_vs_plain::<f32>(m, n, k, seed)?
        } else {
            checked_vs_plain::<f64>(m, n, k, seed)?
        };
        s.runs += 1;
        s.detections += det;
        s.output_mismatches += usize::from(!same);
    }
    Ok(s)
}

fn checked_vs_plain<T: Real>(m: usize, n: usize, k: usize, seed: u64) -> Result<(usize, bool)> {
    let a: Mat<T> = mat_random(m, n, seed, Distribution::Uniform)?;
    let b: Mat<T> = mat_random(k, n, seed ^ 1, Distribution::Uniform)?;
    let cfg = TileConfig::default_for(T::PRECISION);
    let (out, report) = checked_gemm(
        &a,
        &b,
        &cfg,
        Threshold::default_for(T::PRECISION),
        &NoFaults,
    )?;
    Ok((report.detections, out.bit_eq(&gemm_tiled(&a, &b, &cfg)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_on_two_points() {
        let x = Mat::<f64>::from_f64_rows(&[[0.0, 0.0], [10.0, 10.0]]).unwrap();
        let y = Mat::<f64>::from_f64_rows(&[[1.0, 1.0], [9.0, 9.0]]).unwrap();
        let r = brute_force_argmin(&x, &y);
        assert_eq!((r[0].0, r[1].0), (0, 1));
        assert_eq!(r[0].1, vec![2.0, 162.0]);
    }

    #[test]
    fn tie_gap_is_relative() {
        assert!(acceptable_pick(&[1.0, 1.0 + 1e-7], 0, 1));
        assert!(!acceptable_pick(&[1.0, 1.001], 0, 1));
        assert!(acceptable_pick(&[0.0, 0.0], 0, 1));
    }

    #[test]
    fn sign_and_exponent_sweep_passes() {
        let bits: Vec<u32> = std::iter::once(31)
            .chain(Precision::Single.exponent_bits())
            .collect();
        let s = sweep_tile(&bits, 1).unwrap();
        assert_eq!(s.cases, 64 * bits.len());
        assert!(s.passed(), "{s:?}");
        assert!(s.corrected > 0);
    }

    #[test]
    fn small_oracle_and_false_alarm_runs_pass() {
        assert!(oracle_assign_check(6, (300, 20, 40), 3).unwrap().passed());
        assert!(false_alarm_check(6, (300, 20, 40), 4).unwrap().passed());
    }
}
