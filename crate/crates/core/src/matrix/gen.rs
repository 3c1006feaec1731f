use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DynMat, Mat, Precision, Real};
use crate::error::{Error, Result};

/// Synthetic data distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Independent uniform `[0, 1)` entries.
    Uniform,
    /// `k` separated centers in the unit cube; samples are isotropic
    /// gaussians with standard deviation `spread` around a uniformly chosen
    /// center.
    GaussianMixture { k: usize, spread: f64 },
}

/// A gaussian-mixture sample together with its ground truth.
#[derive(Debug, Clone)]
pub struct Mixture<T: Real> {
    pub data: Mat<T>,
    pub labels: Vec<usize>,
    pub centers: Mat<f64>,
}

/// Deterministic random matrix for a fixed `seed`.
pub fn mat_random<T: Real>(
    rows: usize,
    cols: usize,
    seed: u64,
    dist: Distribution,
) -> Result<Mat<T>> {
    match dist {
        Distribution::Uniform => {
            check_dims(rows, cols)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..rows * cols)
                .map(|_| T::from_f64(rng.random::<f64>()))
                .collect();
            Mat::from_vec(rows, cols, data)
        }
        Distribution::GaussianMixture { k, spread } => {
            Ok(gaussian_mixture(rows, cols, k, spread, seed)?.data)
        }
    }
}

/// Runtime-precision variant of [`mat_random`].
pub fn mat_random_dyn(
    rows: usize,
    cols: usize,
    precision: Precision,
    seed: u64,
    dist: Distribution,
) -> Result<DynMat> {
    Ok(match precision {
        Precision::Single => DynMat::Single(mat_random(rows, cols, seed, dist)?),
        Precision::Double => DynMat::Double(mat_random(rows, cols, seed, dist)?),
    })
}

pub fn gaussian_mixture<T: Real>(
    rows: usize,
    cols: usize,
    k: usize,
    spread: f64,
    seed: u64,
) -> Result<Mixture<T>> {
    check_dims(rows, cols)?;
    if k == 0 {
        return Err(Error::invalid("gaussian mixture needs k >= 1"));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::invalid(format!("invalid spread {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = separated_centers(&mut rng, k, cols, 10.0 * spread);

    let mut labels = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let c = rng.random_range(0..k);
        labels.push(c);
        for d in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            data.push(T::from_f64(centers[(c, d)] + spread * z));
        }
    }
    Ok(Mixture {
        data: Mat::from_vec(rows, cols, data)?,
        labels,
        centers,
    })
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "matrix dimensions must be >= 1, got {rows}x{cols}"
        )));
    }
    rows.checked_mul(cols)
        .ok_or_else(|| Error::invalid(format!("dimension overflow {rows}x{cols}")))?;
    Ok(())
}

/// Rejection-samples centers in the unit cube so that every pair is at least
/// `min_sep` apart. When the cube is too crowded, the candidate with the
/// largest nearest-neighbour distance out of the attempts is kept.
fn separated_centers(rng: &mut ChaCha8Rng, k: usize, cols: usize, min_sep: f64) -> Mat<f64> {
    const ATTEMPTS: usize = 2000;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..ATTEMPTS {
            let cand: Vec<f64> = (0..cols).map(|_| rng.random::<f64>()).collect();
            let nearest = centers
                .iter()
                .map(|c| {
                    c.iter()
                        .zip(&cand)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if nearest >= min_sep {
                best = Some((nearest, cand));
                break;
            }
            if best.as_ref().is_none_or(|(d, _)| nearest > *d) {
                best = Some((nearest, cand));
            }
        }
        centers.push(best.expect("at least one attempt").1);
    }
    Mat::from_rows(&centers).expect("rectangular centers")
}
