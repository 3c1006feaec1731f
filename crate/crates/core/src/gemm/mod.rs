//! Cache-blocked `A * B^T` with a three-level tile hierarchy.
//!
//! Block tiles are the parallel work unit, sub tiles the register-blocking
//! loop and micro tiles the innermost unrolled kernel. The engine optionally
//! fuses a per-row argmin over `||y||^2 - 2 x.y` into the tile loop so the
//! distance matrix is never materialised.

mod engine;
mod kernel;

use std::fmt;
use std::str::FromStr;

pub(crate) use engine::{run_argmin, run_store, Job};

use crate::error::{Error, Result};
use crate::faultsim::NoFaults;
use crate::matrix::{Mat, NormVector, Precision, Real};

/// An `(m, n, k)` extent in elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dims3 {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl Dims3 {
    pub const fn new(m: usize, n: usize, k: usize) -> Self {
        Dims3 { m, n, k }
    }
}

impl fmt::Display for Dims3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.m, self.n, self.k)
    }
}

/// Block / sub / micro tile sizes.
///
/// `block.k` is the verification interval of the checked engine. `micro.k`
/// is carried for parameter-space compatibility; the kernel always steps `k`
/// by one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileConfig {
    pub block: Dims3,
    pub sub: Dims3,
    pub micro: Dims3,
}

impl TileConfig {
    pub fn new(block: Dims3, sub: Dims3, micro: Dims3) -> Result<Self> {
        let cfg = TileConfig { block, sub, micro };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.block, self.sub, self.micro];
        for d in all {
            for v in [d.m, d.n, d.k] {
                if !v.is_power_of_two() {
                    return Err(Error::invalid(format!(
                        "tile size {v} in {self} is not a power of two"
                    )));
                }
            }
        }
        if self.sub.k != self.block.k {
            return Err(Error::invalid(format!(
                "sub.k ({}) must equal block.k ({})",
                self.sub.k, self.block.k
            )));
        }
        if !self.block.m.is_multiple_of(self.sub.m) || !self.block.n.is_multiple_of(self.sub.n) {
            return Err(Error::invalid(format!(
                "sub tile does not divide block tile in {self}"
            )));
        }
        if !self.sub.m.is_multiple_of(self.micro.m) || !self.sub.n.is_multiple_of(self.micro.n) {
            return Err(Error::invalid(format!(
                "micro tile does not divide sub tile in {self}"
            )));
        }
        let ratio = (self.sub.m * self.sub.n) / (self.micro.m * self.micro.n);
        if ratio != 8 && ratio != 16 {
            return Err(Error::invalid(format!(
                "sub/micro area ratio is {ratio}, must be 8 or 16 in {self}"
            )));
        }
        Ok(())
    }

    /// The reference configuration for each precision.
    pub fn default_for(precision: Precision) -> Self {
        match precision {
            Precision::Single => TileConfig {
                block: Dims3::new(32, 256, 16),
                sub: Dims3::new(32, 64, 16),
                micro: Self::default_micro(precision),
            },
            Precision::Double => TileConfig {
                block: Dims3::new(64, 64, 16),
                sub: Dims3::new(32, 32, 16),
                micro: Self::default_micro(precision),
            },
        }
    }

    pub fn default_micro(precision: Precision) -> Dims3 {
        match precision {
            Precision::Single => Dims3::new(16, 8, 4),
            Precision::Double => Dims3::new(8, 8, 4),
        }
    }

    /// Parses `bm,bn,bk,sm,sn,sk`; the micro tile takes the precision default.
    pub fn parse(text: &str, precision: Precision) -> Result<Self> {
        let v: Vec<usize> = text
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid(format!("tile '{text}' is not six integers")))?;
        if v.len() != 6 {
            return Err(Error::invalid(format!(
                "tile '{text}' needs bm,bn,bk,sm,sn,sk"
            )));
        }
        TileConfig::new(
            Dims3::new(v[0], v[1], v[2]),
            Dims3::new(v[3], v[4], v[5]),
            Self::default_micro(precision),
        )
    }

    /// Elements of one block tile of both operands.
    pub fn block_footprint(&self) -> usize {
        self.block.m * self.block.k + self.block.k * self.block.n
    }
}

impl fmt::Display for TileConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block{} sub{} micro{}", self.block, self.sub, self.micro)
    }
}

impl FromStr for TileConfig {
    type Err = Error;
    /// Accepts the six-integer form with single-precision micro defaults.
    fn from_str(s: &str) -> Result<Self> {
        TileConfig::parse(s, Precision::Single)
    }
}

/// Nearest-centroid result of [`fused_assign`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssignResult<T> {
    pub assignments: Vec<usize>,
    /// `||y_a||^2 - 2 x.y_a` for the chosen centroid `a`; the per-row
    /// constant `||x||^2` is omitted.
    pub min_dists: Vec<T>,
}

impl<T: Real> AssignResult<T> {
    /// True squared distances, `min_dists[i] + ||x_i||^2`, in `f64`.
    pub fn sq_dists(&self, x_norms: &NormVector<T>) -> Vec<f64> {
        self.min_dists
            .iter()
            .zip(&x_norms.values)
            .map(|(d, n)| d.as_f64() + n.as_f64())
            .collect()
    }
}

pub(crate) fn check_inner<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::invalid(format!(
            "inner dimensions differ: {}x{} against {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// `A * B^T` for `A` of shape `M x K` and `B` of shape `N x K`.
///
/// Each output element is accumulated in ascending `k`, so the result is
/// bitwise independent of the tile configuration and thread count.
pub fn gemm_tiled<T: Real>(a: &Mat<T>, b: &Mat<T>, cfg: &TileConfig) -> Result<Mat<T>> {
    let job = Job {
        a,
        b,
        cfg,
        threshold: None,
        dmr_epilogue: false,
        hook: &NoFaults,
        iteration: 0,
    };
    Ok(run_store(&job)?.0)
}

/// Assigns each row of `x` to the centroid row of `y` minimising
/// `y_norms[j] - 2 x.y_j`, ties to the lowest index.
pub fn fused_assign<T: Real>(
    x: &Mat<T>,
    y: &Mat<T>,
    y_norms: &NormVector<T>,
    cfg: &TileConfig,
) -> Result<AssignResult<T>> {
    let job = Job {
        a: x,
        b: y,
        cfg,
        threshold: None,
        dmr_epilogue: false,
        hook: &NoFaults,
        iteration: 0,
    };
    Ok(run_argmin(&job, &y_norms.values)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{mat_random, row_sq_norms, Distribution};
    use proptest::prelude::*;

    fn naive<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
        let mut out = Mat::zeros(a.rows(), b.rows());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let mut s = T::zero();
                for k in 0..a.cols() {
                    s = s + a[(i, k)] * b[(j, k)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn small_cfg() -> TileConfig {
        TileConfig::new(
            Dims3::new(16, 16, 4),
            Dims3::new(8, 16, 4),
            Dims3::new(4, 4, 4),
        )
        .unwrap()
    }

    #[test]
    fn identity_times_b_transpose() {
        let a = Mat::<f32>::identity(2);
        let b = Mat::<f32>::from_f64_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let c = gemm_tiled(&a, &b, &TileConfig::default_for(Precision::Single)).unwrap();
        assert_eq!(c.as_slice(), &[5.0, 7.0, 6.0, 8.0]);
    }

    #[test]
    fn random_single_matches_naive() {
        let a: Mat<f32> = mat_random(64, 32, 1, Distribution::Uniform).unwrap();
        let b: Mat<f32> = mat_random(16, 32, 2, Distribution::Uniform).unwrap();
        let c = gemm_tiled(&a, &b, &TileConfig::default_for(Precision::Single)).unwrap();
        let o = naive(&a.cast::<f64>(), &b.cast::<f64>());
        assert!(c.cast::<f64>().max_abs_diff(&o) <= 1e-4 * o.max_abs());
        assert!(c.bit_eq(&naive(&a, &b)));
    }

    #[test]
    fn rule_violations_rejected() {
        let bad_k = TileConfig::new(
            Dims3::new(32, 256, 16),
            Dims3::new(32, 64, 8),
            Dims3::new(16, 8, 4),
        );
        assert!(matches!(bad_k, Err(Error::InvalidArgument(_))));
        let not_pow2 = TileConfig::new(
            Dims3::new(48, 256, 16),
            Dims3::new(16, 64, 16),
            Dims3::new(16, 8, 4),
        );
        assert!(not_pow2.is_err());
        let ratio = TileConfig::new(
            Dims3::new(64, 64, 16),
            Dims3::new(64, 64, 16),
            Dims3::new(16, 8, 4),
        );
        assert!(ratio.is_err());
        TileConfig::default_for(Precision::Single)
            .validate()
            .unwrap();
        TileConfig::default_for(Precision::Double)
            .validate()
            .unwrap();
    }

    #[test]
    fn mismatched_inner_dims_rejected() {
        let a = Mat::<f64>::zeros(3, 4);
        let b = Mat::<f64>::zeros(3, 5);
        assert!(gemm_tiled(&a, &b, &TileConfig::default_for(Precision::Double)).is_err());
    }

    #[test]
    fn two_points_two_centroids() {
        let x = Mat::<f32>::from_f64_rows(&[[0.0, 0.0], [10.0, 10.0]]).unwrap();
        let r = fused_assign(&x, &x, &row_sq_norms(&x), &small_cfg()).unwrap();
        assert_eq!(r.assignments, vec![0, 1]);
    }

    #[test]
    fn duplicate_centroids_pick_lowest() {
        let x = Mat::<f64>::from_f64_rows(&[[1.0, 0.0]]).unwrap();
        let y = Mat::<f64>::from_f64_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let r = fused_assign(
            &x,
            &y,
            &row_sq_norms(&y),
            &TileConfig::default_for(Precision::Double),
        )
        .unwrap();
        assert_eq!(r.assignments, vec![0]);
        assert_eq!(r.sq_dists(&row_sq_norms(&x)), vec![0.0]);
    }

    #[test]
    fn ties_across_column_blocks_pick_lowest() {
        let x = Mat::<f32>::from_f64_rows(&[[0.5, 0.5]]).unwrap();
        let y = Mat::<f32>::from_f64_rows(&vec![[0.5, 0.5]; 40]).unwrap();
        let r = fused_assign(&x, &y, &row_sq_norms(&y), &small_cfg()).unwrap();
        assert_eq!(r.assignments, vec![0]);
    }

    #[test]
    fn output_independent_of_thread_count() {
        let a: Mat<f32> = mat_random(300, 19, 3, Distribution::Uniform).unwrap();
        let b: Mat<f32> = mat_random(45, 19, 4, Distribution::Uniform).unwrap();
        let cfg = small_cfg();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| gemm_tiled(&a, &b, &cfg).unwrap())
        };
        assert!(run(1).bit_eq(&run(4)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fused_assign_is_argmin_of_full_product(
            m in 1usize..90, n in 1usize..20, k in 1usize..70, seed in any::<u64>(), tile in 0usize..3
        ) {
            let x: Mat<f32> = mat_random(m, n, seed, Distribution::Uniform).unwrap();
            let y: Mat<f32> = mat_random(k, n, seed ^ 1, Distribution::Uniform).unwrap();
            let cfg = [small_cfg(), TileConfig::default_for(Precision::Single),
                TileConfig::new(Dims3::new(64, 32, 8), Dims3::new(32, 32, 8), Dims3::new(16, 8, 4)).unwrap()][tile];
            let yn = row_sq_norms(&y);
            let r = fused_assign(&x, &y, &yn, &cfg).unwrap();
            let g = gemm_tiled(&x, &y, &cfg).unwrap();
            for i in 0..m {
                let mut best = (f32::INFINITY, 0);
                for j in 0..k {
                    let d = yn.values[j] - 2.0 * g[(i, j)];
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                prop_assert_eq!(r.assignments[i], best.1);
                prop_assert_eq!(r.min_dists[i].to_bits(), best.0.to_bits());
            }
        }

        #[test]
        fn dropping_row_norm_keeps_argmin(m in 1usize..40, k in 1usize..30, seed in any::<u64>()) {
            let x: Mat<f64> = mat_random(m, 6, seed, Distribution::Uniform).unwrap();
            let y: Mat<f64> = mat_random(k, 6, seed ^ 7, Distribution::Uniform).unwrap();
            let r = fused_assign(&x, &y, &row_sq_norms(&y), &TileConfig::default_for(Precision::Double)).unwrap();
            for i in 0..m {
                let full: Vec<f64> = (0..k)
                    .map(|j| (0..6).map(|d| (x[(i, d)] - y[(j, d)]).powi(2)).sum())
                    .collect();
                let a = r.assignments[i];
                prop_assert!(full.iter().all(|&v| full[a] <= v + 1e-12));
            }
        }

        #[test]
        fn gemm_is_config_independent(m in 1usize..70, n in 1usize..40, k in 1usize..50, seed in any::<u64>()) {
            let a: Mat<f32> = mat_random(m, n, seed, Distribution::Uniform).unwrap();
            let b: Mat<f32> = mat_random(k, n, seed ^ 3, Distribution::Uniform).unwrap();
            let c1 = gemm_tiled(&a, &b, &small_cfg()).unwrap();
            let c2 = gemm_tiled(&a, &b, &TileConfig::default_for(Precision::Single)).unwrap();
            prop_assert!(c1.bit_eq(&c2));
            prop_assert!(c1.bit_eq(&naive(&a, &b)));
        }
    }
}
