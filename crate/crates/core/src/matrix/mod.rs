//! Dense row-major matrices, synthetic data, row norms and file I/O.
//!
//! [`Mat`] is generic over the element type so that single precision is
//! genuine `f32` storage and arithmetic. [`DynMat`] carries the precision at
//! runtime for file I/O and the command line.

mod gen;
mod io;
mod real;

pub use gen::{gaussian_mixture, mat_random, mat_random_dyn, Distribution, Mixture};
pub use io::{
    decode_binary, encode_binary, encode_csv, mat_load, mat_load_csv, mat_store, parse_csv,
    store_typed, FileFormat, FTKM_MAGIC, FTKM_VERSION, HEADER_LEN,
};
pub use real::{Precision, Real};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::invalid(format!("dimension overflow {rows}x{cols}")))?;
        if data.len() != len {
            return Err(Error::invalid(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Mat::from_vec(rows.len(), cols, data)
    }

    /// Like [`Mat::from_rows`] but converts from `f64` literals.
    pub fn from_f64_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let conv: Vec<Vec<T>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&v| T::from_f64(v)).collect())
            .collect();
        Mat::from_rows(&conv)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies rows `r0..r1`, columns `c0..c1` into a new matrix.
    pub fn submatrix(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Mat<T> {
        let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for i in r0..r1 {
            data.extend_from_slice(&self.row(i)[c0..c1]);
        }
        Mat {
            rows: r1 - r0,
            cols: c1 - c0,
            data,
        }
    }

    /// Largest absolute elementwise difference, evaluated in `f64`.
    pub fn max_abs_diff(&self, other: &Mat<T>) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of every element.
    pub fn bit_eq(&self, other: &Mat<T>) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.data.iter().zip(&other.data).all(|(a, b)| a.bit_eq(*b))
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> std::fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Mat<{}> {}x{} [", T::PRECISION, self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// Squared Euclidean norms of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct NormVector<T> {
    pub values: Vec<T>,
}

impl<T: Real> NormVector<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `values[i] = sum_j X[i,j]^2`, summed left to right within each row.
pub fn row_sq_norms<T: Real>(x: &Mat<T>) -> NormVector<T> {
    let values = (0..x.rows())
        .map(|i| x.row(i).iter().fold(T::zero(), |acc, &v| acc + v * v))
        .collect();
    NormVector { values }
}

/// A matrix whose precision is only known at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum DynMat {
    Single(Mat<f32>),
    Double(Mat<f64>),
}

impl DynMat {
    pub fn precision(&self) -> Precision {
        match self {
            DynMat::Single(_) => Precision::Single,
            DynMat::Double(_) => Precision::Double,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            DynMat::Single(m) => m.rows(),
            DynMat::Double(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            DynMat::Single(m) => m.cols(),
            DynMat::Double(m) => m.cols(),
        }
    }
}

impl From<Mat<f32>> for DynMat {
    fn from(m: Mat<f32>) -> Self {
        DynMat::Single(m)
    }
}

impl From<Mat<f64>> for DynMat {
    fn from(m: Mat<f64>) -> Self {
        DynMat::Double(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Mat::<f32>::from_vec(2, 2, vec![1.0; 3]).is_err());
        let m = Mat::<f32>::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(Mat::<f64>::from_rows(&rows).is_err());
    }

    #[test]
    fn sq_norm_of_three_four() {
        let x = Mat::<f32>::from_f64_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(row_sq_norms(&x).values, vec![25.0]);
    }

    #[test]
    fn sq_norms_of_zero_matrix() {
        let x = Mat::<f64>::zeros(4, 7);
        assert_eq!(row_sq_norms(&x).values, vec![0.0; 4]);
    }

    #[test]
    fn sq_norms_match_naive_double_loop() {
        let x: Mat<f32> = mat_random(16, 5, 11, Distribution::Uniform).unwrap();
        let norms = row_sq_norms(&x);
        for i in 0..16 {
            let mut s = 0.0f32;
            for j in 0..5 {
                s += x[(i, j)] * x[(i, j)];
            }
            assert_eq!(norms.values[i].to_bits(), s.to_bits());
        }
    }

    #[test]
    fn submatrix_copies_block() {
        let m = Mat::<f64>::from_f64_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let s = m.submatrix(0, 2, 1, 3);
        assert_eq!(s.as_slice(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
