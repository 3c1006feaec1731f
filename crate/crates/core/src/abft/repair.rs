use super::{locate, saturate};
use crate::matrix::Real;

/// A tile whose running `e1` row check failed.
pub(crate) struct TileCheck<'a, T> {
    pub acc: &'a mut [T],
    /// Element `(i, j)` lives at `i * stride.0 + j * stride.1`.
    pub stride: (usize, usize),
    pub m: usize,
    pub n: usize,
    /// The tile's `m` rows of `A`, row stride `kd`.
    pub a_rows: &'a [T],
    /// The tile's `n` rows of `B`, row stride `kd`.
    pub b_rows: &'a [T],
    pub kd: usize,
    /// Accumulated prefix `0..k_end` of the inner dimension.
    pub k_end: usize,
    pub tau: f64,
}

pub(crate) enum Repair {
    Corrected {
        loc: (usize, usize),
        delta: f64,
    },
    Uncorrectable {
        loc: Option<(usize, usize)>,
        delta: f64,
    },
}

struct Sums {
    c1: Vec<f64>,
    c2: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
}

impl<T: Real> TileCheck<'_, T> {
    fn at(&self, i: usize, j: usize) -> T {
        self.acc[i * self.stride.0 + j * self.stride.1]
    }

    fn actual(&self) -> Sums {
        let (m, n) = (self.m, self.n);
        let mut s = Sums {
            c1: vec![0.0; n],
            c2: vec![0.0; n],
            r1: vec![0.0; m],
            r2: vec![0.0; m],
        };
        for j in 0..n {
            for i in 0..m {
                let wi = (i + 1) as f64;
                let v = self.at(i, j).as_f64();
                s.c1[j] += v;
                s.c2[j] += wi * v;
                s.r1[i] += v;
                s.r2[i] += (j + 1) as f64 * v;
            }
        }
        s
    }

    /// Predicted sums over the accumulated prefix, from the clean inputs.
    fn predicted(&self) -> Sums {
        let (m, n, kd, ke) = (self.m, self.n, self.kd, self.k_end);
        let mut ca1 = vec![0.0; ke];
        let mut ca2 = vec![0.0; ke];
        for i in 0..m {
            for (k, v) in self.a_rows[i * kd..i * kd + ke].iter().enumerate() {
                ca1[k] += v.as_f64();
                ca2[k] += (i + 1) as f64 * v.as_f64();
            }
        }
        let mut rb1 = vec![0.0; ke];
        let mut rb2 = vec![0.0; ke];
        for j in 0..n {
            for (k, v) in self.b_rows[j * kd..j * kd + ke].iter().enumerate() {
                rb1[k] += v.as_f64();
                rb2[k] += (j + 1) as f64 * v.as_f64();
            }
        }
        let dot = |x: &[T], w: &[f64]| x.iter().zip(w).map(|(v, w)| v.as_f64() * w).sum::<f64>();
        Sums {
            c1: (0..n)
                .map(|j| dot(&self.b_rows[j * kd..j * kd + ke], &ca1))
                .collect(),
            c2: (0..n)
                .map(|j| dot(&self.b_rows[j * kd..j * kd + ke], &ca2))
                .collect(),
            r1: (0..m)
                .map(|i| dot(&self.a_rows[i * kd..i * kd + ke], &rb1))
                .collect(),
            r2: (0..m)
                .map(|i| dot(&self.a_rows[i * kd..i * kd + ke], &rb2))
                .collect(),
        }
    }
}

fn diff(a: &[f64], p: &[f64]) -> Vec<f64> {
    a.iter().zip(p).map(|(a, p)| a - p).collect()
}

fn violated(d: &[f64], tau: f64) -> Vec<usize> {
    (0..d.len())
        .filter(|&x| d[x].is_nan() || d[x].abs() > tau)
        .collect()
}

fn argmax_abs(d: &[f64]) -> usize {
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v.abs() };
    (0..d.len()).fold(0, |best, x| if key(d[x]) > key(d[best]) { x } else { best })
}

/// Locates and repairs a single corrupted element.
///
/// The element is restored from the predicted column checksum minus the rest
/// of its column, which stays exact even when the corrupted value is huge or
/// not finite. All four checksums are then re-verified.
pub(crate) fn repair_tile<T: Real>(t: TileCheck<'_, T>) -> Repair {
    let tau = t.tau;
    let pred = t.predicted();
    let act = t.actual();
    let dc1 = diff(&act.c1, &pred.c1);
    let dc2 = diff(&act.c2, &pred.c2);
    let dr1 = diff(&act.r1, &pred.r1);
    let dr2 = diff(&act.r2, &pred.r2);
    let cols = violated(&dc1, tau);
    let rows = violated(&dr1, tau);
    let worst = saturate(dc1[argmax_abs(&dc1)]);
    if cols.len() > 1 || rows.len() > 1 {
        return Repair::Uncorrectable {
            loc: None,
            delta: worst,
        };
    }
    let j0 = cols.first().copied().unwrap_or_else(|| argmax_abs(&dc1));
    let i0 = rows.first().copied().unwrap_or_else(|| argmax_abs(&dr1));
    let (i, j) = match locate(dr1[i0], dr2[i0], dc1[j0], dc2[j0], tau, (t.m, t.n)) {
        Some(l) => (l.i, l.j),
        None if cols.len() + rows.len() >= 1 => (i0, j0),
        None => {
            return Repair::Uncorrectable {
                loc: None,
                delta: worst,
            }
        }
    };

    let slot = i * t.stride.0 + j * t.stride.1;
    let bad = t.acc[slot];
    let others: f64 = (0..t.m)
        .filter(|&r| r != i)
        .map(|r| t.at(r, j).as_f64())
        .sum();
    let clean = T::from_f64(pred.c1[j] - others);
    t.acc[slot] = clean;
    let delta = saturate(bad.as_f64() - clean.as_f64());

    let act = t.actual();
    let ok =
        |a: &[f64], p: &[f64], bound: f64| a.iter().zip(p).all(|(a, p)| (a - p).abs() <= bound);
    let (m, n) = (t.m as f64, t.n as f64);
    if ok(&act.c1, &pred.c1, tau)
        && ok(&act.r1, &pred.r1, tau)
        && ok(&act.c2, &pred.c2, tau * m)
        && ok(&act.r2, &pred.r2, tau * n)
    {
        Repair::Corrected { loc: (i, j), delta }
    } else {
        t.acc[slot] = bad;
        Repair::Uncorrectable {
            loc: Some((i, j)),
            delta,
        }
    }
}
