use std::any::Any;

use wide::{f32x16, f64x8};

use crate::matrix::Real;

/// `c[j][r] += sum_k a[k][r] * b[k][j]` over one `mr x nr` register tile.
///
/// `a` is a packed micro-panel (`kc` groups of `mr` values), `b` likewise
/// with `nr` values, and `c` is column-major with stride `ldc`. Every output
/// element is accumulated in ascending `k` with a separate multiply and add,
/// so the result equals a plain sequential dot product bit for bit.
pub(crate) type MicroKernel<T> = fn(usize, &[T], &[T], &mut [T], usize, usize, usize);

macro_rules! simd_kernel {
    ($name:ident, $t:ty, $v:ty, $l:expr) => {
        /// `P` vectors down each column, `NR` columns.
        fn $name<const P: usize, const NR: usize>(
            kc: usize,
            a: &[$t],
            b: &[$t],
            c: &mut [$t],
            ldc: usize,
            _mr: usize,
            _nr: usize,
        ) {
            let load = |s: &[$t]| <$v>::from(<[$t; $l]>::try_from(s).unwrap());
            let mut acc = [[<$v>::ZERO; P]; NR];
            for (j, col) in acc.iter_mut().enumerate() {
                for (p, v) in col.iter_mut().enumerate() {
                    let o = j * ldc + p * $l;
                    *v = load(&c[o..o + $l]);
                }
            }
            for (av, bv) in a[..kc * P * $l]
                .chunks_exact(P * $l)
                .zip(b[..kc * NR].chunks_exact(NR))
            {
                let mut x = [<$v>::ZERO; P];
                for (p, xv) in x.iter_mut().enumerate() {
                    *xv = load(&av[p * $l..(p + 1) * $l]);
                }
                for (col, &bj) in acc.iter_mut().zip(bv) {
                    let s = <$v>::splat(bj);
                    for (v, &xv) in col.iter_mut().zip(&x) {
                        *v += xv * s;
                    }
                }
            }
            for (j, col) in acc.iter().enumerate() {
                for (p, v) in col.iter().enumerate() {
                    let o = j * ldc + p * $l;
                    c[o..o + $l].copy_from_slice(&v.to_array());
                }
            }
        }
    };
}

simd_kernel!(simd_f32, f32, f32x16, 16);
simd_kernel!(simd_f64, f64, f64x8, 8);

fn generic<T: Real>(kc: usize, a: &[T], b: &[T], c: &mut [T], ldc: usize, mr: usize, nr: usize) {
    for k in 0..kc {
        let av = &a[k * mr..(k + 1) * mr];
        let bv = &b[k * nr..(k + 1) * nr];
        for (j, &bj) in bv.iter().enumerate() {
            let col = &mut c[j * ldc..j * ldc + mr];
            for (cv, &x) in col.iter_mut().zip(av) {
                *cv = *cv + x * bj;
            }
        }
    }
}

macro_rules! dispatch {
    ($f:ident, $l:expr, $mr:expr, $nr:expr; $(($p:literal, $n:literal)),*) => {
        match ($mr, $nr) {
            $((m, $n) if m == $p * $l => Some($f::<$p, $n> as fn(usize, &[_], &[_], &mut [_], usize, usize, usize)),)*
            _ => None,
        }
    };
}

fn cast<T: 'static + Copy, U: 'static + Copy>(k: U) -> Option<T> {
    (&k as &dyn Any).downcast_ref::<T>().copied()
}

/// Picks a vectorised kernel for the micro tile, or a runtime-sized one.
pub(crate) fn select<T: Real>(mr: usize, nr: usize) -> MicroKernel<T> {
    let f32k = dispatch!(simd_f32, 16, mr, nr; (1, 4), (1, 8), (1, 16), (2, 4), (2, 8));
    let f64k = dispatch!(simd_f64, 8, mr, nr; (1, 4), (1, 8), (1, 16), (2, 4), (2, 8));
    f32k.and_then(cast::<MicroKernel<T>, _>)
        .or_else(|| f64k.and_then(cast::<MicroKernel<T>, _>))
        .unwrap_or(generic::<T>)
}
