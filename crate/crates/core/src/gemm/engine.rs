use rayon::prelude::*;

use super::{check_inner, kernel, AssignResult, TileConfig};
use crate::abft::{
    repair_tile, DetectionEvent, DetectionReport, EventKind, Repair, Threshold, TileCheck,
};
use crate::error::{Error, Result};
use crate::faultsim::{maybe_corrupt, FaultHook, FaultSite};
use crate::matrix::{Mat, Real};

/// One engine invocation: `A * B^T` with optional online checking.
pub(crate) struct Job<'a, T> {
    pub a: &'a Mat<T>,
    pub b: &'a Mat<T>,
    pub cfg: &'a TileConfig,
    /// `Some` enables checksum verification after every `block.k` interval.
    pub threshold: Option<Threshold>,
    /// Duplicate the per-tile argmin reduction and compare.
    pub dmr_epilogue: bool,
    pub hook: &'a dyn FaultHook,
    pub iteration: usize,
}

#[derive(Clone, Copy)]
struct Geometry {
    m: usize,
    n: usize,
    kd: usize,
    bm: usize,
    bn: usize,
    bk: usize,
    sm: usize,
    sn: usize,
    mr: usize,
    nr: usize,
    nbj: usize,
    nkb: usize,
}

impl Geometry {
    fn new<T: Real>(job: &Job<'_, T>) -> Self {
        let c = job.cfg;
        let (m, n, kd) = (job.a.rows(), job.b.rows(), job.a.cols());
        Geometry {
            m,
            n,
            kd,
            bm: c.block.m,
            bn: c.block.n,
            bk: c.block.k,
            sm: c.sub.m,
            sn: c.sub.n,
            mr: c.micro.m,
            nr: c.micro.n,
            nbj: n.div_ceil(c.block.n),
            nkb: kd.div_ceil(c.block.k),
        }
    }
}

/// `B` packed per column block into `nr`-wide, k-major micro panels.
struct PackedB<T> {
    data: Vec<T>,
    /// Largest magnitude per column block, when checking.
    max_abs: Vec<f64>,
    /// `sum_j B[j][k]` per column block, row stride `kd`, when checking.
    row_sum: Vec<f64>,
}

fn pack_b<T: Real>(b: &Mat<T>, g: &Geometry, checked: bool) -> PackedB<T> {
    let panel = g.bn * g.kd;
    let mut data = vec![T::zero(); g.nbj * panel];
    for j in 0..g.n {
        let (bj, jj) = (j / g.bn, j % g.bn);
        let base = bj * panel + (jj / g.nr) * g.kd * g.nr + jj % g.nr;
        for (k, &v) in b.row(j).iter().enumerate() {
            data[base + k * g.nr] = v;
        }
    }
    if !checked {
        return PackedB {
            data,
            max_abs: Vec::new(),
            row_sum: Vec::new(),
        };
    }
    let max_abs = data.chunks(panel).map(max_abs).collect();
    let mut row_sum = vec![0.0; g.nbj * g.kd];
    for j in 0..g.n {
        let sums = &mut row_sum[(j / g.bn) * g.kd..(j / g.bn + 1) * g.kd];
        for (s, v) in sums.iter_mut().zip(b.row(j)) {
            *s += v.as_f64();
        }
    }
    PackedB {
        data,
        max_abs,
        row_sum,
    }
}

const LANES: usize = 16;

/// Largest finite-or-infinite magnitude; NaN is ignored.
fn max_abs<T: Real>(v: &[T]) -> f64 {
    let mut lanes = [T::zero(); LANES];
    let chunks = v.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for (l, &x) in lanes.iter_mut().zip(c) {
            let x = x.abs();
            if x > *l {
                *l = x;
            }
        }
    }
    lanes.iter().chain(rest).fold(0.0f64, |m, x| {
        if x.abs().as_f64() > m {
            x.abs().as_f64()
        } else {
            m
        }
    })
}

/// `pc[r] += sum_k w[k] * rows[k][r]` for one `W`-wide k-major panel.
fn panel_dot<T: Real, const W: usize>(pc: &mut [f64], rows: &[T], w: &[f64]) {
    let mut acc: [f64; W] = pc.try_into().unwrap();
    for (row, &x) in rows.chunks_exact(W).zip(w) {
        let row: &[T; W] = row.try_into().unwrap();
        for (c, &v) in acc.iter_mut().zip(row) {
            *c += x * v.as_f64();
        }
    }
    pc.copy_from_slice(&acc);
}

fn panel_dot_any<T: Real>(pc: &mut [f64], rows: &[T], w: &[f64]) {
    match pc.len() {
        8 => panel_dot::<T, 8>(pc, rows, w),
        16 => panel_dot::<T, 16>(pc, rows, w),
        32 => panel_dot::<T, 32>(pc, rows, w),
        width => {
            for (row, &x) in rows.chunks_exact(width).zip(w) {
                for (c, &v) in pc.iter_mut().zip(row) {
                    *c += x * v.as_f64();
                }
            }
        }
    }
}

/// Columns summed in native precision before widening.
const ROW_SUM_GROUP: usize = 8;

/// Row sums of a column-major tile against their predictions.
fn rows_agree<T: Real>(
    acc: &[T],
    ld: usize,
    vn: usize,
    pr1: &[f64],
    s: &mut RowSums<T>,
    tau: f64,
) -> bool {
    let vm = pr1.len();
    let (wide, part) = (&mut s.wide[..vm], &mut s.part[..vm]);
    wide.fill(0.0);
    for group in acc[..vn * ld].chunks(ld * ROW_SUM_GROUP) {
        part.copy_from_slice(&group[..vm]);
        for col in group.chunks(ld).skip(1) {
            for (p, &v) in part.iter_mut().zip(&col[..vm]) {
                *p = *p + v;
            }
        }
        for (w, p) in wide.iter_mut().zip(part.iter()) {
            *w += p.as_f64();
        }
    }
    wide.iter().zip(pr1).all(|(w, p)| (w - p).abs() <= tau)
}

struct RowSums<T> {
    part: Vec<T>,
    wide: Vec<f64>,
}

struct Scratch<T> {
    apack: Vec<T>,
    /// Column-major accumulator tile, stride `bm`.
    acc: Vec<T>,
    /// Predicted and actual row sums of the tile.
    pr1: Vec<f64>,
    r1: RowSums<T>,
    best: Minima<T>,
    dup: Minima<T>,
}

struct Minima<T> {
    val: Vec<T>,
    idx: Vec<u32>,
}

impl<T: Real> Minima<T> {
    fn new(len: usize) -> Self {
        Minima {
            val: vec![T::zero(); len],
            idx: vec![0; len],
        }
    }

    fn same(&self, other: &Self, len: usize) -> bool {
        self.idx[..len] == other.idx[..len]
            && self.val[..len]
                .iter()
                .zip(&other.val[..len])
                .all(|(a, b)| a.bit_eq(*b))
    }
}

impl<T: Real> Scratch<T> {
    fn new(g: &Geometry) -> Self {
        Scratch {
            apack: vec![T::zero(); g.bm * g.kd],
            acc: vec![T::zero(); g.bm * g.bn],
            pr1: vec![0.0; g.bm],
            r1: RowSums {
                part: vec![T::zero(); g.bm],
                wide: vec![0.0; g.bm],
            },
            best: Minima::new(g.bm),
            dup: Minima::new(g.bm),
        }
    }
}

enum Out<'o, T> {
    Store(&'o mut [T]),
    Argmin {
        y_norms: &'o [T],
        idx: &'o mut [usize],
        val: &'o mut [T],
    },
}

/// Order on `(distance, index)`: smaller distance, then smaller index; NaN
/// ranks as `+inf`.
#[inline]
fn better<T: Real>(cand: (T, usize), cur: (T, usize)) -> bool {
    let key = |v: T| if v.is_nan() { T::infinity() } else { v };
    let (c, k) = (key(cand.0), key(cur.0));
    c < k || (c == k && cand.1 < cur.1)
}

/// Per-row minimum of `yn[j] - 2 acc[i][j]` over one tile, ties to the
/// lower column.
fn tile_minima<T: Real>(acc: &[T], ld: usize, vm: usize, vn: usize, yn: &[T], out: &mut Minima<T>) {
    const UNSET: u32 = u32::MAX;
    let (val, idx) = (&mut out.val[..vm], &mut out.idx[..vm]);
    val.fill(T::infinity());
    idx.fill(UNSET);
    for (j, &y) in yn[..vn].iter().enumerate() {
        let col = &acc[j * ld..j * ld + vm];
        for ((bv, bi), &v) in val.iter_mut().zip(idx.iter_mut()).zip(col) {
            let d = y - (v + v);
            if d < *bv {
                *bv = d;
                *bi = j as u32;
            }
        }
    }
    for (i, (bv, bi)) in val.iter_mut().zip(idx.iter_mut()).enumerate() {
        if *bi == UNSET {
            *bi = 0;
            *bv = yn[0] - (acc[i] + acc[i]);
        }
    }
}

fn row_block<T: Real>(
    job: &Job<'_, T>,
    g: &Geometry,
    pb: &PackedB<T>,
    kern: kernel::MicroKernel<T>,
    bi: usize,
    s: &mut Scratch<T>,
    mut out: Out<'_, T>,
) -> Result<DetectionReport> {
    let mut report = DetectionReport::default();
    let row0 = bi * g.bm;
    let vm = g.bm.min(g.m - row0);
    let (kd, mr, nr) = (g.kd, g.mr, g.nr);
    let a_rows = &job.a.as_slice()[row0 * kd..(row0 + vm) * kd];

    for i in 0..vm {
        let base = (i / mr) * kd * mr + i % mr;
        for (k, &v) in a_rows[i * kd..(i + 1) * kd].iter().enumerate() {
            s.apack[base + k * mr] = v;
        }
    }
    let max_a = if job.threshold.is_some() {
        max_abs(a_rows)
    } else {
        0.0
    };

    let ld = g.bm;
    let pm = vm.next_multiple_of(mr);
    for bj in 0..g.nbj {
        let col0 = bj * g.bn;
        let vn = g.bn.min(g.n - col0);
        let panel = &pb.data[bj * g.bn * kd..(bj + 1) * g.bn * kd];
        for j in 0..vn.next_multiple_of(nr) {
            s.acc[j * ld..j * ld + pm].fill(T::zero());
        }
        s.pr1[..pm].fill(0.0);
        let pmax = if job.threshold.is_some() {
            max_a * pb.max_abs[bj]
        } else {
            0.0
        };
        let mut injected = false;
        let mut tainted = false;

        for kb in 0..g.nkb {
            let k0 = kb * g.bk;
            let kc = g.bk.min(kd - k0);
            for si in (0..vm).step_by(g.sm) {
                for sj in (0..vn).step_by(g.sn) {
                    for nj in (sj..(sj + g.sn).min(vn)).step_by(nr) {
                        let b = &panel[(nj / nr) * kd * nr + k0 * nr..];
                        for mi in (si..(si + g.sm).min(vm)).step_by(mr) {
                            let a = &s.apack[(mi / mr) * kd * mr + k0 * mr..];
                            kern(kc, a, b, &mut s.acc[nj * ld + mi..], ld, mr, nr);
                        }
                    }
                }
            }
            if kb + 1 == g.nkb {
                let inj = maybe_corrupt(
                    job.hook,
                    FaultSite::GemmAccumulator,
                    job.iteration,
                    (bi, bj),
                    &mut s.acc,
                    (1, ld),
                    (vm, vn),
                );
                injected |= !inj.is_empty();
            }
            let Some(thr) = job.threshold else { continue };
            if tainted {
                continue;
            }
            let rb = &pb.row_sum[bj * kd + k0..bj * kd + k0 + kc];
            for (p, pr) in s.pr1[..pm].chunks_exact_mut(mr).enumerate() {
                panel_dot_any(
                    pr,
                    &s.apack[p * kd * mr + k0 * mr..p * kd * mr + (k0 + kc) * mr],
                    rb,
                );
            }
            let tau = thr.tau(pmax, k0 + kc);
            if rows_agree(&s.acc, ld, vn, &s.pr1[..vm], &mut s.r1, tau) {
                continue;
            }

            report.detections += 1;
            if !injected {
                report.false_alarms += 1;
            }
            let b_rows = &job.b.as_slice()[col0 * kd..(col0 + vn) * kd];
            let outcome = repair_tile(TileCheck {
                acc: &mut s.acc,
                stride: (1, ld),
                m: vm,
                n: vn,
                a_rows,
                b_rows,
                kd,
                k_end: k0 + kc,
                tau,
            });
            let (kind, loc, delta) = match outcome {
                Repair::Corrected { loc, delta } => {
                    report.corrections += 1;
                    (EventKind::DetectedCorrected, Some(loc), delta)
                }
                Repair::Uncorrectable { loc, delta } => {
                    report.uncorrectable += 1;
                    tainted = true;
                    (EventKind::DetectedUncorrectable, loc, delta)
                }
            };
            report.events.push(DetectionEvent {
                iteration: job.iteration,
                tile: (bi, bj),
                kind,
                loc,
                delta,
            });
        }

        match &mut out {
            Out::Store(dst) => {
                for j in 0..vn {
                    for (i, &v) in s.acc[j * ld..j * ld + vm].iter().enumerate() {
                        dst[i * g.n + col0 + j] = v;
                    }
                }
            }
            Out::Argmin { y_norms, idx, val } => {
                let yn = &y_norms[col0..col0 + vn];
                tile_minima(&s.acc, ld, vm, vn, yn, &mut s.best);
                if job.dmr_epilogue {
                    let mut agreed = false;
                    for attempt in 0..crate::abft::DMR_MAX_ATTEMPTS {
                        tile_minima(&s.acc, ld, vm, vn, yn, &mut s.dup);
                        if s.best.same(&s.dup, vm) {
                            agreed = true;
                            break;
                        }
                        report.dmr_mismatches += 1;
                        report.events.push(DetectionEvent {
                            iteration: job.iteration,
                            tile: (bi, bj),
                            kind: EventKind::DmrMismatch,
                            loc: None,
                            delta: 0.0,
                        });
                        if attempt + 1 < crate::abft::DMR_MAX_ATTEMPTS {
                            tile_minima(&s.acc, ld, vm, vn, yn, &mut s.best);
                        }
                    }
                    if !agreed {
                        return Err(Error::DmrPersistent {
                            attempts: crate::abft::DMR_MAX_ATTEMPTS,
                            site: format!("argmin epilogue of tile ({bi},{bj})"),
                        });
                    }
                }
                for i in 0..vm {
                    let cand = (s.best.val[i], s.best.idx[i] as usize + col0);
                    if bj == 0 || better(cand, (val[i], idx[i])) {
                        val[i] = cand.0;
                        idx[i] = cand.1;
                    }
                }
            }
        }
    }
    Ok(report)
}

fn prepare<T: Real>(job: &Job<'_, T>) -> Result<Geometry> {
    check_inner(job.a, job.b)?;
    job.cfg.validate()?;
    if let Some(t) = job.threshold {
        t.validate()?;
    }
    Ok(Geometry::new(job))
}

fn merge(parts: Vec<Result<DetectionReport>>) -> Result<DetectionReport> {
    let mut report = DetectionReport::default();
    for p in parts {
        report.merge(p?);
    }
    Ok(report)
}

/// Full product `A * B^T`.
pub(crate) fn run_store<T: Real>(job: &Job<'_, T>) -> Result<(Mat<T>, DetectionReport)> {
    let g = prepare(job)?;
    let mut out = vec![T::zero(); g.m * g.n];
    if g.m == 0 || g.n == 0 {
        return Ok((Mat::from_vec(g.m, g.n, out)?, DetectionReport::default()));
    }
    let pb = pack_b(job.b, &g, job.threshold.is_some());
    let kern = kernel::select::<T>(g.mr, g.nr);
    let parts: Vec<_> = out
        .par_chunks_mut(g.bm * g.n)
        .enumerate()
        .map_init(
            || Scratch::new(&g),
            |s, (bi, chunk)| row_block(job, &g, &pb, kern, bi, s, Out::Store(chunk)),
        )
        .collect();
    let report = merge(parts)?;
    Ok((Mat::from_vec(g.m, g.n, out)?, report))
}

/// Per-row argmin of `y_norms[j] - 2 (A * B^T)[i, j]`.
pub(crate) fn run_argmin<T: Real>(
    job: &Job<'_, T>,
    y_norms: &[T],
) -> Result<(AssignResult<T>, DetectionReport)> {
    let g = prepare(job)?;
    if g.n == 0 {
        return Err(Error::invalid("assignment needs at least one centroid"));
    }
    if y_norms.len() != g.n {
        return Err(Error::invalid(format!(
            "{} centroid norms for {} centroids",
            y_norms.len(),
            g.n
        )));
    }
    let mut idx = vec![0usize; g.m];
    let mut val = vec![T::zero(); g.m];
    if g.m > 0 {
        let pb = pack_b(job.b, &g, job.threshold.is_some());
        let kern = kernel::select::<T>(g.mr, g.nr);
        let parts: Vec<_> = idx
            .par_chunks_mut(g.bm)
            .zip(val.par_chunks_mut(g.bm))
            .enumerate()
            .map_init(
                || Scratch::new(&g),
                |s, (bi, (idx, val))| {
                    row_block(job, &g, &pb, kern, bi, s, Out::Argmin { y_norms, idx, val })
                },
            )
            .collect();
        let report = merge(parts)?;
        return Ok((
            AssignResult {
                assignments: idx,
                min_dists: val,
            },
            report,
        ));
    }
    Ok((
        AssignResult {
            assignments: idx,
            min_dists: val,
        },
        DetectionReport::default(),
    ))
}
