use crate::error::{Error, Result};
use crate::faultsim::{FaultHook, FaultSite, Injection};

/// Attempts before a persistent mismatch becomes a hard error.
pub const DMR_MAX_ATTEMPTS: usize = 2;

/// Values a duplicated reduction can carry.
pub trait DmrValue: Copy + Send + Sync + 'static {
    const WIDTH: u32;
    fn combine(self, other: Self) -> Self;
    fn same(self, other: Self) -> bool;
    fn flip(self, bit: u32) -> Self;
}

impl DmrValue for f32 {
    const WIDTH: u32 = 32;
    fn combine(self, other: Self) -> Self {
        self + other
    }
    fn same(self, other: Self) -> bool {
        self.to_bits() == other.to_bits()
    }
    fn flip(self, bit: u32) -> Self {
        f32::from_bits(self.to_bits() ^ (1 << bit))
    }
}

impl DmrValue for f64 {
    const WIDTH: u32 = 64;
    fn combine(self, other: Self) -> Self {
        self + other
    }
    fn same(self, other: Self) -> bool {
        self.to_bits() == other.to_bits()
    }
    fn flip(self, bit: u32) -> Self {
        f64::from_bits(self.to_bits() ^ (1 << bit))
    }
}

impl DmrValue for u64 {
    const WIDTH: u32 = 64;
    fn combine(self, other: Self) -> Self {
        self.wrapping_add(other)
    }
    fn same(self, other: Self) -> bool {
        self == other
    }
    fn flip(self, bit: u32) -> Self {
        self ^ (1 << bit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmrOutcome<V> {
    pub value: V,
    /// Whether any attempt saw the replicas disagree.
    pub mismatch: bool,
    pub attempts: usize,
}

/// Reduces `values` twice through independent accumulators, in the same
/// order, and compares the results bitwise.
pub fn dmr_reduce<V: DmrValue>(values: &[V], init: V, op: ReduceOp) -> Result<DmrOutcome<V>> {
    run(values, init, op, |_| None)
}

/// [`dmr_reduce`] with the hook's flip for `(iteration, tile)` applied on
/// the first attempt, after `elem.0 % (len + 1)` steps, to replica
/// `elem.1 % 2`.
pub fn dmr_reduce_hooked<V: DmrValue>(
    values: &[V],
    init: V,
    op: ReduceOp,
    hook: &dyn FaultHook,
    iteration: usize,
    tile: (usize, usize),
) -> Result<DmrOutcome<V>> {
    let flip = hook.fault_at(FaultSite::UpdateAccumulator, iteration, tile);
    run(values, init, op, |attempt| {
        let f = flip.filter(|_| attempt == 0)?;
        Some((
            f.elem.0 % (values.len() + 1),
            f.elem.1 % 2,
            f.bit % V::WIDTH,
        ))
    })
    .inspect(|_| {
        if let Some(f) = flip {
            hook.record(Injection {
                site: FaultSite::UpdateAccumulator,
                iteration,
                tile,
                elem: (f.elem.0 % (values.len() + 1), f.elem.1 % 2),
                bit: f.bit % V::WIDTH,
                before: f64::NAN,
                after: f64::NAN,
                delta: f64::NAN,
            })
        }
    })
}

/// `corrupt(attempt)` yields `(step, replica, bit)` to flip.
pub(crate) fn run<V: DmrValue>(
    values: &[V],
    init: V,
    op: ReduceOp,
    corrupt: impl Fn(usize) -> Option<(usize, usize, u32)>,
) -> Result<DmrOutcome<V>> {
    let ReduceOp::Sum = op;
    let mut mismatch = false;
    for attempt in 0..DMR_MAX_ATTEMPTS {
        let fault = corrupt(attempt);
        let mut acc = [init, init];
        for step in 0..=values.len() {
            if let Some((s, r, b)) = fault {
                if s == step {
                    acc[r] = acc[r].flip(b);
                }
            }
            if let Some(&v) = values.get(step) {
                acc[0] = acc[0].combine(v);
                acc[1] = acc[1].combine(v);
            }
        }
        if acc[0].same(acc[1]) {
            return Ok(DmrOutcome {
                value: acc[0],
                mismatch,
                attempts: attempt + 1,
            });
        }
        mismatch = true;
    }
    Err(Error::DmrPersistent {
        attempts: DMR_MAX_ATTEMPTS,
        site: "reduction".into(),
    })
}
