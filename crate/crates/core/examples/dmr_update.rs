//! Duplicated reduction with a flip in one replica.

use ftkm::abft::{dmr_reduce, dmr_reduce_hooked, ReduceOp};
use ftkm::faultsim::{FaultInjector, FaultSchedule, FaultSite, ScheduledFault};

fn main() -> ftkm::Result<()> {
    let values: Vec<f64> = (1..=1000).map(|v| 1.0 / v as f64).collect();
    let clean = dmr_reduce(&values, 0.0, ReduceOp::Sum)?;

    let schedule = FaultSchedule {
        entries: vec![ScheduledFault {
            site: FaultSite::UpdateAccumulator,
            iteration: 0,
            tile: (0, 0),
            elem: (500, 1),
            bit: 61,
        }],
    };
    let hook = FaultInjector::new(&schedule);
    let hit = dmr_reduce_hooked(&values, 0.0, ReduceOp::Sum, &hook, 0, (0, 0))?;

    println!("clean: {} (mismatch: {})", clean.value, clean.mismatch);
    println!(
        "hit:   {} (mismatch: {}, attempts: {})",
        hit.value, hit.mismatch, hit.attempts
    );
    assert_eq!(clean.value.to_bits(), hit.value.to_bits());
    Ok(())
}
