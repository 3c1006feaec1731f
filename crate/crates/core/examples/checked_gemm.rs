//! Checked product with one injected bit flip, corrected in place.

use ftkm::abft::{checked_gemm, Threshold};
use ftkm::faultsim::{FaultInjector, FaultSchedule, FaultSite, ScheduledFault};
use ftkm::gemm::{gemm_tiled, TileConfig};
use ftkm::matrix::{mat_random, Distribution, Mat, Precision};

fn main() -> ftkm::Result<()> {
    let a: Mat<f32> = mat_random(300, 48, 1, Distribution::Uniform)?;
    let b: Mat<f32> = mat_random(70, 48, 2, Distribution::Uniform)?;
    let cfg = TileConfig::default_for(Precision::Single);
    let thr = Threshold::default_for(Precision::Single);

    let schedule = FaultSchedule {
        entries: vec![ScheduledFault {
            site: FaultSite::GemmAccumulator,
            iteration: 0,
            tile: (2, 0),
            elem: (5, 9),
            bit: 28,
        }],
    };
    let hook = FaultInjector::new(&schedule);
    let (out, report) = checked_gemm(&a, &b, &cfg, thr, &hook)?;
    let plain = gemm_tiled(&a, &b, &cfg)?;

    for inj in hook.injections() {
        println!(
            "flipped bit {} of tile {:?} element {:?}: {:.4} -> {:.4e}",
            inj.bit, inj.tile, inj.elem, inj.before, inj.after
        );
    }
    for e in &report.events {
        println!("{} at {:?}, delta {:.4e}", e.kind.name(), e.loc, e.delta);
    }
    println!("max |checked - plain| = {:.3e}", out.max_abs_diff(&plain));
    Ok(())
}
