//! Random injection campaign: how often each protection level keeps the
//! fault-free assignments.

use ftkm::faultsim::FaultSpec;
use ftkm::kmeans::{lloyd, FtMode, KMeansConfig};
use ftkm::matrix::gaussian_mixture;

const RUNS: u64 = 8;

fn main() -> ftkm::Result<()> {
    let blobs = gaussian_mixture::<f32>(16_384, 8, 6, 0.1, 3)?;
    let base = lloyd(&blobs.data, &KMeansConfig::new(6).with_seed(2))?;
    println!("mode       spec            identical  injected  corrected  dmr");
    for ft in [FtMode::Off, FtMode::Abft, FtMode::AbftDmr] {
        for spec in ["fixed:4@exp", "prob:0.05", "fixed:2/update"] {
            let (mut same, mut injected, mut corrected, mut dmr) = (0, 0, 0, 0);
            for run in 0..RUNS {
                let cfg = KMeansConfig::new(6)
                    .with_seed(2)
                    .with_ft(ft)
                    .with_faults(FaultSpec::parse(spec, 100 + run)?);
                let Ok(r) = lloyd(&blobs.data, &cfg) else {
                    continue;
                };
                same += usize::from(r.assignments == base.assignments);
                injected += r.injections.len();
                corrected += r.report.corrections;
                dmr += r.report.dmr_mismatches;
            }
            println!(
                "{:<10} {spec:<15} {same:>4}/{RUNS}  {injected:>8}  {corrected:>9}  {dmr:>3}",
                ft.name()
            );
        }
    }
    Ok(())
}
