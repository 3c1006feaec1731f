//! Clusters four well-separated blobs with and without protection.

use ftkm::kmeans::{lloyd, FtMode, KMeansConfig};
use ftkm::matrix::gaussian_mixture;

fn main() -> ftkm::Result<()> {
    let blobs = gaussian_mixture::<f32>(65_536, 8, 4, 0.05, 7)?;
    for ft in [FtMode::Off, FtMode::Abft, FtMode::AbftDmr] {
        let r = lloyd(&blobs.data, &KMeansConfig::new(4).with_seed(1).with_ft(ft))?;
        println!(
            "{:<9} iters={:<3} inertia={:.4e} total={:.1}ms detections={}",
            ft.name(),
            r.iters,
            r.inertia,
            r.timings.total_ns as f64 / 1e6,
            r.report.detections
        );
    }
    Ok(())
}
