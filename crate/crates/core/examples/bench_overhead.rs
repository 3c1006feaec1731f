//! Checked vs unchecked assignment throughput on a handful of shapes.

use ftkm::gemm::TileConfig;
use ftkm::kmeans::FtMode;
use ftkm::matrix::Precision;
use ftkm::tuner::{measure_overhead, BenchData, Shape, BENCH_CSV_HEADER};

fn main() -> ftkm::Result<()> {
    println!("{BENCH_CSV_HEADER}");
    for shape in [
        Shape::new(16_384, 8, 32),
        Shape::new(16_384, 32, 256),
        Shape::new(65_536, 64, 64),
    ] {
        let f32_cfg = TileConfig::default_for(Precision::Single);
        println!(
            "{}",
            measure_overhead(&BenchData::<f32>::new(shape, 1)?, &f32_cfg, 5, FtMode::Abft)?
                .csv_line()
        );
        let f64_cfg = TileConfig::default_for(Precision::Double);
        println!(
            "{}",
            measure_overhead(&BenchData::<f64>::new(shape, 1)?, &f64_cfg, 5, FtMode::Abft)?
                .csv_line()
        );
    }
    Ok(())
}
