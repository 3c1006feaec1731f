//! Tunes a few shapes and stores the selection table.
//!
//! Usage: `cargo run --release --example tune_tiles [OUT]`

use std::path::PathBuf;

use ftkm::kmeans::FtMode;
use ftkm::matrix::Precision;
use ftkm::tuner::{enumerate_configs, select, Bounds, SelectOptions, Shape};

fn main() -> ftkm::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ftkm_tiles.txt"));
    let shapes = [
        Shape::new(16_384, 8, 32),
        Shape::new(16_384, 32, 128),
        Shape::new(16_384, 128, 8),
    ];
    let space = enumerate_configs(Precision::Single, &Bounds::default_for(Precision::Single))?;
    let opts = SelectOptions {
        reps: 3,
        ..SelectOptions::default()
    };
    let outcome = select(&shapes, &space, FtMode::Off, &opts)?;
    println!(
        "{} candidates, {} shortlisted",
        space.len(),
        outcome.shortlist.len()
    );
    for s in &outcome.shapes {
        let b = &s.cfg.block;
        println!(
            "{}: block {}x{}x{}  {:.2} GFLOPS (default {:.2})",
            s.shape, b.m, b.n, b.k, s.gflops, s.default_gflops
        );
    }
    outcome.table.store(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
