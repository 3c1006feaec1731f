//! Writes a gaussian-mixture dataset in the binary format and reads it back.
//!
//! Usage: `cargo run --example generate_dataset [OUT]`

use std::path::PathBuf;

use ftkm::matrix::{gaussian_mixture, mat_load, store_typed, DynMat, FileFormat, HEADER_LEN};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ftkm_blobs.bin"));
    let blobs = gaussian_mixture::<f32>(10_000, 8, 4, 0.05, 42)?;
    store_typed(&blobs.data, &out, FileFormat::FtkmBinary)?;

    let bytes = std::fs::metadata(&out)?.len();
    println!(
        "{}: {bytes} bytes ({HEADER_LEN}-byte header)",
        out.display()
    );

    let DynMat::Single(back) = mat_load(&out, FileFormat::FtkmBinary)? else {
        unreachable!("stored as single precision");
    };
    assert!(back.bit_eq(&blobs.data));
    for c in 0..blobs.centers.rows() {
        let members = blobs.labels.iter().filter(|&&l| l == c).count();
        println!("center {c}: {:?} ({members} samples)", blobs.centers.row(c));
    }
    Ok(())
}
