//! Fault-tolerant K-means.
//!
//! Cluster assignment runs as a cache-blocked `X * Y^T` product with a fused
//! per-row argmin. The product can be protected online by two-vector
//! checksums that detect, locate and correct a single corrupted accumulator
//! element per tile and interval; the centroid update can be protected by
//! dual modular redundancy. A deterministic bit-flip injector exercises both
//! paths, and a tuner searches the tile-size space per problem shape.
//!
//! ```
//! use ftkm::kmeans::{lloyd, KMeansConfig};
//! use ftkm::matrix::gaussian_mixture;
//!
//! let blobs = gaussian_mixture::<f32>(512, 4, 3, 0.05, 1).unwrap();
//! let result = lloyd(&blobs.data, &KMeansConfig::new(3)).unwrap();
//! assert_eq!(result.assignments.len(), 512);
//! ```

pub mod abft;
pub mod cli;
pub mod error;
pub mod faultsim;
pub mod gemm;
pub mod kmeans;
pub mod matrix;
pub mod tuner;
pub mod verify;

pub use error::{Error, Result};
pub use matrix::{DynMat, Mat, Precision, Real};
