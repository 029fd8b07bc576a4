//! Synthetic tabular data prior and supporting numerics.

pub mod activation;
pub mod attention;
pub mod encoding;
pub mod error;
pub mod filter;
pub mod function;
pub mod linalg;
pub mod matrix;
pub mod points;
pub mod prior;
pub mod qdist;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use qdist::QuantileDistribution;
pub use prior::{generate_batch, generate_dataset, generate_with_report, GeneratedDataset, GenerationConfig};
pub use rng::RngStream;
pub use sampler::CorrelatedSampler;
