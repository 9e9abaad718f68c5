//! Ego-centric traffic scene descriptors, bit-packed scene hashes, the
//! hash-aware soft contrastive loss, deterministic captions and
//! localization-aware metrics, plus a synthetic scenario generator.

pub mod caption;
pub mod error;
pub mod hash;
pub mod loss;
pub mod matrix_io;
pub mod metrics;
pub mod scenario;
pub mod scene;
pub mod stats;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
