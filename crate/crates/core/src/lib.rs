#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod gauging;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod sensitivity;
pub mod solver;

pub use error::{Error, Result};

/// Hex SHA-256 digest used for cache keys and file headers.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
