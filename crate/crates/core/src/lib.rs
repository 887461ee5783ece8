//! Numerical laboratory for autoregressive video diffusion over linear-Gaussian world models.
//!
//! Gaussian quantities are in nats, the discrete lower-bound toolkit works in bits.

pub mod config;
pub mod decomposition;
pub mod error;
pub mod gausscore;
pub mod lowerbound;
pub mod plot;
pub mod sampler;
pub mod schedule;
pub mod worldmodel;

pub use error::{Error, Result};

/// Nats per bit. The only place the two units are related.
pub const NATS_PER_BIT: f64 = std::f64::consts::LN_2;

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / NATS_PER_BIT
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits * NATS_PER_BIT
}
