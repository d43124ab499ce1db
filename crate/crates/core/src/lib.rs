//! Training of quantized neural networks under 3-party semi-honest
//! replicated secret sharing, plus a cleartext emulator running the exact
//! same quantized computation.
//!
//! The crate is organized bottom-up:
//! - [`ring`] / [`fixed`]: wrapping ring arithmetic and fixed-point rounding
//! - [`transport`]: pairwise channels between the three parties with exact
//!   payload-bit and round accounting
//! - [`rss3`]: the replicated secret-sharing engine (arithmetic and binary)
//! - [`emulate`]: the cleartext engine with identical quantized semantics
//! - [`engine`]: the common operation surface both engines implement
//! - [`secmath`]: secure fixed-point math built on the engine surface
//! - [`nn`]: layers, loss, optimizers, and the training loop
//! - [`roundlab`]: empirical validation of the rounding propositions
//! - [`data`]: IDX / CIFAR-10 loaders

pub mod circuits;
pub mod data;
pub mod emulate;
pub mod engine;
pub mod fixed;
pub mod nn;
pub mod ring;
pub mod roundlab;
pub mod rss3;
pub mod secmath;
pub mod transport;

pub use engine::Engine;
pub use fixed::{FixedConfig, Rounding};
pub use ring::Ring;
pub use transport::{CommStats, PartyId};

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
