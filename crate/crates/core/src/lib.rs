//! Classical post-processing for quantum key distribution.
//!
//! The crate covers GF(2) algebra, Toeplitz universal hashing, key-rate and
//! finite-size formulas, hash-syndrome information reconciliation, stream and
//! block privacy amplification, a BB84 session simulator and a trusted-relay
//! chain simulator.

pub mod bench;
pub mod bits;
pub mod cli;
pub mod error;
pub mod hashing;
mod ntt;
pub mod privacy_amp;
pub mod rates;
pub mod reconciliation;
pub mod relay;
pub mod session;
pub mod rng;
pub mod stats;
pub mod suites;

pub use bits::{BitString, Gf2Matrix};
pub use error::{Error, Result};
pub use hashing::{HashSeedSource, ToeplitzMatrix};
