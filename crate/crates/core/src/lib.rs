//! Energy-delay analysis of coded packet flows on the two-source erasure line
//! network S₁ → S₂ → R.
//!
//! The analytical models (`genie_inter`, `genie_intra`, `hd_online`,
//! `hd_batch`) are cross-checked by a seed-deterministic slot-level
//! `simulator`.

pub mod cli;
pub mod error;
pub mod genie_inter;
pub mod genie_intra;
pub mod hd_batch;
pub mod hd_online;
pub mod kernels;
pub mod markov;
pub mod simulator;
pub mod truncation;

pub use error::{Error, Result};
pub use kernels::{EnergyParams, LineNetworkParams};
