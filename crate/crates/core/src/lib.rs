//! Simulation core for federated learning over a distributed-MIMO uplink with
//! type-based unsourced multiple access.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every algorithm of the
//! simulator: the MLP training core, non-IID partitioning, client selection,
//! vector quantization with error accumulation, the D-MIMO channel, the AMP type
//! decoder, the MD-AirComp baseline and the round orchestrator. File formats,
//! configuration parsing and the command line live in the `ufl-sim` crate.
//!
//! Enable the `parallel` feature to train clients and decode subrounds on a rayon
//! pool. Results are identical to the sequential path because every random draw
//! comes from a per-(purpose, round, index) stream, see [`rng`].
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod channel;
pub mod config;
pub mod data;
pub mod decoder;
mod error;
pub mod kmeans;
pub mod linalg;
pub mod mdaircomp;
pub mod model;
pub mod orchestrator;
pub mod quantizer;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
