//! Deterministic, seed-replayable simulation of randomized local and global broadcast
//! in dynamic wireless networks.
//!
//! The physical layer is a path-loss map viewed as a quasi-metric ([`metric`]). One
//! reception contract (clear-channel success) sits under every interference model
//! ([`models`]), carrier-sensing primitives are derived from it ([`sensing`]), and the
//! contention-adapting protocols ([`protocols`]) run on top, driven round by round by
//! the [`engine`] against an adversarial topology schedule ([`dynamics`]).

pub mod dynamics;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod instance;
pub mod metric;
pub mod models;
pub mod protocols;
pub mod sensing;
pub mod serde_ext;
pub mod stats;

pub use error::{Error, Result};
