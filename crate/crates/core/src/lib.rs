//! Deterministic simulator of multi-memristive synapses.
//!
//! A synaptic weight is carried by N memristive devices; every update
//! programs exactly one of them, arbitrated by counters, which trades
//! per-device nonlinearity and stochasticity for higher effective update
//! resolution. The crate provides the phenomenological device model, the
//! synapse arrays with counter arbitration, three network experiments
//! built on them (supervised digit classification, unsupervised spiking
//! digit classification, temporal correlation detection), and a harness
//! that makes every run reproducible from a seed through named counter
//! based random streams.

pub mod ann;
pub mod arbitration;
pub mod calibrate;
pub mod config;
pub mod correlation;
pub mod device;
pub mod error;
pub mod harness;
pub mod mnist;
pub mod record;
pub mod rng;
pub mod scaling;
pub mod snn;
pub mod synapse;

pub use error::{Error, Result};
