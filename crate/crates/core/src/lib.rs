//! Simulation and learning toolkit for STAR-RIS-aided mmWave MIMO broadcast.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codec;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod flops;
pub mod gbdt;
pub mod oracle;
pub mod pipeline;
pub mod rft;
pub mod ris;
pub mod saab;
pub mod seeds;
pub mod selftest;
pub mod sounding;
pub mod sweep;

pub use error::{Error, Result};
