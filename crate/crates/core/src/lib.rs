//! Simulation and analysis of a GHz-clocked, gated-APD BB84 link.
//!
//! - [`linkbudget`]: fiber loss, dispersion, gate capture and click model
//! - [`keyrate`]: binary entropy and asymptotic secure rate
//! - [`montecarlo`]: per-gate event simulation with dead time and afterpulsing
//! - [`protocol`]: BB84 encoding, sifting and QBER estimation
//! - [`sweep`], [`calibrate`], [`config`]: experiment driver pieces used by the CLI

// `!(x < y)` is used on purpose so that NaN inputs fail range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod error;
pub mod keyrate;
pub mod linkbudget;
pub mod montecarlo;
pub mod protocol;
pub mod sweep;

pub use error::{Error, Result};
