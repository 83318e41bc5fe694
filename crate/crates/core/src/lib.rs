//! System-level simulator of a network-sliced C-V2X highway.
//!
//! A run drops vehicles on a wrap-around six-lane highway, serves safety and
//! video traffic either directly from roadside units or through vehicle
//! access points chosen by spectral clustering (optionally with two-hop
//! relaying of poorly covered video users), and reports packet reception
//! ratios and throughput distributions.

pub mod channel;
pub mod config;
pub mod error;
pub mod link;
pub mod mac;
pub mod metrics;
pub mod relaying;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod slicing;

pub use config::{SimConfig, Technology};
pub use error::{ConfigError, Error, Result};
pub use sim::{simulate, RunOutcome, RunStats};
