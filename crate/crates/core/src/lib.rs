//! Link-level simulator for 1-bit compressed-sensing CSI feedback that is
//! superimposed on uplink user data, with amplitude recovery by two small
//! fusion networks.
//!
//! Modules follow the signal path:
//!
//! - [`channel`]: reciprocal uplink/downlink channel pairs and dataset files
//! - [`onebit`]: sign quantization, feedback vectors, support-aided BIHT
//! - [`link`]: QPSK, Walsh spreading, superposition, MRC and SIC detection
//! - [`nn`]: the single-hidden-layer network engine
//! - [`pipeline`]: recovery chain, metrics and training corpora
//! - [`harness`]: experiment configuration, sweeps and timing benchmarks

pub mod channel;
pub mod error;
pub mod harness;
pub mod link;
pub mod nn;
pub mod onebit;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
