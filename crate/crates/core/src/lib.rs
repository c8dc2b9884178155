//! Deterministic simulator of synchronous federated learning with local
//! momentum under Byzantine model-poisoning attacks.
//!
//! Benign clients run momentum SGD on their shard, Byzantine clients submit
//! ALIE, IPM, ROP, bit-flip or label-flip updates, and the server combines
//! everything with mean, centered clipping, trimmed mean, RFA or sequential
//! centered clipping.

pub mod aggregators;
pub mod attacks;
pub mod client;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod rng;
pub mod selftest;
pub mod vecmath;

pub use error::{Error, Result};
pub use vecmath::ParamVector;
