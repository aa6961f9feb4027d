//! Training core for nearest-neighbour mixing with noisy labels.
//!
//! Everything here is pure computation over owned buffers: dataset synthesis
//! and label-noise injection, a small ReLU classifier with hand-written
//! backpropagation, an HNSW index with an exact scan beside it, a two-component
//! loss mixture fitted by EM, sample mixing, EMA label correction, and the
//! epoch loop that ties them together. File formats, configuration and the
//! command line live in the `mixnn` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod correction;
pub mod data;
pub mod diagnostics;
pub mod gmm;
pub mod knn;
pub mod mixer;
pub mod network;
pub mod rng;
pub mod trainer;

mod error;
mod math;

pub use error::{Error, Result};
