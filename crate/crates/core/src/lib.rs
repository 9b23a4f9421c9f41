//! Opportunistic, energy-aware peer selection for decentralized federated
//! learning over a sparse, mobile wireless network.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation: node mobility and neighbor graphs, the link budget and
//! transmission energy model, Dirichlet data partitioning, a small MLP learner
//! with federated averaging, knowledge gain, the peer selector, and the round
//! engine that ties them together. File formats, configuration, and the CLI
//! live in the `ocdfl` companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod datagen;
pub mod engine;
mod error;
pub mod gain;
pub mod learner;
pub mod math;
pub mod radio;
pub mod rng;
pub mod selector;
pub mod topology;

pub use error::{Error, Result};

/// Index of a node in the network, `0..num_nodes`.
pub type NodeId = usize;
