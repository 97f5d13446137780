//! Federated transfer learning for power-converter thermal models.
//!
//! This crate holds everything that is pure computation: dense linear
//! algebra, the from-scratch MLP, the synthetic thermal generator, the three
//! domain-adaptation methods, the FedAvg aggregation rules and the wire
//! codecs. It is `no_std` and only needs an allocator; sockets, threads,
//! files and the CLI live in the `fedtherm` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod federation;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod thermal;
pub mod transfer;
pub mod wire;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{Activation, Layer, MlpModel};
pub use thermal::Dataset;
