//! Runtime side of fedtherm: transports, the federation server and client,
//! dataset files, scenario benchmarks and report output. The numerical work
//! lives in `fedtherm-core`.

pub mod bench;
pub mod config;
pub mod error;
pub mod federation;
pub mod io;
pub mod transport;

pub use error::{Error, Result};
pub use fedtherm_core as core;
