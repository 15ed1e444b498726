//! File formats, configuration, benchmarks and the command-line interface
//! around [`funcnet_core`].
//!
//! * [`dataset`] reads and writes curve datasets as CSV.
//! * [`model_file`] saves fitted models in a versioned, bit-exact text format.
//! * [`models`] builds and fits any model under the standard split protocol.
//! * [`benchmark`] runs replicated simulation studies in parallel.
//! * [`config`] and [`cli`] drive all of the above from TOML and flags.

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod model_file;
pub mod models;

pub use error::{Error, Result};
