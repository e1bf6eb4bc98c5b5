//! File formats, oracle transport, workspace management and stage
//! orchestration for the `compavatar` command line.

pub mod config;
pub mod error;
pub mod formats;
pub mod fsutil;
pub mod pipeline;
pub mod seeds;
pub mod wire;
pub mod workspace;

pub use error::{CliError, Result};
