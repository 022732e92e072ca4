//! Config-driven driver for the accel-leak laboratory: simulate protected
//! and unprotected accelerators, attack the traces, size the search space
//! and score leakage.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod scenario;

pub use commands::{Context, Format};
pub use config::{Overrides, RunConfig};
pub use error::CliError;
