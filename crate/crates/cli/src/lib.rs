//! Command-line front end: field container format, experiment configuration,
//! commands and result emission.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod output;

pub use commands::{run, Cli};
pub use container::{Container, FieldData, FieldKind};
pub use error::{exit, CliError, ContainerError};
