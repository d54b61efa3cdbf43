//! Experiment harness for `vqpu`: configs, presets, the subcommands and
//! their provenance manifests. The `vqpu` binary is a thin wrapper.

pub mod commands;
pub mod config;
pub mod manifest;

use vqpu::Error;

/// Process exit code for each error kind. Argument errors from the parser
/// also exit with 2.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 2,
        Error::Config(_) => 3,
        Error::Format { .. } => 4,
        Error::Capacity(_) => 5,
        Error::Shape { .. } => 6,
        Error::Training(_) => 7,
        Error::Io { .. } => 8,
    }
}
