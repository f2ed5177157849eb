//! Command implementations behind the `cvae` binary: experiment configs,
//! the train/eval/generate pipeline, and SVG report rendering.
//!
//! Everything here is deterministic for a fixed config: repeated runs
//! produce byte-identical CSV and SVG files.

pub mod commands;
pub mod config;
pub mod svg;

use std::fmt;

/// CLI failure, split by exit code: user errors (bad flags, unparseable
/// configs, inapplicable metrics, malformed inputs) exit with 1, numerical
/// failures (non-finite training or evaluation) with 2.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(msg) => write!(f, "{msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
