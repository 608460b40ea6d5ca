//! Command-line front end for the chi characterization library.
//!
//! The binary reads a TOML run configuration, drives the library, and
//! writes JSON or CSV artifacts into the output directory. Exit codes
//! distinguish configuration problems (2), numerical failures (3), and
//! partially completed parameter sweeps (4).

use std::fmt;

pub mod artifact;
pub mod config;
pub mod runners;

/// Anything that can make a run exit non-zero.
#[derive(Debug)]
pub enum Failure {
    /// The configuration file or command line is unusable.
    Config(String),
    /// The computation itself failed, including output file I/O.
    Numeric(String),
    /// A sweep finished but some grid points failed.
    Partial { failed: usize, total: usize },
}

impl Failure {
    pub fn numeric(e: impl fmt::Display) -> Self {
        Failure::Numeric(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Partial { .. } => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration error: {msg}"),
            Failure::Numeric(msg) => write!(f, "numerical failure: {msg}"),
            Failure::Partial { failed, total } => {
                write!(f, "{failed} of {total} sweep points failed")
            }
        }
    }
}

impl std::error::Error for Failure {}

impl From<chitrace_core::Error> for Failure {
    fn from(e: chitrace_core::Error) -> Self {
        Failure::Numeric(e.to_string())
    }
}
