//! A desk-scale laboratory for emergent communication over noisy discrete
//! channels.
//!
//! Two agents play referential signaling games: a Speaker encodes a target
//! feature vector into a fixed-length message of discrete tokens, and a
//! Listener picks the target out of a candidate set after the message crossed
//! a channel that may mask tokens with `unk`. Everything is built on a small
//! tape-based reverse-mode differentiation engine so training runs are
//! dependency-light and bit-reproducible.
//!
//! Module layout mirrors the pipeline:
//!
//! - [`autodiff`]: dense tensors, the op tape, gradient checking
//! - [`nn`]: layers, Adam, EMA targets, gradient clipping
//! - [`dataset`]: synthetic attribute objects, feature-file ingestion, splits
//! - [`game`]: channel noise, reward, noise scheduling, token masking
//! - [`agents`]: Speaker and Listener forward models
//! - [`training`]: loss terms and the decentralized training loop
//! - [`eval`]: accuracy grids, masking curves, report writers
//! - [`etl`]: transfer tasks on top of a frozen Speaker
//! - [`config`] / [`checkpoint`] / [`cli`]: the command-line surface

pub mod agents;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod etl;
pub mod eval;
pub mod game;
pub mod nn;
pub mod rng;
pub mod training;

use std::fmt;
use std::path::PathBuf;

/// FNV-1a 64-bit digest, used for config/dataset/checkpoint provenance.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced to callers (and mapped to process exit codes by the CLI).
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration: unknown keys, unparsable values, inconsistent
    /// settings. Exit code 2.
    Config(String),
    /// Invalid or missing data: malformed feature files, empty datasets,
    /// label/attribute requirements not met. Exit code 3.
    Data(String),
    /// I/O failure, annotated with the path involved. Exit code 3.
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Numerical failure during optimization (non-finite loss or gradient).
    /// Exit code 4.
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Io { path, source } => {
                write!(f, "i/o error on {}: {source}", path.display())
            }
            Error::Numeric(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
