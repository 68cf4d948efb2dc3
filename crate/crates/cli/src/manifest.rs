//! Run manifest and error record.

use std::path::Path;

use popctl_core::Error;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SUCCESS: u8 = 0;
pub const CONFIG: u8 = 2;
pub const NUMERICAL: u8 = 3;
pub const EXPERIMENT: u8 = 4;

pub fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        NUMERICAL
    } else if e.is_experiment() {
        EXPERIMENT
    } else {
        CONFIG
    }
}

/// SHA-256 of the canonical JSON form of the configuration.
pub fn config_hash(canonical: &Value) -> String {
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

#[derive(Debug, Default, Serialize)]
pub struct Constants {
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub t_min: Option<f64>,
    pub r_sup: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
    pub constants: Constants,
    pub outputs: Vec<String>,
    pub status: &'static str,
    pub exit_code: u8,
    pub warnings: Vec<String>,
    pub summary: Value,
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub exit_code: u8,
    pub category: &'static str,
    /// Offending configuration key, when known.
    pub key: Option<String>,
    pub message: String,
}

impl ErrorRecord {
    pub fn from_error(e: &Error) -> Self {
        let code = exit_code(e);
        let key = match e {
            Error::Config { key, .. } => Some(key.clone()),
            _ => None,
        };
        Self {
            exit_code: code,
            category: category(code),
            key,
            message: e.to_string(),
        }
    }

    pub fn check_failed(message: String) -> Self {
        Self {
            exit_code: EXPERIMENT,
            category: category(EXPERIMENT),
            key: None,
            message,
        }
    }
}

pub fn category(code: u8) -> &'static str {
    match code {
        SUCCESS => "ok",
        CONFIG => "config",
        NUMERICAL => "numerical",
        _ => "experiment",
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}
