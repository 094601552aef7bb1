//! Configuration, evaluation, logs and the command implementations behind the
//! `activectx` binary.

pub mod commands;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod log;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::AccountingError;
use crate::curation::{CurationError, PolicyParams};
use crate::grpo::GrpoError;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("params file {path}: {message}")]
    Params { path: PathBuf, message: String },
    #[error("params file {path} has format version {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error("trajectory log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("gradient check failed: max relative error {max_rel_err:.3e} exceeds {tolerance:.0e}")]
    GradcheckFailed { max_rel_err: f64, tolerance: f64 },
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

pub const PARAMS_FORMAT: &str = "activectx-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    version: u32,
    params: PolicyParams,
}

pub fn params_to_json(params: &PolicyParams) -> String {
    let file = ParamsFile { format: PARAMS_FORMAT.into(), version: PARAMS_VERSION, params: params.clone() };
    let mut s = serde_json::to_string_pretty(&file).expect("params serialise");
    s.push('\n');
    s
}

pub fn save_params(path: &Path, params: &PolicyParams) -> Result<(), HarnessError> {
    write_atomic(path, params_to_json(params).as_bytes())
}

pub fn load_params(path: &Path) -> Result<PolicyParams, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let perr = |message: String| HarnessError::Params { path: path.to_path_buf(), message };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| perr(e.to_string()))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(PARAMS_FORMAT) {
        return Err(perr(format!("missing or wrong `format` (expected {PARAMS_FORMAT:?})")));
    }
    let found = value.get("version").and_then(|v| v.as_u64()).ok_or_else(|| perr("missing `version`".into()))?;
    if found != u64::from(PARAMS_VERSION) {
        return Err(HarnessError::VersionMismatch {
            path: path.to_path_buf(),
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: PARAMS_VERSION,
        });
    }
    let file: ParamsFile = serde_json::from_value(value).map_err(|e| perr(e.to_string()))?;
    file.params.validate()?;
    Ok(file.params)
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}
