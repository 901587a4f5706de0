use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use absgen::metrics::CSV_HEADER;
use serde::Serialize;

use crate::error::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(absgen::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(absgen::Error::from)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Appends report rows, creating the file with a header when needed. The
/// whole file is rewritten through [`write_atomic`], so readers never see a
/// partial row.
pub fn append_csv(path: &Path, rows: &[String]) -> Result<(), CliError> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{CSV_HEADER}\n"),
        Err(e) => return Err(io_err(path, e)),
    };
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Run metadata kept apart from the payload files so that payloads stay
/// byte-identical across repeated runs.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: &'static str,
    pub fingerprint: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix: f64,
    pub elapsed_secs: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
