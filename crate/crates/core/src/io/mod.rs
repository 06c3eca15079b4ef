//! File formats: the binary frame file, JSON-lines records, ASCII XYZ and
//! the pipeline configuration. Every writer replaces its target
//! atomically (temporary file in the same directory, then rename).

mod config;
mod frame;
mod records;
mod xyz;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use config::{NodeInput, PipelineConfig, SceneSource};
pub use frame::{decode_frame, encode_frame, read_frame, write_frame, FLAG_INTENSITY, FLAG_SOURCE, FLAG_TIME_INDEX, FRAME_HEADER_LEN, FRAME_MAGIC, FRAME_VERSION, NO_NODE};
pub use records::{
    boxes_from_records, boxes_to_records, calibration_from_records, calibration_to_records, trajectories_from_records,
    trajectories_to_records, BoxRecord, CalibrationRecord, TimeErrorRecord, TrajectoryRecord,
};
pub use xyz::{read_xyz, write_xyz};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic {0:02x?}, expected \"MVLC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} bytes after the declared payload")]
    TrailingBytes(usize),
    #[error("unknown flag bits {0:#06x}")]
    UnknownFlags(u16),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
}

impl IoError {
    pub(crate) fn at(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
        move |source| IoError::Io { path: path.to_path_buf(), source }
    }
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(IoError::at(path))?;
    tmp.write_all(bytes).map_err(IoError::at(path))?;
    tmp.as_file().sync_all().map_err(IoError::at(path))?;
    tmp.persist(path).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

/// Serializes one record per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String, IoError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| IoError::Invalid(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    write_atomic(path, to_jsonl(records)?.as_bytes())
}

/// Parses one record per non-blank line. Unknown keys are ignored.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::Record { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| IoError::Record { line: i + 1, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(IoError::at(path))?;
    parse_jsonl(BufReader::new(file))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Invalid(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let text = "{\"a\": 1}\n\n{\"a\": oops}\n";
        let err = parse_jsonl::<serde_json::Value>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::Record { line: 3, .. }), "{err}");
    }
}
