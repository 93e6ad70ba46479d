//! JSONL persistence for trajectories, outcomes, samples, and results: one
//! canonical-JSON value per line, appends serialized behind a lock.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line} failed to parse: {detail}")]
    Parse { path: String, line: usize, detail: String },
}

/// Append-only JSONL writer; concurrent appends are serialized so each line
/// stays intact.
pub struct JsonlWriter {
    file: Mutex<File>,
    path: String,
}

impl JsonlWriter {
    pub fn append_to(path: &Path) -> Result<Self, StoreError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| StoreError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| {
            StoreError::Io { path: path.display().to_string(), source: e }
        })?;
        Ok(Self { file: Mutex::new(file), path: path.display().to_string() })
    }

    pub fn append<T: Serialize>(&self, value: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(value).map_err(|e| StoreError::Parse {
            path: self.path.clone(),
            line: 0,
            detail: e.to_string(),
        })?;
        line.push('\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(line.as_bytes())
            .and_then(|()| file.flush())
            .map_err(|e| StoreError::Io { path: self.path.clone(), source: e })
    }
}

/// Reads every line of a JSONL file. A missing file reads as empty, which is
/// what resumption wants.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(file) => file,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => {
            return Err(StoreError::Io { path: path.display().to_string(), source: e })
        }
    };
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| StoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.display().to_string(),
            line: index + 1,
            detail: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Serializes values to JSONL text without touching the filesystem; used by
/// the determinism checks.
pub fn to_jsonl<T: Serialize>(values: &[T]) -> String {
    let mut out = String::new();
    for value in values {
        out.push_str(&serde_json::to_string(value).expect("value serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_then_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("values.jsonl");
        let writer = JsonlWriter::append_to(&path).unwrap();
        writer.append(&serde_json::json!({"a": 1})).unwrap();
        writer.append(&serde_json::json!({"a": 2})).unwrap();
        let values: Vec<serde_json::Value> = read_jsonl(&path).unwrap();
        assert_eq!(values.len(), 2);
        assert_eq!(values[1]["a"], 2);
    }

    #[test]
    fn missing_file_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<serde_json::Value> =
            read_jsonl(&dir.path().join("absent.jsonl")).unwrap();
        assert!(values.is_empty());
    }
}
