//! Line-oriented JSON file helpers with transparent gzip/bzip2 decoding
//! and atomic writes.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("cannot access {path}")]
    Io {
        #[source]
        source: std::io::Error,
        path: String,
    },
    #[error("{path}:{line}: invalid record")]
    Malformed {
        #[source]
        source: serde_json::Error,
        path: String,
        line: usize,
    },
}

fn io_err(source: std::io::Error, path: &Path) -> JsonlError {
    JsonlError::Io { source, path: path.display().to_string() }
}

/// Open a file for buffered reading, decoding `.gz` and `.bz2` by extension.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>, JsonlError> {
    let file = File::open(path).map_err(|e| io_err(e, path))?;
    let reader: Box<dyn Read> = match path.extension().and_then(|e| e.to_str()) {
        Some("gz") => Box::new(flate2::read::MultiGzDecoder::new(file)),
        Some("bz2") => Box::new(bzip2::read::MultiBzDecoder::new(file)),
        _ => Box::new(file),
    };
    Ok(Box::new(BufReader::new(reader)))
}

/// Write bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JsonlError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(e, dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(e, path))?;
    tmp.write_all(bytes).map_err(|e| io_err(e, path))?;
    tmp.persist(path).map_err(|e| io_err(e.error, path))?;
    Ok(())
}

/// Read a whole JSONL file into typed records. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let reader = open_input(path)?;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(e, path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| JsonlError::Malformed {
            source,
            path: path.display().to_string(),
            line: idx + 1,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Serialize records one per line and write atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let mut bytes = Vec::new();
    for record in records {
        serde_json::to_writer(&mut bytes, record).map_err(|source| JsonlError::Malformed {
            source,
            path: path.display().to_string(),
            line: 0,
        })?;
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}
