//! Versioned artifact IO: JSON manifests, raw f64 arrays, content hashes.
//!
//! Every on-disk artifact is either a JSON document or a raw little-endian
//! f64 array described by a JSON manifest next to it. Manifests carry a
//! format version and the sha256 of each binary payload, so loads fail loudly
//! on truncation, corruption, or format drift. All writes go through a
//! temp-file rename, which keeps partially written artifacts invisible.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Writes via a sibling temp file plus rename so readers never observe a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    name.push_str(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes as pretty JSON with a trailing newline. Field order follows the
/// struct definition, so output bytes are stable for equal values.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Shape and content digest of one binary array file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayMeta {
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

/// Writes a row-major f64 array as little-endian bytes; returns its metadata.
pub fn write_f64_array(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<ArrayMeta> {
    if data.len() != rows * cols {
        return Err(Error::shape(
            "write_f64_array",
            format!("{rows}x{cols} = {}", rows * cols),
            format!("{}", data.len()),
        ));
    }
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let sha256 = sha256_hex(&bytes);
    write_atomic(path, &bytes)?;
    Ok(ArrayMeta { rows, cols, sha256 })
}

/// Reads an array back, verifying length and digest against the manifest.
pub fn read_f64_array(path: &Path, meta: &ArrayMeta) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expect = meta.rows * meta.cols * 8;
    if bytes.len() != expect {
        return Err(Error::Integrity {
            path: path.display().to_string(),
            reason: format!("expected {expect} bytes, found {}", bytes.len()),
        });
    }
    let digest = sha256_hex(&bytes);
    if digest != meta.sha256 {
        return Err(Error::Integrity {
            path: path.display().to_string(),
            reason: "sha256 mismatch".to_string(),
        });
    }
    let mut data = Vec::with_capacity(meta.rows * meta.cols);
    for chunk in bytes.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().expect("chunks_exact(8)")));
    }
    Ok(data)
}

pub fn check_version(kind: &str, found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Version {
            kind: kind.to_string(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Provenance record written at the end of every CLI run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub input_sha256: Vec<(String, String)>,
    pub outputs: Vec<String>,
    pub artifact_version: u32,
    pub wall_ms: u64,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
