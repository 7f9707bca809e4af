//! Versioned, hash-verified checkpoint files.
//!
//! The payload (stack, config echo, layout, iteration, rng root) is written
//! as one canonical JSON string; the file wraps it with a format version and
//! the payload's SHA-256. Loading verifies both before parsing, so a flipped
//! byte or a stale format fails loudly instead of training on garbage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::adapters::AdapterStack;
use crate::error::{Error, Result};
use crate::flow::CondLayout;
use crate::manifest::{self, CHECKPOINT_VERSION};
use crate::numcore::RngStream;

use super::{Stage, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: Stage,
    pub iteration: usize,
    pub config: TrainConfig,
    pub layout: CondLayout,
    pub stack: AdapterStack,
    /// Root stream of the run that produced this checkpoint.
    pub rng: RngStream,
}

#[derive(Serialize)]
struct FileOut<'a> {
    version: u32,
    sha256: &'a str,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct FileIn {
    version: u32,
    sha256: String,
    payload: Box<RawValue>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.stack.validate()?;
        let spec = self.stack.spec();
        if spec.input_dim != self.layout.input_dim() || spec.output_dim != self.layout.data_dim {
            return Err(Error::shape(
                "checkpoint layout",
                format!("model {} -> {}", self.layout.input_dim(), self.layout.data_dim),
                format!("model {} -> {}", spec.input_dim, spec.output_dim),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        let sha = manifest::sha256_hex(payload.as_bytes());
        let raw = RawValue::from_string(payload).map_err(|e| Error::json(path, e))?;
        let file = FileOut {
            version: CHECKPOINT_VERSION,
            sha256: &sha,
            payload: &raw,
        };
        let mut bytes = serde_json::to_vec_pretty(&file).map_err(|e| Error::json(path, e))?;
        bytes.push(b'\n');
        manifest::write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: FileIn = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        manifest::check_version("checkpoint", file.version, CHECKPOINT_VERSION)?;
        let got = manifest::sha256_hex(file.payload.get().as_bytes());
        if got != file.sha256 {
            return Err(Error::Integrity {
                path: path.display().to_string(),
                reason: format!("payload hash {got} != recorded {}", file.sha256),
            });
        }
        let ckpt: Checkpoint =
            serde_json::from_str(file.payload.get()).map_err(|e| Error::json(path, e))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}
