//! Run manifests: the config snapshot, input digests, and output paths of a
//! command, written next to its artifacts so any run can be reproduced and
//! its inputs verified.

use reslt_core::trainer::TrainConfig;
use reslt_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub train_data: DataRef,
    pub test_data: DataRef,
    pub outputs: Vec<String>,
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn data_ref(path: &Path) -> Result<DataRef> {
    Ok(DataRef {
        path: path.display().to_string(),
        sha256: file_digest(path)?,
    })
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}
