use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Hash of the stage parameters and the contents of its inputs.
    pub key: String,
    /// Output file name (relative to the run directory) to content hash.
    pub outputs: BTreeMap<String, String>,
}

/// Record of a run: enough to check artifacts and to re-run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// The effective configuration, as TOML.
    pub config: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Checks that every recorded output exists with its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for s in &self.stages {
            for (file, hash) in &s.outputs {
                let actual = sha256_file(&dir.join(file))?;
                if &actual != hash {
                    return Err(Error::Data(format!(
                        "artifact `{file}` of stage `{}` does not match the manifest",
                        s.name
                    )));
                }
            }
        }
        Ok(())
    }
}
