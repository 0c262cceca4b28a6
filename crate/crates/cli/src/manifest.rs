//! The run manifest: everything needed to repeat a run, written before any
//! solve starts and completed with artifact checksums at the end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
    pub overrides: Overrides,
    pub seed: u64,
    pub out: PathBuf,
    /// File name to SHA-256, filled in after the outputs are written.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default)]
    pub halve_dt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default)]
    pub audit_only: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text).map_err(|e| CliError::io(dir, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
    }

    /// Records the checksum of every listed output file.
    pub fn record(&mut self, dir: &Path, files: &[String]) -> Result<(), CliError> {
        self.artifacts.clear();
        for f in files {
            let bytes = fs::read(dir.join(f)).map_err(|e| CliError::io(dir, e))?;
            self.artifacts.insert(f.clone(), sha256_hex(&bytes));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            command: "simulate".into(),
            scenario: Some("s.toml".into()),
            scenario_sha256: Some("00".into()),
            instance: None,
            overrides: Overrides {
                mode: Some("both".into()),
                halve_dt: 2,
                tol: Some(1e-9),
                audit_only: false,
            },
            seed: 3,
            out: dir.path().to_path_buf(),
            artifacts: BTreeMap::from([("a.csv".to_string(), "ff".to_string())]),
        };
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
    }
}
