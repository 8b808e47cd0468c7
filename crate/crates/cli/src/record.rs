//! Per-run provenance: resolved parameters, seed, tool version and the
//! sha256 of every input file, written next to each primary output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    /// Input path (as given) to lowercase hex sha256.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, params: impl Serialize) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            params: serde_json::to_value(params).expect("parameters serialize to JSON"),
            inputs: BTreeMap::new(),
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.insert(
            path.display().to_string(),
            hex::encode(Sha256::digest(&bytes)),
        );
        Ok(())
    }

    /// Hash a model manifest together with every weight blob it names.
    pub fn hash_model(&mut self, manifest: &Path) -> Result<(), CliError> {
        self.hash_input(manifest)?;
        let text = std::fs::read(manifest)
            .map_err(|e| CliError::Input(format!("{}: {e}", manifest.display())))?;
        let Ok(value) = serde_json::from_slice::<serde_json::Value>(&text) else {
            return Ok(());
        };
        let base = manifest.parent().unwrap_or(Path::new("."));
        let blobs = value["layers"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|l| l["weights"].as_str());
        for rel in blobs {
            self.hash_input(&base.join(rel))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn write_for(&self, output: &Path) -> Result<PathBuf, CliError> {
        let path = sibling(output, "run.json");
        write_file(&path, self.to_json())?;
        Ok(path)
    }
}

/// `<output>.<suffix>`
pub fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
