//! Reproducibility stamps written next to every artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use g3_core::embedstore::ids_path;

#[derive(Debug, Serialize)]
pub struct Stamp {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// sha256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Stamp {
    pub fn new(command: &str, seed: Option<u64>, config: impl Serialize) -> Result<Self> {
        Ok(Stamp {
            tool: "g3",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        if path.extension().is_some_and(|e| e == "geb") {
            let ids = ids_path(path);
            if ids.exists() {
                self.inputs.insert(ids.display().to_string(), sha256_file(&ids)?);
            }
        }
        Ok(self)
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<&mut Self> {
        for p in paths {
            self.input(p)?;
        }
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// `out.json` gets `out.json.stamp.json`.
    pub fn write_beside(&self, artifact: &Path) -> Result<()> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".stamp.json");
        self.write(Path::new(&name))
    }
}
