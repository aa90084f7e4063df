use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// One per run: what was asked for, what was read and what was written.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_time_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    pub parameters: BTreeMap<String, Value>,
    pub seed: Option<u64>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: vec![],
            outputs: vec![],
            parameters: BTreeMap::new(),
            seed: None,
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(
            key.to_string(),
            serde_json::to_value(value).expect("parameter serializes"),
        );
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    /// Writes `bytes` to `path` and records its digest.
    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn first_output(&self) -> Option<&str> {
        self.outputs.first().map(|d| d.path.as_str())
    }

    pub fn finish(self, target: Option<&Path>) -> anyhow::Result<PathBuf> {
        let path = match target {
            Some(p) => p.to_path_buf(),
            None => match self.first_output() {
                Some(out) => PathBuf::from(format!("{out}.manifest.json")),
                None => PathBuf::from(format!("ldpkit-{}.manifest.json", self.command)),
            },
        };
        let manifest = RunManifest {
            command: self.command,
            parameters: Value::Object(self.parameters.into_iter().collect()),
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
