//! Per-run manifest written next to every command's artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ecannot_core::bundle::{sha256_hex, write_atomic};
use serde::Serialize;

pub const RUN_MANIFEST: &str = "run.json";

/// Command, parameters, tool version and the digests of every input and
/// output. No timestamps, so identical reruns produce identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, params: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            params,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Records the digest of an input file under its file name.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.inputs.insert(name, sha256_hex(&bytes));
        Ok(())
    }

    /// Writes `bytes` to `dir/name` atomically and records its digest.
    pub fn output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a digest for an artifact written by someone else.
    pub fn record_output(&mut self, name: &str, digest: String) {
        self.outputs.insert(name.to_string(), digest);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.write_to(&dir.join(RUN_MANIFEST))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        write_atomic(path, format!("{json}\n").as_bytes())?;
        Ok(())
    }
}
