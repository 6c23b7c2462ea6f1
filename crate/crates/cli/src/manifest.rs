//! Run manifests written next to every command's outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use jointreg::corpus::write_json;
use jointreg::Result;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

/// Baked in at build time when available, e.g. `JOINTREG_REVISION=$(git rev-parse HEAD)`.
pub fn source_revision() -> String {
    match option_env!("JOINTREG_REVISION") {
        Some(rev) => format!("{} ({rev})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn now() -> Option<u64> {
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub source_revision: String,
    pub seed: u64,
    /// Everything needed to rerun the command, after flag overrides.
    pub config: serde_json::Value,
    /// Unix seconds. Left out in reference mode so reruns are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_unix: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<u64>,
    pub reference: bool,
    pub threads: usize,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    /// Set when the command stopped on an error after writing some outputs.
    pub partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Command-specific results that have no file of their own.
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn start<C: Serialize>(command: &str, config: &C, seed: u64, reference: bool, threads: usize) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            source_revision: source_revision(),
            seed,
            config: serde_json::to_value(config)?,
            started_unix: if reference { None } else { now() },
            finished_unix: None,
            reference,
            threads,
            artifacts: Vec::new(),
            partial: false,
            error: None,
            summary: serde_json::Value::Null,
        })
    }

    /// Records `path`, stored relative to `root` when it lies inside it.
    pub fn add(&mut self, root: &Path, path: &Path) {
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.artifacts.push(rel.to_string_lossy().replace('\\', "/"));
    }

    pub fn add_all(&mut self, root: &Path, paths: &[PathBuf]) {
        for p in paths {
            self.add(root, p);
        }
    }

    pub fn finish(mut self, root: &Path, error: Option<&jointreg::Error>) -> Result<()> {
        if !self.reference {
            self.finished_unix = now();
        }
        if let Some(e) = error {
            self.partial = true;
            self.error = Some(e.to_string());
        }
        write_json(&root.join(MANIFEST_FILE), &self)
    }
}
