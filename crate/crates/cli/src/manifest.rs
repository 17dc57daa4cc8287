//! The run manifest: a JSON record sufficient to reproduce a run bit for
//! bit — configuration fingerprint, versions, every default that was chosen
//! for the user, seed streams, timings, and the emitted file inventory.

use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::Resolved;
use crate::pipeline::seeds;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// SHA-256 of the configuration file bytes.
    pub config_sha256: String,
    pub versions: BTreeMap<String, String>,
    /// The validated configuration with all defaults filled in; the
    /// `defaulted` list inside names the fields the user left unset.
    pub resolved: Resolved,
    /// Quantities chosen by rules at run time (automatic ranks, sketch
    /// settings, spectra, fixed physics constants).
    pub chosen: BTreeMap<String, serde_json::Value>,
    /// Stream index of every random stage, derived from the master seed.
    pub seed_streams: BTreeMap<String, u64>,
    pub timing_seconds: BTreeMap<String, f64>,
    /// Every file the run emitted, in creation order.
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: String, resolved: Resolved) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("hdsa-core".into(), hdsa_core::VERSION.to_string());
        versions.insert("hdsa-cli".into(), env!("CARGO_PKG_VERSION").to_string());
        Self {
            command: command.to_string(),
            status: "ok".into(),
            error: None,
            config_sha256,
            versions,
            resolved,
            chosen: BTreeMap::new(),
            seed_streams: seeds::table(),
            timing_seconds: BTreeMap::new(),
            files: vec![MANIFEST_FILE.to_string()],
        }
    }

    pub fn choose(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("manifest values serialize");
        self.chosen.insert(key.to_string(), v);
    }

    pub fn add_file(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    pub fn add_timing(&mut self, stage: &str, seconds: f64) {
        self.timing_seconds.insert(stage.to_string(), seconds);
    }

    pub fn mark_failed(&mut self, err: &CliError) {
        self.status = "failed".into();
        self.error = Some(err.to_string());
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }
}
