use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Provenance record written next to every output artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub flags: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, flags: Value, seed: Option<u64>, wall_time_s: f64, outputs: &[PathBuf]) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            flags,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    /// `<artifact>.run.json`, written through a temporary file and a rename.
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".run.json");
        artifact.with_file_name(name)
    }

    pub fn write_beside(&self, artifact: &Path) -> winoq::Result<()> {
        let path = Self::path_for(artifact);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}
