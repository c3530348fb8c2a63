//! Run manifest and the content-addressed output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Everything that determines the numbers of a run. The timestamp and output
/// root are recorded but excluded from the hash.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub config_path: String,
    /// Hex SHA-256 of the configuration text.
    pub config_sha256: String,
    pub checks: Vec<String>,
    pub samples: usize,
    pub inner: usize,
    pub seed: u64,
    pub step: f64,
    pub burn_in: f64,
    pub family: String,
    pub family_size: usize,
    pub delta_grid: Vec<f64>,
    pub oracle: bool,
}

#[derive(Serialize)]
struct Recorded<'a> {
    #[serde(flatten)]
    manifest: &'a RunManifest,
    hash: String,
    out_root: String,
    timestamp_unix: u64,
}

impl RunManifest {
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("manifest serializes");
        hex(&Sha256::digest(&canonical))
    }

    /// `root/<first 16 hex digits of the hash>`, created fresh. Refuses to
    /// reuse an existing directory unless `force` is set.
    pub fn prepare_dir(&self, root: &Path, force: bool) -> anyhow::Result<PathBuf> {
        let dir = root.join(&self.hash()[..16]);
        if dir.exists() {
            if !force {
                anyhow::bail!("output directory {} already exists for this manifest (use --force to replace it)", dir.display());
            }
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(dir.join("plots"))?;
        Ok(dir)
    }

    pub fn write(&self, dir: &Path, root: &Path) -> anyhow::Result<()> {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let rec = Recorded {
            manifest: self,
            hash: self.hash(),
            out_root: root.display().to_string(),
            timestamp_unix,
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&rec)? + "\n",
        )?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
