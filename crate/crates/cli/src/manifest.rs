//! Run manifests: enough provenance to replay a run exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fairrank::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: RunStatus,
    /// Fully resolved configuration; `--config` on this file replays the run.
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file read by the run.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every artifact written by the run.
    pub artifacts: BTreeMap<String, String>,
    pub duration_secs: f64,
    pub versions: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// A manifest on disk that is rewritten as the run progresses.
pub struct ManifestWriter {
    path: PathBuf,
    started: Instant,
    pub manifest: RunManifest,
}

impl ManifestWriter {
    /// Writes the manifest in the `running` state.
    pub fn start(
        path: PathBuf,
        command: &str,
        config: BTreeMap<String, String>,
        seeds: BTreeMap<String, u64>,
        inputs: &[PathBuf],
    ) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect::<Result<_>>()?;
        let versions = [
            ("fairrank".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest_format".to_string(), "1".to_string()),
        ]
        .into_iter()
        .collect();
        let mut w = Self {
            path,
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                status: RunStatus::Running,
                config,
                seeds,
                inputs,
                artifacts: BTreeMap::new(),
                duration_secs: 0.0,
                versions,
                error: None,
            },
        };
        w.save()?;
        Ok(w)
    }

    fn save(&mut self) -> Result<()> {
        self.manifest.duration_secs = self.started.elapsed().as_secs_f64();
        write_file(
            &self.path,
            &(serde_json::to_string_pretty(&self.manifest)? + "\n"),
        )
    }

    pub fn record_artifact(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.manifest.artifacts.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.status = RunStatus::Complete;
        self.save()?;
        Ok(self.manifest)
    }

    pub fn fail(mut self, err: &Error) -> Result<()> {
        self.manifest.status = RunStatus::Failed;
        self.manifest.error = Some(err.to_string());
        self.save()
    }
}
