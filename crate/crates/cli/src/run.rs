//! Run directories: config snapshot, input/output hashes and a lock file.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rovernav::dataset::sha256_file;

use crate::config::ExperimentConfig;

pub const RUN_MANIFEST: &str = "run.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub config_sha256: String,
    /// Upstream run directories and the files this stage read from them.
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Checks that `dir` is the output of one of `stages` and returns its
/// manifest and config snapshot.
pub fn require_upstream(dir: &Path, stages: &[&str]) -> Result<(RunManifest, ExperimentConfig)> {
    if !dir.join(RUN_MANIFEST).exists() {
        bail!(
            "provenance error: {} has no {RUN_MANIFEST}; it must be produced by `rovernav {}`",
            dir.display(),
            stages.join("` or `rovernav ")
        );
    }
    let m = RunManifest::read(dir)?;
    if !stages.contains(&m.stage.as_str()) {
        bail!("provenance error: {} was produced by `{}`, expected `{}`", dir.display(), m.stage, stages.join("` or `"));
    }
    for out in &m.outputs {
        let p = dir.join(&out.path);
        let h = sha256_file(&p).with_context(|| format!("provenance error: missing {}", p.display()))?;
        if h != out.sha256 {
            bail!("provenance error: {} changed since it was written", p.display());
        }
    }
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_SNAPSHOT))?;
    Ok((m, cfg))
}

/// An output directory held for the duration of one stage.
pub struct RunDir {
    pub path: PathBuf,
    stage: &'static str,
    inputs: Vec<FileHash>,
}

impl RunDir {
    pub fn create(path: &Path, stage: &'static str, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK_FILE);
        OpenOptions::new().write(true).create_new(true).open(&lock).with_context(|| {
            format!("{} is locked by another stage (remove {} if no stage is running)", path.display(), lock.display())
        })?;
        let run = Self { path: path.to_path_buf(), stage, inputs: Vec::new() };
        let _ = fs::remove_file(path.join(RUN_MANIFEST));
        fs::write(path.join(CONFIG_SNAPSHOT), cfg.to_toml())?;
        Ok(run)
    }

    pub fn add_input(&mut self, file: &Path) -> Result<()> {
        let sha256 = sha256_file(file).with_context(|| format!("hashing {}", file.display()))?;
        self.inputs.push(FileHash { path: file.display().to_string(), sha256 });
        Ok(())
    }

    /// Writes the manifest over the given output files (relative to the run
    /// directory) and releases the lock.
    pub fn finish(self, outputs: &[String]) -> Result<RunManifest> {
        let mut hashes = Vec::with_capacity(outputs.len());
        for o in outputs {
            hashes.push(FileHash { path: o.clone(), sha256: sha256_file(&self.path.join(o))? });
        }
        let manifest = RunManifest {
            stage: self.stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_file(&self.path.join(CONFIG_SNAPSHOT))?,
            inputs: self.inputs.clone(),
            outputs: hashes,
        };
        fs::write(self.path.join(RUN_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}
