use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use prism_core::cohort::FileHash;
use prism_core::digest::{hash_file, write_hashed};
use prism_core::{PrismError, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const TIMINGS: &str = "timings.json";

/// Record of one command invocation. Wall-clock timings live in a separate
/// file so that this one is reproducible byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

/// Output directory that remembers the hash of every file written into it.
pub struct OutDir {
    root: PathBuf,
    outputs: BTreeMap<String, String>,
    inputs: Vec<FileHash>,
    timings: Vec<(String, f64)>,
    stage_start: Option<(String, Instant)>,
}

impl OutDir {
    /// Create `root`, refusing a non-empty directory unless `force`.
    pub fn prepare(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            let mut entries = fs::read_dir(root).map_err(|e| PrismError::io(root, e))?;
            if entries.next().is_some() && !force {
                return Err(PrismError::config(format!(
                    "output directory {} is not empty (pass --force to overwrite)",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root).map_err(|e| PrismError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            outputs: BTreeMap::new(),
            inputs: Vec::new(),
            timings: Vec::new(),
            stage_start: None,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PrismError::io(parent, e))?;
        }
        let h = write_hashed(&path, bytes)?;
        self.outputs.insert(rel.to_string(), h);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes =
            serde_json::to_vec_pretty(value).map_err(|e| PrismError::io(self.path(rel), e))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Register a file written by other code (for example a checkpoint).
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let h = hash_file(&self.path(rel))?;
        self.outputs.insert(rel.to_string(), h);
        Ok(())
    }

    /// Register an input by file name and content hash.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.inputs.push(FileHash {
            path: name,
            sha256: hash_file(path)?,
        });
        Ok(())
    }

    pub fn stage(&mut self, name: &str) {
        self.end_stage();
        self.stage_start = Some((name.to_string(), Instant::now()));
    }

    fn end_stage(&mut self) {
        if let Some((name, t)) = self.stage_start.take() {
            self.timings.push((name, t.elapsed().as_secs_f64()));
        }
    }

    /// Write the run manifest and the timings file.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> Result<RunManifest> {
        self.end_stage();
        let manifest = RunManifest {
            tool: "prism".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            inputs: self.inputs.clone(),
            outputs: self
                .outputs
                .iter()
                .map(|(p, h)| FileHash {
                    path: p.clone(),
                    sha256: h.clone(),
                })
                .collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| PrismError::io(self.path(RUN_MANIFEST), e))?;
        bytes.push(b'\n');
        write_hashed(&self.path(RUN_MANIFEST), &bytes)?;
        let timings: BTreeMap<String, f64> = self.timings.into_iter().collect();
        let t = serde_json::to_vec_pretty(&timings)
            .map_err(|e| PrismError::io(self.root.join(TIMINGS), e))?;
        fs::write(self.root.join(TIMINGS), t)
            .map_err(|e| PrismError::io(self.root.join(TIMINGS), e))?;
        Ok(manifest)
    }
}
