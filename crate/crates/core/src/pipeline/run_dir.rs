use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Result, SmaError};
use crate::persist::Checkpoint;

/// Names of the training stages, in dependency order.
pub const STAGES: [&str; 6] = ["pretrain", "phase1", "phase2", "plastic", "rma", "roa"];

/// All artifacts of a run live under one directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(SmaError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("run directory {} does not exist", root.display()),
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint(&self, stage: &str) -> PathBuf {
        self.root.join(format!("{stage}.ckpt"))
    }

    pub fn metrics(&self, stage: &str) -> PathBuf {
        self.root.join(format!("{stage}.metrics.jsonl"))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Load a prerequisite checkpoint, naming the missing stage on failure.
    pub fn require(&self, stage: &str) -> Result<Checkpoint> {
        let path = self.checkpoint(stage);
        if !path.exists() {
            return Err(SmaError::MissingStage(stage.to_string()));
        }
        Checkpoint::load(&path)
    }

    pub fn load_optional(&self, stage: &str) -> Result<Option<Checkpoint>> {
        let path = self.checkpoint(stage);
        if path.exists() {
            Checkpoint::load(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Write the fully resolved configuration next to the artifacts.
    pub fn echo_config(&self, cfg: &RunConfig) -> Result<PathBuf> {
        let path = self.file("config.toml");
        std::fs::write(&path, cfg.to_toml()?)?;
        Ok(path)
    }
}

/// Stable per-purpose seed derived from the run seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
