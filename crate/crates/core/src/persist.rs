//! Versioned on-disk formats.
//!
//! * Checkpoints: a magic header line `SMA-CHECKPOINT v1` followed by one
//!   JSON document with the stage name, model description, estimator
//!   description (if any), every named parameter tensor and free-form
//!   metadata.
//! * Metrics: a header line `SMA-METRICS v1` followed by one JSON record
//!   per line, appended and flushed as training progresses.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};
use crate::metagrad::ParameterSet;
use crate::rl::{ActorCritic, EstimatorSpec, UpdateStats};

pub const CHECKPOINT_MAGIC: &str = "SMA-CHECKPOINT v1";
pub const METRICS_MAGIC: &str = "SMA-METRICS v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: String,
    pub model: ActorCritic,
    pub estimator: Option<EstimatorSpec>,
    pub params: ParameterSet,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(stage: &str, model: ActorCritic, params: ParameterSet) -> Self {
        Self {
            stage: stage.to_string(),
            model,
            estimator: None,
            params,
            meta: serde_json::Map::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        if let Ok(v) = serde_json::to_value(value) {
            self.meta.insert(key.to_string(), v);
        }
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            writeln!(w, "{CHECKPOINT_MAGIC}")?;
            serde_json::to_writer(&mut w, self)?;
            writeln!(w)?;
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |reason: String| SmaError::Corrupt {
            path: path.display().to_string(),
            reason,
        };
        let file = File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        if header.trim_end() != CHECKPOINT_MAGIC {
            return Err(corrupt(format!("bad header {:?}", header.trim_end())));
        }
        let ckpt: Self = serde_json::from_reader(reader).map_err(|e| corrupt(e.to_string()))?;
        ckpt.model.agent.validate().map_err(|e| corrupt(e.to_string()))?;
        ckpt.model.agent.bind(&ckpt.params).map_err(|e| corrupt(e.to_string()))?;
        Ok(ckpt)
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub iteration: usize,
    pub env_steps: u64,
    /// Mean per-step reward of the rollout.
    pub mean_reward: f64,
    /// Mean return of episodes that finished during the rollout.
    pub mean_return: Option<f64>,
    #[serde(flatten)]
    pub update: UpdateStats,
    /// Frobenius norm of the plastic weight change, averaged over envs.
    #[serde(default)]
    pub delta_norm: Option<f64>,
    /// Mean absolute modulator value, averaged over the rollout.
    #[serde(default)]
    pub modulator_abs: Option<f64>,
}

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Truncate (or create) the stream and write the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_MAGIC}")?;
        out.flush()?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
        })
    }

    /// Open an existing stream for appending after checking its header.
    pub fn append(path: &Path) -> Result<Self> {
        read_header(path, METRICS_MAGIC)?;
        let out = BufWriter::new(OpenOptions::new().append(true).open(path)?);
        Ok(Self {
            path: path.to_path_buf(),
            out,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        writeln!(self.out)?;
        self.out.flush()?;
        Ok(())
    }
}

fn read_header(path: &Path, magic: &str) -> Result<BufReader<File>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if header.trim_end() != magic {
        return Err(SmaError::Corrupt {
            path: path.display().to_string(),
            reason: format!("expected header {magic:?}"),
        });
    }
    Ok(reader)
}

/// Read every record of a training-loop metrics stream.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    read_records(path)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v).map_err(|e| SmaError::Corrupt {
                path: path.display().to_string(),
                reason: format!("record {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Read every record of a metrics stream as untyped JSON.
pub fn read_records(path: &Path) -> Result<Vec<serde_json::Value>> {
    let reader = read_header(path, METRICS_MAGIC)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SmaError::Corrupt {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", i + 2),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::pipeline::models::base_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = RunConfig::desk();
        let (ac, ps) = base_model(&cfg.net, &cfg.env, &mut ChaCha8Rng::seed_from_u64(0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = Checkpoint::new("pretrain", ac, ps).with_meta("eval_return", 1.25);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params.checksum(), ck.params.checksum());
    }

    #[test]
    fn corrupt_checkpoint_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "SMA-CHECKPOINT v1\n{not json").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("bad.ckpt"), "{err}");
        std::fs::write(&path, "hello\n").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(SmaError::Corrupt { .. })));
    }

    #[test]
    fn metrics_stream_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let rec = MetricRecord {
            stage: "pretrain".into(),
            iteration: 3,
            env_steps: 100,
            mean_reward: 0.5,
            mean_return: None,
            update: UpdateStats::default(),
            delta_norm: Some(0.1),
            modulator_abs: None,
        };
        {
            let mut w = MetricsWriter::create(&path).unwrap();
            w.write(&rec).unwrap();
        }
        MetricsWriter::append(&path).unwrap().write(&rec).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), vec![rec.clone(), rec]);
    }
}
