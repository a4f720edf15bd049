//! Run configuration with `desk` and `paper` profiles.
//!
//! Every field has a default, so a config file only needs the keys it
//! changes. Values resolve in this order: profile defaults, config file,
//! `SMA_*` environment variables, command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Result, SmaError};
use crate::plasticity::{ModulatorBroadcast, DEFAULT_UPDATE_SCALE};
use crate::rl::{A2cConfig, PpoConfig};

pub const ENV_PREFIX: &str = "SMA_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = SmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(SmaError::Config(format!("unknown profile {other:?} (desk | paper)"))),
        }
    }
}

/// Network shapes and plasticity constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub pop_per_action: usize,
    pub surrogate_slope: f64,
    pub surrogate_width: f64,
    pub readout_gain: f64,
    pub init_bias: f64,
    pub init_log_std: f64,
    pub plastic_layer: usize,
    pub broadcast: ModulatorBroadcast,
    pub update_scale: f64,
    pub trace_beta: f64,
    pub modulator_gain: f64,
    pub latent_dim: usize,
    pub history: usize,
    pub encoder_hidden: Vec<usize>,
    pub estimator_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 16],
            pop_per_action: 8,
            surrogate_slope: 0.3,
            surrogate_width: 1.0,
            readout_gain: 4.0,
            init_bias: 0.05,
            init_log_std: -0.5,
            plastic_layer: 2,
            broadcast: ModulatorBroadcast::PerPost,
            update_scale: DEFAULT_UPDATE_SCALE,
            trace_beta: 1.0,
            modulator_gain: 50.0,
            latent_dim: 8,
            history: 10,
            encoder_hidden: vec![64, 64],
            estimator_hidden: vec![64, 64],
            value_hidden: vec![64, 64],
        }
    }
}

/// Pre-training of the non-plastic base policy with PPO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub n_envs: usize,
    pub n_steps: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub ppo: PpoConfig,
    /// Mean per-episode return on noise-free evaluation episodes that counts
    /// as converged.
    pub return_threshold: f64,
    pub eval_episodes: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            n_envs: 16,
            n_steps: 25,
            lr: 1e-3,
            lr_decay: 0.999,
            ppo: PpoConfig {
                window: 25,
                ..PpoConfig::default()
            },
            return_threshold: 10.0,
            eval_episodes: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    A2c,
    Ppo,
}

/// Adaptation training under randomized dynamics (plastic, latent and
/// joint-regularized variants share this schedule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub algo: Algo,
    pub iterations: usize,
    pub n_envs: usize,
    pub n_steps: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Learning-rate decay of the plasticity parameters per update.
    pub plastic_lr_decay: f64,
    pub a2c: A2cConfig,
    pub ppo: PpoConfig,
    /// Abort when the plastic weight change norm exceeds this.
    pub max_delta_norm: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            algo: Algo::A2c,
            iterations: 300,
            n_envs: 16,
            n_steps: 30,
            lr: 3e-4,
            lr_decay: 1.0,
            plastic_lr_decay: 0.995,
            a2c: A2cConfig::default(),
            ppo: PpoConfig::default(),
            max_delta_norm: 1e3,
        }
    }
}

/// Supervised regression of the context estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorTrainConfig {
    pub n_envs: usize,
    /// Policy steps collected per env for the dataset.
    pub steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    /// Fraction of the training envs used to pick the best epoch.
    pub validation_fraction: f64,
}

impl Default for EstimatorTrainConfig {
    fn default() -> Self {
        Self {
            n_envs: 256,
            steps: 100,
            epochs: 60,
            batch_size: 256,
            lr: 1e-3,
            holdout_fraction: 0.2,
            validation_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoaConfig {
    /// Weight of the encoder-side regularizer.
    pub lambda: f64,
}

impl Default for RoaConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalAxis {
    MotorGain,
    PGain,
    DGain,
    Friction,
    ObservationNoise,
    /// Every extrinsic drawn from its full range.
    Randomized,
    /// Nominal dynamics without observation noise.
    NoNoise,
}

impl EvalAxis {
    pub fn label(self) -> &'static str {
        match self {
            Self::MotorGain => "motor_gain",
            Self::PGain => "p_gain",
            Self::DGain => "d_gain",
            Self::Friction => "friction",
            Self::ObservationNoise => "obs_noise",
            Self::Randomized => "randomized",
            Self::NoNoise => "no_noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub axes: Vec<EvalAxis>,
    /// Grid points per axis.
    pub grid: usize,
    pub episodes_per_sample: usize,
    /// Paired evaluation seeds used by the directional comparisons.
    pub paired_seeds: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            axes: vec![
                EvalAxis::NoNoise,
                EvalAxis::MotorGain,
                EvalAxis::PGain,
                EvalAxis::DGain,
                EvalAxis::Friction,
                EvalAxis::ObservationNoise,
            ],
            grid: 5,
            episodes_per_sample: 4,
            paired_seeds: 20,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub net: NetConfig,
    pub pretrain: PretrainConfig,
    pub phase1: AdaptConfig,
    pub phase2: EstimatorTrainConfig,
    pub roa: RoaConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 0,
            out_dir: PathBuf::from("runs/desk"),
            env: EnvConfig::default(),
            net: NetConfig::default(),
            pretrain: PretrainConfig::default(),
            phase1: AdaptConfig::default(),
            phase2: EstimatorTrainConfig::default(),
            roa: RoaConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Full-size networks and batch shapes of the original setup. Far too
    /// slow for a single CPU; kept for reference runs.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.profile = Profile::Paper;
        c.out_dir = PathBuf::from("runs/paper");
        c.net.hidden = vec![512, 128, 64];
        c.pretrain.n_envs = 256;
        c.pretrain.iterations = 3000;
        c.phase1.n_envs = 256;
        c.phase1.iterations = 3000;
        c.phase2.n_envs = 256;
        c.phase2.steps = 500;
        c.eval.grid = 11;
        c.eval.episodes_per_sample = 20;
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Parse TOML on top of the defaults of the profile named in the text
    /// (or `base` when it names none).
    pub fn from_toml_str(text: &str, base: Profile) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e| SmaError::Config(format!("{e}")))?;
        let profile = match doc.get("profile").and_then(|v| v.as_str()) {
            Some(p) => p.parse()?,
            None => base,
        };
        let mut merged = toml::Table::try_from(Self::for_profile(profile))
            .map_err(|e| SmaError::Config(format!("{e}")))?;
        merge_tables(&mut merged, doc);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| SmaError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, base)
    }

    /// Apply `SMA_<SECTION>__<KEY>=value` overrides (double underscore
    /// separates nesting levels; `SMA_SEED`, `SMA_OUT_DIR` for top-level
    /// keys). Values are parsed as TOML literals, falling back to strings.
    pub fn apply_env_overrides<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = toml::Table::try_from(&*self).map_err(|e| SmaError::Config(format!("{e}")))?;
        let mut touched = false;
        for (k, v) in vars {
            let Some(rest) = k.strip_prefix(ENV_PREFIX) else { continue };
            let path: Vec<String> = rest.to_ascii_lowercase().split("__").map(str::to_string).collect();
            let value = parse_literal(&v);
            set_path(&mut table, &path, value).map_err(|e| SmaError::Config(format!("{k}: {e}")))?;
            touched = true;
        }
        if touched {
            *self = table.try_into().map_err(|e: toml::de::Error| SmaError::Config(format!("{e}")))?;
            self.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SmaError::Config(format!("{e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.net.hidden.is_empty() || self.net.plastic_layer == 0 || self.net.plastic_layer > self.net.hidden.len() {
            return Err(SmaError::Config(format!(
                "plastic layer {} must index a spiking layer after the first (1..={})",
                self.net.plastic_layer,
                self.net.hidden.len()
            )));
        }
        for (name, n) in [
            ("pretrain.n_envs", self.pretrain.n_envs),
            ("pretrain.n_steps", self.pretrain.n_steps),
            ("phase1.n_envs", self.phase1.n_envs),
            ("phase1.n_steps", self.phase1.n_steps),
            ("phase2.n_envs", self.phase2.n_envs),
            ("net.history", self.net.history),
            ("eval.grid", self.eval.grid),
            ("eval.episodes_per_sample", self.eval.episodes_per_sample),
        ] {
            if n == 0 {
                return Err(SmaError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.phase2.holdout_fraction) || !(0.0..1.0).contains(&self.phase2.validation_fraction) {
            return Err(SmaError::Config("phase2 holdout and validation fractions must be in [0,1)".into()));
        }
        Ok(())
    }
}

fn parse_literal(v: &str) -> toml::Value {
    let wrapped = format!("x = {v}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap_or_else(|| toml::Value::String(v.to_string())),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut cur = table;
    for p in parents {
        cur = cur
            .get_mut(p)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| format!("unknown section {p:?}"))?;
    }
    if !cur.contains_key(last) {
        return Err(format!("unknown key {last:?}"));
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_profile_default() {
        assert_eq!(RunConfig::from_toml_str("", Profile::Desk).unwrap(), RunConfig::desk());
        assert_eq!(RunConfig::from_toml_str("profile = \"paper\"", Profile::Desk).unwrap(), RunConfig::paper());
    }

    #[test]
    fn echoed_config_round_trips() {
        let mut c = RunConfig::desk();
        c.seed = 42;
        c.env.ranges.kp.hi = 30.0;
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, Profile::Desk).unwrap(), c);
    }

    #[test]
    fn partial_sections_merge() {
        let c = RunConfig::from_toml_str("[pretrain]\niterations = 3\n[env.noise]\nlevel = 0.5\n", Profile::Desk).unwrap();
        assert_eq!(c.pretrain.iterations, 3);
        assert_eq!(c.pretrain.n_steps, RunConfig::desk().pretrain.n_steps);
        assert_eq!(c.env.noise.level, 0.5);
    }

    #[test]
    fn env_overrides_apply() {
        let mut c = RunConfig::desk();
        c.apply_env_overrides(vec![
            ("SMA_SEED".to_string(), "7".to_string()),
            ("SMA_PHASE1__LR".to_string(), "0.01".to_string()),
            ("SMA_OUT_DIR".to_string(), "/tmp/x".to_string()),
            ("PATH".to_string(), "ignored".to_string()),
        ])
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.phase1.lr, 0.01);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_override_is_an_error() {
        let mut c = RunConfig::desk();
        assert!(c.apply_env_overrides(vec![("SMA_NOPE".to_string(), "1".to_string())]).is_err());
    }

    #[test]
    fn invalid_plastic_layer_is_rejected() {
        assert!(RunConfig::from_toml_str("[net]\nplastic_layer = 0\n", Profile::Desk).is_err());
    }
}
