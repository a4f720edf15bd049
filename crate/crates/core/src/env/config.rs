use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};

/// Closed sampling interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(SmaError::InvalidRange {
                name: name.to_string(),
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }

    /// Evenly spaced grid of `k` points covering the range.
    pub fn grid(&self, k: usize) -> Vec<f64> {
        match k {
            0 => vec![],
            1 => vec![self.mid()],
            _ => (0..k)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (k - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtrinsicsRanges {
    pub motor_gain: Range,
    pub kp: Range,
    pub kd: Range,
    pub damping: Range,
    pub payload: Range,
}

impl Default for ExtrinsicsRanges {
    fn default() -> Self {
        Self {
            motor_gain: Range::new(0.8, 1.2),
            kp: Range::new(12.5, 37.5),
            kd: Range::new(0.25, 0.75),
            damping: Range::new(0.1, 2.75),
            payload: Range::new(0.75, 1.5),
        }
    }
}

impl ExtrinsicsRanges {
    pub fn validate(&self) -> Result<()> {
        self.motor_gain.validate("motor_gain")?;
        self.kp.validate("kp")?;
        self.kd.validate("kd")?;
        self.damping.validate("damping")?;
        self.payload.validate("payload")
    }

    pub fn as_array(&self) -> [Range; 5] {
        [self.motor_gain, self.kp, self.kd, self.damping, self.payload]
    }
}

/// Uniform observation noise half-widths in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub gravity: f64,
    pub lin_vel: f64,
    pub ang_vel: f64,
    /// Global multiplier on all half-widths.
    pub level: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            joint_pos: 0.01,
            joint_vel: 1.5,
            gravity: 0.05,
            lin_vel: 0.1,
            ang_vel: 0.2,
            level: 1.0,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            level: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsScales {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub clip: f64,
}

impl Default for ObsScales {
    fn default() -> Self {
        Self {
            lin_vel: 2.0,
            ang_vel: 0.25,
            joint_pos: 1.0,
            joint_vel: 0.05,
            clip: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardScales {
    pub tracking_lin_vel: f64,
    pub tracking_ang_vel: f64,
    pub ang_vel_xy: f64,
    pub torque: f64,
    pub dof_acc: f64,
    pub action_rate: f64,
    /// Width of the tracking kernel `exp(-‖x‖²/sigma)`.
    pub tracking_sigma: f64,
    /// Multiply the clipped per-step reward by the policy period.
    pub scale_by_dt: bool,
}

impl Default for RewardScales {
    fn default() -> Self {
        Self {
            tracking_lin_vel: 1.0,
            tracking_ang_vel: 0.5,
            ang_vel_xy: -0.05,
            torque: -0.0002,
            dof_acc: -2.5e-7,
            action_rate: -0.01,
            tracking_sigma: 0.25,
            scale_by_dt: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommandRanges {
    pub lin_vel: Range,
    pub ang_vel: Range,
    /// Draw a fresh command every this many policy steps within an episode;
    /// 0 holds the reset command for the whole episode.
    pub resample_every: usize,
}

impl Default for CommandRanges {
    fn default() -> Self {
        Self {
            lin_vel: Range::new(-1.0, 1.0),
            ang_vel: Range::new(-1.0, 1.0),
            resample_every: 0,
        }
    }
}

/// Full environment configuration. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Physics substep (s).
    pub dt: f64,
    /// Physics substeps per policy step.
    pub decimation: usize,
    pub max_episode_len: usize,
    pub torque_limit: f64,
    pub inertia: f64,
    /// Constant load torque per joint, multiplied by the payload.
    pub load_torque: [f64; 2],
    pub action_scale: f64,
    pub default_q: [f64; 2],
    /// Episode fails when a joint deflects further than this from default.
    pub q_limit: f64,
    /// Half-width of the uniform initial joint deflection.
    pub init_q_noise: f64,
    /// Rows map joint deflection to (forward velocity, yaw rate).
    pub kinematics: [[f64; 2]; 2],
    /// Body roll/pitch rate per unit joint velocity.
    pub wobble_gain: f64,
    /// Sample extrinsics from `ranges` at every reset; otherwise `nominal`.
    pub randomize: bool,
    pub ranges: ExtrinsicsRanges,
    pub nominal: super::ExtrinsicsVector,
    pub noise: NoiseConfig,
    pub obs_scales: ObsScales,
    pub commands: CommandRanges,
    pub rewards: RewardScales,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            decimation: 4,
            max_episode_len: 500,
            torque_limit: 10.0,
            inertia: 0.05,
            load_torque: [-6.0, -3.0],
            action_scale: 0.25,
            default_q: [0.0, 0.0],
            q_limit: 1.5,
            init_q_noise: 0.1,
            kinematics: [[1.0, -1.0], [1.0, 1.0]],
            wobble_gain: 0.2,
            randomize: true,
            ranges: ExtrinsicsRanges::default(),
            nominal: super::ExtrinsicsVector::nominal(),
            noise: NoiseConfig::default(),
            obs_scales: ObsScales::default(),
            commands: CommandRanges::default(),
            rewards: RewardScales::default(),
        }
    }
}

impl EnvConfig {
    /// Noise-free, nominal-dynamics variant used for pre-training.
    pub fn noise_free(&self) -> Self {
        Self {
            randomize: false,
            noise: NoiseConfig { level: 0.0, ..self.noise.clone() },
            ..self.clone()
        }
    }

    pub fn obs_dim(&self) -> usize {
        super::OBS_DIM
    }

    pub fn policy_dt(&self) -> f64 {
        self.dt * self.decimation as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || self.decimation == 0 || self.max_episode_len == 0 {
            return Err(SmaError::Config("dt, decimation and episode length must be positive".into()));
        }
        if self.inertia <= 0.0 || self.torque_limit <= 0.0 {
            return Err(SmaError::Config("inertia and torque limit must be positive".into()));
        }
        self.ranges.validate()?;
        self.commands.lin_vel.validate("commands.lin_vel")?;
        self.commands.ang_vel.validate("commands.ang_vel")?;
        if self.ranges.payload.lo <= 0.0 || self.nominal.payload <= 0.0 {
            return Err(SmaError::Config("payload must be positive".into()));
        }
        Ok(())
    }
}
