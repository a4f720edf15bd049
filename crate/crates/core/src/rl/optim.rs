use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};
use crate::metagrad::{Gradients, ParameterSet};

/// Exponentially decaying learning rate: `lr0 · decay^n` after `n` updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
}

impl LrSchedule {
    pub const fn new(lr0: f64, decay: f64) -> Self {
        Self { lr0, decay }
    }

    pub fn at(&self, n: u64) -> f64 {
        self.lr0 * self.decay.powi(n.min(i32::MAX as u64) as i32)
    }
}

/// A learning-rate schedule for every tensor whose name starts with `prefix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrGroup {
    pub prefix: String,
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a [`ParameterSet`] with per-prefix learning-rate schedules and a
/// trainable-prefix mask. Tensors outside the mask never change.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub adam: AdamConfig,
    pub default: LrSchedule,
    pub groups: Vec<LrGroup>,
    pub trainable: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
    updates: u64,
}

impl Optimizer {
    pub fn new(default: LrSchedule, groups: Vec<LrGroup>, trainable: &[&str]) -> Self {
        Self {
            adam: AdamConfig::default(),
            default,
            groups,
            trainable: trainable.iter().map(|s| s.to_string()).collect(),
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
            updates: 0,
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Current learning rate for a tensor name.
    pub fn lr_for(&self, name: &str) -> f64 {
        self.groups
            .iter()
            .find(|g| name.starts_with(g.prefix.as_str()))
            .map_or(self.default, |g| g.schedule)
            .at(self.updates)
    }

    pub fn lr(&self) -> f64 {
        self.default.at(self.updates)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Advance the learning-rate schedules by one update.
    pub fn advance(&mut self) {
        self.updates += 1;
    }

    pub fn step(&mut self, ps: &mut ParameterSet, grads: &Gradients) -> Result<()> {
        if grads.values.len() != ps.len() {
            return Err(SmaError::Dimension {
                context: "optimizer gradients",
                expected: ps.len(),
                got: grads.values.len(),
            });
        }
        if self.m.len() != ps.len() {
            self.m = ps.iter().map(|(_, t)| vec![0.0; t.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        let ids: Vec<_> = ps.iter().map(|(id, t)| (id, t.name.clone())).collect();
        for (k, (id, name)) in ids.into_iter().enumerate() {
            if !self.is_trainable(&name) {
                continue;
            }
            let lr = self.lr_for(&name);
            let g = &grads.values[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in ps.data_mut(id).iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
