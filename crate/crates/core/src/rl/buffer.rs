use rand::seq::SliceRandom;
use rand::Rng;

use crate::agent::ContextInput;
use crate::error::{Result, SmaError};
use crate::network::PolicyState;

/// One environment transition as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub context: ContextInput,
    /// Context vector the policy actually consumed, if any.
    pub context_value: Option<Vec<f64>>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub timeout: bool,
    /// `V(s')` of the final observation when the step timed out.
    pub terminal_value: f64,
    /// Estimator input at this step, when recorded.
    pub history: Option<Vec<f64>>,
}

/// `n_steps × n_envs` trajectory store, indexed `[t][env]`, plus the policy
/// state each env started the rollout from.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_steps: usize,
    pub n_envs: usize,
    slots: Vec<Option<Transition>>,
    pub initial_states: Vec<PolicyState>,
    /// `V(s_T)` per env for the tail of the rollout.
    pub bootstrap_values: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_steps: usize, n_envs: usize, initial_states: Vec<PolicyState>) -> Self {
        Self {
            n_steps,
            n_envs,
            slots: vec![None; n_steps * n_envs],
            initial_states,
            bootstrap_values: vec![0.0; n_envs],
        }
    }

    pub fn batch_size(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn set(&mut self, t: usize, env: usize, tr: Transition) {
        self.slots[t * self.n_envs + env] = Some(tr);
    }

    pub fn is_complete(&self) -> bool {
        self.initial_states.len() == self.n_envs && self.slots.iter().all(Option::is_some)
    }

    pub fn ensure_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            let missing = self.slots.iter().filter(|s| s.is_none()).count();
            Err(SmaError::InvalidArgument(format!(
                "rollout buffer incomplete: {missing} of {} transitions missing",
                self.slots.len()
            )))
        }
    }

    /// Panics if the slot was never written; call [`Self::ensure_complete`] first.
    pub fn get(&self, t: usize, env: usize) -> &Transition {
        self.slots[t * self.n_envs + env]
            .as_ref()
            .expect("rollout slot written")
    }

    pub fn trajectory(&self, env: usize) -> impl Iterator<Item = &Transition> + '_ {
        (0..self.n_steps).map(move |t| self.get(t, env))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.slots.iter().flatten()
    }

    pub fn mean_reward(&self) -> f64 {
        let n = self.batch_size().max(1);
        self.iter().map(|t| t.reward).sum::<f64>() / n as f64
    }
}

/// Advantages and value targets, indexed like the buffer (`t * n_envs + env`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaeResult {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl GaeResult {
    pub fn at(&self, n_envs: usize, t: usize, env: usize) -> (f64, f64) {
        let i = t * n_envs + env;
        (self.advantages[i], self.returns[i])
    }
}

/// Generalized advantage estimation with timeout bootstrapping.
///
/// On a timeout step the reward becomes `r + γ·V(s')` and the step is then
/// treated as terminal. `buffer.bootstrap_values` supplies `V(s_T)` for
/// trajectories still running at the end of the rollout.
pub fn compute_gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> Result<GaeResult> {
    buffer.ensure_complete()?;
    let (n_steps, n_envs) = (buffer.n_steps, buffer.n_envs);
    let mut advantages = vec![0.0; n_steps * n_envs];
    let mut returns = vec![0.0; n_steps * n_envs];
    for e in 0..n_envs {
        let mut next_value = buffer.bootstrap_values[e];
        let mut next_adv = 0.0;
        for t in (0..n_steps).rev() {
            let tr = buffer.get(t, e);
            let reward = if tr.timeout {
                tr.reward + gamma * tr.terminal_value
            } else {
                tr.reward
            };
            let live = if tr.done { 0.0 } else { 1.0 };
            let delta = reward + gamma * next_value * live - tr.value;
            let adv = delta + gamma * lambda * live * next_adv;
            let i = t * n_envs + e;
            advantages[i] = adv;
            returns[i] = adv + tr.value;
            next_adv = adv;
            next_value = tr.value;
        }
    }
    if advantages.iter().any(|a| !a.is_finite()) {
        return Err(SmaError::NonFinite("advantages".into()));
    }
    Ok(GaeResult { advantages, returns })
}

/// Shift and scale to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Random partition of env indices into `k` trajectory minibatches.
///
/// When `k` does not divide `n_envs`, the first `n_envs % k` batches hold
/// one extra env.
pub fn rollout_minibatches<R: Rng + ?Sized>(n_envs: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n_envs {
        return Err(SmaError::InvalidArgument(format!(
            "cannot split {n_envs} envs into {k} minibatches"
        )));
    }
    let mut idx: Vec<usize> = (0..n_envs).collect();
    idx.shuffle(rng);
    let base = n_envs / k;
    let extra = n_envs % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = base + usize::from(b < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}
