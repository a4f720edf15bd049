//! On-policy training: rollout storage, advantage estimation, trajectory
//! minibatches, PPO and truncated-BPTT A2C updates.
//!
//! Actions follow a diagonal Gaussian whose mean is the spiking policy's
//! rate-decoded output and whose log standard deviation is a
//! state-independent parameter (`pi.log_std`). The critic is a separate
//! non-spiking network on the same observations.

mod buffer;
mod collect;
mod optim;
mod update;

pub use buffer::{compute_gae, normalize_advantages, rollout_minibatches, GaeResult, RolloutBuffer, Transition};
pub use collect::{route_value, Collector, ContextSource, EstimatorSpec, EvalEpisodes, History};
pub use optim::{AdamConfig, LrGroup, LrSchedule, Optimizer};
pub use update::{a2c_update, ppo_update, recompute_log_probs, A2cConfig, ExtraLoss, PpoConfig, UpdateStats};

use serde::{Deserialize, Serialize};

use crate::agent::AgentSpec;
use crate::mlp::MlpConfig;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Spiking actor plus non-spiking critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub agent: AgentSpec,
    pub value: MlpConfig,
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Differential entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
}
