//! Shared on-policy training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::run_dir::derive_seed;
use crate::agent::AdaptMode;
use crate::env::{EnvConfig, VecEnv};
use crate::error::{Result, SmaError};
use crate::metagrad::ParameterSet;
use crate::persist::{MetricRecord, MetricsWriter};
use crate::rl::{
    a2c_update, compute_gae, ppo_update, A2cConfig, ActorCritic, Collector, ContextSource, ExtraLoss, Optimizer,
    PpoConfig, RolloutBuffer,
};

#[derive(Debug, Clone)]
pub enum Update {
    Ppo(PpoConfig),
    A2c(A2cConfig),
}

impl Update {
    fn gamma_lambda(&self) -> (f64, f64) {
        match self {
            Self::Ppo(c) => (c.gamma, c.lambda),
            Self::A2c(c) => (c.gamma, c.lambda),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopSpec {
    pub stage: String,
    pub env: EnvConfig,
    pub n_envs: usize,
    pub n_steps: usize,
    pub iterations: usize,
    pub update: Update,
    pub source: ContextSource,
    pub seed: u64,
    /// Abort when the mean plastic weight-change norm exceeds this.
    pub max_delta_norm: f64,
    /// History length kept by the collector (estimator inputs).
    pub history: usize,
    pub record_history: bool,
}

/// Mean Frobenius norm of the plastic weight change across env states.
pub fn mean_delta_norm(collector: &Collector) -> Option<f64> {
    let norms: Vec<f64> = collector
        .states
        .iter()
        .filter_map(|s| s.plastic.as_ref())
        .map(|p| p.delta.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    (!norms.is_empty()).then(|| norms.iter().sum::<f64>() / norms.len() as f64)
}

fn mean_abs_context(buffer: &RolloutBuffer) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for tr in buffer.iter() {
        if let Some(c) = &tr.context_value {
            sum += c.iter().map(|x| x.abs()).sum::<f64>();
            n += c.len();
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Collect-update loop. On failure the parameters are restored to the last
/// iteration that completed cleanly before the error is returned.
pub fn run_training(
    ac: &ActorCritic,
    ps: &mut ParameterSet,
    opt: &mut Optimizer,
    spec: &LoopSpec,
    metrics: &mut MetricsWriter,
    extra: Option<&ExtraLoss<'_>>,
    progress: &mut dyn FnMut(&MetricRecord),
) -> Result<Option<MetricRecord>> {
    let mut env = VecEnv::new(spec.env.clone(), spec.n_envs, derive_seed(spec.seed, "env"))?;
    let mut collector = Collector::new(ac, spec.n_envs, spec.history, derive_seed(spec.seed, "policy"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "minibatch"));
    let (gamma, lambda) = spec.update.gamma_lambda();
    let mut last = None;
    let mut env_steps = 0u64;
    for it in 0..spec.iterations {
        let last_good = ps.clone();
        let mut step = || -> Result<MetricRecord> {
            let buffer = collector.collect(ac, ps, &mut env, &spec.source, spec.n_steps, true, spec.record_history)?;
            let gae = compute_gae(&buffer, gamma, lambda)?;
            let stats = match &spec.update {
                Update::Ppo(c) => ppo_update(ac, ps, opt, &buffer, &gae, c, &mut rng, extra)?,
                Update::A2c(c) => a2c_update(ac, ps, opt, &buffer, &gae, c, extra)?,
            };
            env_steps += buffer.batch_size() as u64;
            let completed = env.drain_completed();
            let mean_return =
                (!completed.is_empty()).then(|| completed.iter().map(|c| c.ret).sum::<f64>() / completed.len() as f64);
            let delta_norm = mean_delta_norm(&collector);
            if let Some(d) = delta_norm {
                if !d.is_finite() || d > spec.max_delta_norm {
                    return Err(SmaError::Diverged(format!("plastic weight change norm {d} at iteration {it}")));
                }
            }
            if ps.iter().any(|(_, t)| t.data.iter().any(|x| !x.is_finite())) {
                return Err(SmaError::Diverged(format!("non-finite parameters at iteration {it}")));
            }
            Ok(MetricRecord {
                stage: spec.stage.clone(),
                iteration: it,
                env_steps,
                mean_reward: buffer.mean_reward(),
                mean_return,
                update: stats,
                delta_norm,
                modulator_abs: if ac.agent.mode == AdaptMode::Modulator {
                    mean_abs_context(&buffer)
                } else {
                    None
                },
            })
        };
        match step() {
            Ok(rec) => {
                metrics.write(&rec)?;
                progress(&rec);
                last = Some(rec);
            }
            Err(e) => {
                *ps = last_good;
                return Err(e);
            }
        }
    }
    Ok(last)
}
