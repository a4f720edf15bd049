use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::buffer::{normalize_advantages, rollout_minibatches, GaeResult, RolloutBuffer};
use super::optim::Optimizer;
use super::{gaussian_entropy, gaussian_log_prob, ActorCritic};
use crate::error::{Result, SmaError};
use crate::metagrad::{backward, clip_global_norm, unroll_forward, EpisodeSegment, Gradients, ParameterSet, StepGrads, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Longest unroll used when re-evaluating trajectories.
    pub window: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.01,
            value_coef: 1.0,
            max_grad_norm: 1.0,
            gamma: 0.99,
            lambda: 0.95,
            window: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct A2cConfig {
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Coefficient on the mean squared plastic-layer synaptic trace.
    pub trace_penalty: f64,
    pub max_grad_norm: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Truncation window for backpropagation through time.
    pub window: usize,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            entropy_coef: 0.005,
            value_coef: 0.5,
            trace_penalty: 1e-2,
            max_grad_norm: 1.0,
            gamma: 0.99,
            lambda: 0.95,
            window: 30,
        }
    }
}

/// Summary of one update call; losses are batch means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub trace_penalty: f64,
    pub extra_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Additional differentiable loss evaluated per gradient batch. Receives
/// the buffer and the env indices of the batch and returns
/// `(loss, gradients)`.
pub type ExtraLoss<'a> = dyn Fn(&ParameterSet, &RolloutBuffer, &[usize]) -> Result<(f64, Gradients)> + Sync + 'a;

#[derive(Clone, Copy)]
enum Objective {
    Ppo { clip: f64 },
    A2c,
}

struct Coefs {
    objective: Objective,
    entropy: f64,
    value: f64,
    trace: f64,
    window: usize,
}

#[derive(Default)]
struct Partial {
    policy: f64,
    value: f64,
    entropy: f64,
    trace: f64,
    kl: f64,
    clipped: f64,
}

impl Partial {
    fn add(&mut self, o: &Partial) {
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
        self.trace += o.trace;
        self.kl += o.kl;
        self.clipped += o.clipped;
    }
}

fn name_index(g: &Gradients, name: &str) -> Result<usize> {
    g.names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| SmaError::InvalidArgument(format!("no parameter named {name}")))
}

/// Re-unroll one env trajectory from its stored initial state and return the
/// gradient of the (un-normalised) loss sum along with loss parts.
fn trajectory_grads(
    ac: &ActorCritic,
    ps: &ParameterSet,
    buffer: &RolloutBuffer,
    adv: &[f64],
    ret: &[f64],
    e: usize,
    c: &Coefs,
    scale: f64,
) -> Result<(Gradients, Partial)> {
    let n_envs = buffer.n_envs;
    let plastic = ac.agent.policy.plastic.is_some();
    let log_std = ps.by_name("pi.log_std").ok_or_else(|| SmaError::InvalidArgument("missing pi.log_std".into()))?;
    let sigma2: Vec<f64> = log_std.iter().map(|l| (2.0 * l).exp()).collect();
    let mut grads = ps.zero_grads();
    let ls_idx = name_index(&grads, "pi.log_std")?;
    let mut part = Partial::default();
    let mut state = buffer.initial_states[e].clone();
    let mut t0 = 0;
    while t0 < buffer.n_steps {
        let t1 = (t0 + c.window).min(buffer.n_steps);
        let trs: Vec<_> = (t0..t1).map(|t| buffer.get(t, e)).collect();
        let segment = EpisodeSegment {
            obs: trs.iter().map(|t| t.obs.clone()).collect(),
            context: trs.iter().map(|t| t.context.clone()).collect(),
            resets: trs.iter().map(|t| t.done).collect(),
        };
        let (out, tape) = unroll_forward(&ac.agent, ps, &state, &segment, c.window)?;
        let mut step_grads = Vec::with_capacity(trs.len());
        for (k, tr) in trs.iter().enumerate() {
            let i = (t0 + k) * n_envs + e;
            let mean = &out.means[k];
            let logp = gaussian_log_prob(&tr.action, mean, log_std);
            let a = adv[i];
            let (loss, dlogp) = match c.objective {
                Objective::Ppo { clip } => {
                    let ratio = (logp - tr.log_prob).exp();
                    let s1 = ratio * a;
                    let s2 = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
                    part.kl += tr.log_prob - logp;
                    if (ratio - 1.0).abs() > clip {
                        part.clipped += 1.0;
                    }
                    if s1 <= s2 {
                        (-s1, -a * ratio)
                    } else {
                        (-s2, 0.0)
                    }
                }
                Objective::A2c => (-a * logp, -a),
            };
            part.policy += loss;
            part.entropy += gaussian_entropy(log_std);
            let mut g_mean = vec![0.0; mean.len()];
            for j in 0..mean.len() {
                let z = tr.action[j] - mean[j];
                g_mean[j] = scale * dlogp * z / sigma2[j];
                grads.values[ls_idx][j] += scale * (dlogp * (z * z / sigma2[j] - 1.0) - c.entropy);
            }
            let trace_sq = if plastic && c.trace != 0.0 {
                part.trace += out.trace_sq[k];
                scale * c.trace
            } else {
                0.0
            };
            step_grads.push(StepGrads {
                mean: g_mean,
                trace_sq,
                context: None,
            });
        }
        grads.add_assign(&backward(&tape, &step_grads)?);
        state = out.final_state;
        t0 = t1;
    }

    // critic
    let vf = ac.value.resolve(ps)?;
    let mut tape = Tape::new(ps);
    let mut seeds = Vec::with_capacity(buffer.n_steps);
    for t in 0..buffer.n_steps {
        let i = t * n_envs + e;
        let x = tape.constant(buffer.get(t, e).obs.clone());
        let v = vf.forward(&mut tape, x);
        let err = tape.scalar(v) - ret[i];
        part.value += err * err;
        seeds.push((v, vec![scale * c.value * 2.0 * err]));
    }
    let refs: Vec<_> = seeds.iter().map(|(v, g)| (*v, g.as_slice())).collect();
    grads.add_assign(&tape.backward(&refs).params);
    Ok((grads, part))
}

#[allow(clippy::too_many_arguments)]
fn batch_step(
    ac: &ActorCritic,
    ps: &mut ParameterSet,
    opt: &mut Optimizer,
    buffer: &RolloutBuffer,
    adv: &[f64],
    ret: &[f64],
    envs: &[usize],
    c: &Coefs,
    max_grad_norm: f64,
    extra: Option<&ExtraLoss<'_>>,
) -> Result<(Partial, f64, f64)> {
    let n = (envs.len() * buffer.n_steps) as f64;
    let scale = 1.0 / n;
    let snapshot: &ParameterSet = ps;
    let results: Vec<Result<(Gradients, Partial)>> = envs
        .par_iter()
        .map(|&e| trajectory_grads(ac, snapshot, buffer, adv, ret, e, c, scale))
        .collect();
    let mut total = ps.zero_grads();
    let mut part = Partial::default();
    for r in results {
        let (g, p) = r?;
        total.add_assign(&g);
        part.add(&p);
    }
    let mut extra_loss = 0.0;
    if let Some(f) = extra {
        let (l, g) = f(ps, buffer, envs)?;
        extra_loss = l;
        total.add_assign(&g);
    }
    let loss = (part.policy + c.value * part.value + c.trace * part.trace) / n - c.entropy * part.entropy / n + extra_loss;
    if !loss.is_finite() {
        return Err(SmaError::Diverged(format!(
            "non-finite loss: policy {} value {} trace {} extra {}",
            part.policy, part.value, part.trace, extra_loss
        )));
    }
    let (clipped, norm) = clip_global_norm(total, max_grad_norm)?;
    opt.step(ps, &clipped)?;
    Ok((part, norm, extra_loss))
}

fn finish(part: Partial, n: f64, norm: f64, extra: f64, lr: f64) -> UpdateStats {
    UpdateStats {
        policy_loss: part.policy / n,
        value_loss: part.value / n,
        entropy: part.entropy / n,
        trace_penalty: part.trace / n,
        extra_loss: extra,
        approx_kl: part.kl / n,
        clip_fraction: part.clipped / n,
        grad_norm: norm,
        lr,
    }
}

/// Clipped-surrogate PPO over trajectory minibatches. Each minibatch is
/// re-unrolled from its stored initial states under the current parameters.
/// Advances the optimizer's learning-rate schedule once.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    ac: &ActorCritic,
    ps: &mut ParameterSet,
    opt: &mut Optimizer,
    buffer: &RolloutBuffer,
    gae: &GaeResult,
    cfg: &PpoConfig,
    rng: &mut R,
    extra: Option<&ExtraLoss<'_>>,
) -> Result<UpdateStats> {
    buffer.ensure_complete()?;
    let mut adv = gae.advantages.clone();
    normalize_advantages(&mut adv);
    let coefs = Coefs {
        objective: Objective::Ppo { clip: cfg.clip },
        entropy: cfg.entropy_coef,
        value: cfg.value_coef,
        trace: 0.0,
        window: cfg.window,
    };
    let lr = opt.lr();
    let mut last = (Partial::default(), 0.0, 0.0);
    let mut samples = 0.0;
    for epoch in 0..cfg.epochs {
        let batches = rollout_minibatches(buffer.n_envs, cfg.minibatches.min(buffer.n_envs), rng)?;
        let mut acc = Partial::default();
        let mut norm_sum = 0.0;
        let mut extra_sum = 0.0;
        for mb in &batches {
            let (p, norm, x) = batch_step(ac, ps, opt, buffer, &adv, &gae.returns, mb, &coefs, cfg.max_grad_norm, extra)?;
            acc.add(&p);
            norm_sum += norm;
            extra_sum += x;
        }
        if epoch + 1 == cfg.epochs {
            samples = buffer.batch_size() as f64;
            let k = batches.len() as f64;
            last = (acc, norm_sum / k, extra_sum / k);
        }
    }
    opt.advance();
    Ok(finish(last.0, samples.max(1.0), last.1, last.2, lr))
}

/// Advantage actor-critic with a single truncated-BPTT gradient pass over the
/// whole buffer and a synaptic trace penalty. Advances the learning-rate
/// schedule once.
pub fn a2c_update(
    ac: &ActorCritic,
    ps: &mut ParameterSet,
    opt: &mut Optimizer,
    buffer: &RolloutBuffer,
    gae: &GaeResult,
    cfg: &A2cConfig,
    extra: Option<&ExtraLoss<'_>>,
) -> Result<UpdateStats> {
    buffer.ensure_complete()?;
    let mut adv = gae.advantages.clone();
    normalize_advantages(&mut adv);
    let coefs = Coefs {
        objective: Objective::A2c,
        entropy: cfg.entropy_coef,
        value: cfg.value_coef,
        trace: cfg.trace_penalty,
        window: cfg.window,
    };
    let lr = opt.lr();
    let envs: Vec<usize> = (0..buffer.n_envs).collect();
    let (part, norm, extra_loss) =
        batch_step(ac, ps, opt, buffer, &adv, &gae.returns, &envs, &coefs, cfg.max_grad_norm, extra)?;
    opt.advance();
    Ok(finish(part, buffer.batch_size() as f64, norm, extra_loss, lr))
}

/// Recompute each stored log-probability by re-unrolling the trajectories
/// under `ps`; returns values in buffer order (`t * n_envs + env`).
pub fn recompute_log_probs(ac: &ActorCritic, ps: &ParameterSet, buffer: &RolloutBuffer, window: usize) -> Result<Vec<f64>> {
    buffer.ensure_complete()?;
    let log_std = ps.by_name("pi.log_std").ok_or_else(|| SmaError::InvalidArgument("missing pi.log_std".into()))?;
    let mut out = vec![0.0; buffer.batch_size()];
    for e in 0..buffer.n_envs {
        let mut state = buffer.initial_states[e].clone();
        let mut t0 = 0;
        while t0 < buffer.n_steps {
            let t1 = (t0 + window).min(buffer.n_steps);
            let trs: Vec<_> = (t0..t1).map(|t| buffer.get(t, e)).collect();
            let segment = EpisodeSegment {
                obs: trs.iter().map(|t| t.obs.clone()).collect(),
                context: trs.iter().map(|t| t.context.clone()).collect(),
                resets: trs.iter().map(|t| t.done).collect(),
            };
            let (o, _) = unroll_forward(&ac.agent, ps, &state, &segment, window)?;
            for (k, tr) in trs.iter().enumerate() {
                out[(t0 + k) * buffer.n_envs + e] = gaussian_log_prob(&tr.action, &o.means[k], log_std);
            }
            state = o.final_state;
            t0 = t1;
        }
    }
    Ok(out)
}
