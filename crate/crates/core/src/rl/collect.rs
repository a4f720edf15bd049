use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::buffer::{RolloutBuffer, Transition};
use super::{gaussian_log_prob, ActorCritic};
use crate::agent::{AdaptMode, BoundAgent, ContextInput};
use crate::env::VecEnv;
use crate::error::Result;
use crate::metagrad::ParameterSet;
use crate::mlp::MlpConfig;
use crate::network::PolicyState;

/// History-based estimator of the context vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub net: MlpConfig,
    /// Number of `(previous action, observation)` pairs in the input.
    pub history: usize,
    /// Length of one pair.
    pub step_dim: usize,
}

impl EstimatorSpec {
    pub fn new(prefix: &str, history: usize, obs_dim: usize, n_actions: usize, hidden: &[usize], output: usize) -> Self {
        let step_dim = obs_dim + n_actions;
        Self {
            net: MlpConfig::new(prefix, history * step_dim, hidden, output),
            history,
            step_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.history * self.step_dim
    }
}

/// Where the policy's context vector comes from during a rollout.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextSource {
    None,
    /// Normalized true extrinsics through the privileged encoder.
    Privileged,
    /// An all-zero context.
    Zeros,
    /// Estimator output from the recent local history.
    Estimator(EstimatorSpec),
}

impl ContextSource {
    /// History length the collector must keep for this source.
    pub fn history_len(&self) -> usize {
        match self {
            Self::Estimator(e) => e.history,
            _ => 0,
        }
    }
}

/// Fixed-length history of `(previous action, observation)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    len: usize,
    entries: VecDeque<Vec<f64>>,
}

impl History {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            entries: VecDeque::with_capacity(len),
        }
    }

    pub fn push(&mut self, prev_action: &[f64], obs: &[f64]) {
        if self.len == 0 {
            return;
        }
        if self.entries.len() == self.len {
            self.entries.pop_front();
        }
        let mut e = prev_action.to_vec();
        e.extend_from_slice(obs);
        self.entries.push_back(e);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Flattened oldest-to-newest, zero-padded at the front.
    pub fn input(&self, step_dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; (self.len - self.entries.len()) * step_dim];
        for e in &self.entries {
            out.extend_from_slice(e);
        }
        out
    }
}

/// Context fed to the policy plus the resolved vector, per env.
fn resolve_context(
    bound: &BoundAgent<'_>,
    ps: &ParameterSet,
    source: &ContextSource,
    env: &VecEnv,
    e: usize,
    history: &History,
    cache: &mut Option<(ContextInput, Option<Vec<f64>>)>,
) -> Result<(ContextInput, Option<Vec<f64>>)> {
    let input = match source {
        ContextSource::None => ContextInput::None,
        ContextSource::Privileged => ContextInput::Privileged(env.privileged_features(e)),
        ContextSource::Zeros => ContextInput::Given(vec![0.0; bound.spec.context_dim()]),
        ContextSource::Estimator(est) => {
            ContextInput::Given(est.net.resolve(ps)?.eval(ps, &history.input(est.step_dim)))
        }
    };
    if let Some((prev, value)) = cache.as_ref() {
        if *prev == input {
            return Ok((input, value.clone()));
        }
    }
    let value = bound.context_value(ps, &input)?;
    *cache = Some((input.clone(), value.clone()));
    Ok((input, value))
}

/// Split a context vector into `(latent, modulators)` for the agent's mode.
pub fn route_value(mode: AdaptMode, ctx: Option<&[f64]>) -> (Option<&[f64]>, Option<&[f64]>) {
    match mode {
        AdaptMode::None => (None, None),
        AdaptMode::Latent => (ctx, None),
        AdaptMode::Modulator => (None, ctx),
    }
}

/// Per-env policy state, histories and the action-noise stream.
#[derive(Debug, Clone)]
pub struct Collector {
    pub states: Vec<PolicyState>,
    histories: Vec<History>,
    last_actions: Vec<Vec<f64>>,
    caches: Vec<Option<(ContextInput, Option<Vec<f64>>)>>,
    initial: PolicyState,
    n_actions: usize,
    rng: ChaCha8Rng,
}

struct Decision {
    transitions: Vec<Transition>,
    actions: Vec<Vec<f64>>,
}

impl Collector {
    pub fn new(ac: &ActorCritic, n_envs: usize, history: usize, seed: u64) -> Self {
        let initial = ac.agent.policy.initial_state();
        let n_actions = ac.agent.policy.n_actions;
        Self {
            states: vec![initial.clone(); n_envs],
            histories: vec![History::new(history); n_envs],
            last_actions: vec![vec![0.0; n_actions]; n_envs],
            caches: vec![None; n_envs],
            initial,
            n_actions,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn decide(
        &mut self,
        ac: &ActorCritic,
        bound: &BoundAgent<'_>,
        ps: &ParameterSet,
        env: &VecEnv,
        source: &ContextSource,
        stochastic: bool,
        record_history: bool,
        history_step_dim: usize,
    ) -> Result<Decision> {
        let n = env.len();
        let vf = ac.value.resolve(ps)?;
        let log_std = bound.policy.log_std(ps).to_vec();
        let mut transitions = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        for e in 0..n {
            let obs = env.observation(e).to_vec();
            self.histories[e].push(&self.last_actions[e], &obs);
            let (input, ctx) = resolve_context(bound, ps, source, env, e, &self.histories[e], &mut self.caches[e])?;
            let (z, m) = route_value(ac.agent.mode, ctx.as_deref());
            let mean = bound.policy.act(ps, &mut self.states[e], &obs, z, m);
            let action: Vec<f64> = if stochastic {
                mean.iter()
                    .zip(&log_std)
                    .map(|(mu, ls)| {
                        let eps: f64 = StandardNormal.sample(&mut self.rng);
                        mu + ls.exp() * eps
                    })
                    .collect()
            } else {
                mean.clone()
            };
            let log_prob = gaussian_log_prob(&action, &mean, &log_std);
            let value = vf.eval(ps, &obs)[0];
            let history = record_history.then(|| self.histories[e].input(history_step_dim));
            actions.push(action.clone());
            transitions.push(Transition {
                obs,
                context: input,
                context_value: ctx,
                action,
                log_prob,
                value,
                reward: 0.0,
                done: false,
                timeout: false,
                terminal_value: 0.0,
                history,
            });
        }
        Ok(Decision { transitions, actions })
    }

    fn reset_env(&mut self, e: usize) {
        self.states[e] = self.initial.clone();
        self.histories[e].clear();
        self.last_actions[e] = vec![0.0; self.n_actions];
        self.caches[e] = None;
    }

    /// Collect `n_steps` transitions from every env.
    ///
    /// With `record_history`, each transition also stores the estimator
    /// input (flattened history with pairs of `history_step_dim`).
    #[allow(clippy::too_many_arguments)]
    pub fn collect(
        &mut self,
        ac: &ActorCritic,
        ps: &ParameterSet,
        env: &mut VecEnv,
        source: &ContextSource,
        n_steps: usize,
        stochastic: bool,
        record_history: bool,
    ) -> Result<RolloutBuffer> {
        let bound = ac.agent.bind(ps)?;
        let vf = ac.value.resolve(ps)?;
        let step_dim = self.n_actions + env.config().obs_dim();
        let mut buffer = RolloutBuffer::new(n_steps, env.len(), self.states.clone());
        for t in 0..n_steps {
            let d = self.decide(ac, &bound, ps, env, source, stochastic, record_history, step_dim)?;
            let out = env.step(&d.actions)?;
            for (e, mut tr) in d.transitions.into_iter().enumerate() {
                tr.reward = out.rewards[e];
                tr.done = out.dones[e];
                tr.timeout = out.timeouts[e];
                if let Some(o) = &out.terminal_obs[e] {
                    tr.terminal_value = vf.eval(ps, o)[0];
                }
                if tr.done {
                    self.reset_env(e);
                } else {
                    self.last_actions[e] = tr.action.clone();
                }
                buffer.set(t, e, tr);
            }
        }
        buffer.bootstrap_values = (0..env.len()).map(|e| vf.eval(ps, env.observation(e))[0]).collect();
        Ok(buffer)
    }

    /// Run deterministic (mean-action) episodes until every env has finished
    /// its current episode; returns each env's episode return.
    pub fn evaluate(
        &mut self,
        ac: &ActorCritic,
        ps: &ParameterSet,
        env: &mut VecEnv,
        source: &ContextSource,
    ) -> Result<EvalEpisodes> {
        let bound = ac.agent.bind(ps)?;
        let n = env.len();
        let mut returns = vec![0.0; n];
        let mut lengths = vec![0usize; n];
        let mut finished = vec![false; n];
        let mut contexts: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
        let mut final_states: Vec<Option<PolicyState>> = vec![None; n];
        let limit = env.config().max_episode_len;
        for _ in 0..limit {
            let d = self.decide(ac, &bound, ps, env, source, false, false, 0)?;
            for e in 0..n {
                if !finished[e] {
                    if let Some(c) = &d.transitions[e].context_value {
                        contexts[e].push(c.clone());
                    }
                }
            }
            let out = env.step(&d.actions)?;
            for e in 0..n {
                if finished[e] {
                    continue;
                }
                returns[e] += out.rewards[e];
                lengths[e] += 1;
                if out.dones[e] {
                    finished[e] = true;
                    final_states[e] = Some(self.states[e].clone());
                    self.reset_env(e);
                } else {
                    self.last_actions[e] = d.actions[e].clone();
                }
            }
            if finished.iter().all(|f| *f) {
                break;
            }
        }
        for (e, f) in final_states.iter_mut().enumerate() {
            if f.is_none() {
                *f = Some(self.states[e].clone());
            }
        }
        Ok(EvalEpisodes {
            returns,
            lengths,
            contexts,
            final_states: final_states.into_iter().flatten().collect(),
        })
    }
}

/// Outcome of [`Collector::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEpisodes {
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    /// Context vectors consumed per step, per env.
    pub contexts: Vec<Vec<Vec<f64>>>,
    /// Policy state at the end of each env's episode.
    pub final_states: Vec<PolicyState>,
}
