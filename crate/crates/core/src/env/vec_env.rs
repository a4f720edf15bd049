use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    observe, sample_extrinsics, step, Command, EnvConfig, EnvState, ExtrinsicsVector, Privileged,
    N_JOINTS,
};
use crate::error::{check_len, Result};

/// Return and length of a finished episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub env: usize,
    pub ret: f64,
    pub len: usize,
    pub timeout: bool,
}

#[derive(Debug, Clone)]
struct Instance {
    state: EnvState,
    ext: Privileged,
    cmd: Command,
    prev_action: [f64; N_JOINTS],
    obs: Vec<f64>,
    rng: ChaCha8Rng,
    ret: f64,
}

/// Batched outcome of one policy step across all instances.
#[derive(Debug, Clone, Default)]
pub struct VecStep {
    /// Next observation per env; after an episode end this is the first
    /// observation of the fresh episode.
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Episode ended (failure or timeout).
    pub dones: Vec<bool>,
    /// Episode ended by reaching the length limit.
    pub timeouts: Vec<bool>,
    /// Final observation of an episode that just ended by timeout, used to
    /// bootstrap its value.
    pub terminal_obs: Vec<Option<Vec<f64>>>,
}

/// Serializable instance state for checkpointing a running batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub state: EnvState,
    pub ext: ExtrinsicsVector,
    pub cmd: Command,
    pub prev_action: [f64; N_JOINTS],
}

/// Independent environment instances stepped in lockstep, each with its own
/// seeded random stream.
#[derive(Debug, Clone)]
pub struct VecEnv {
    cfg: EnvConfig,
    envs: Vec<Instance>,
    completed: Vec<EpisodeStats>,
}

impl VecEnv {
    pub fn new(cfg: EnvConfig, n_envs: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let envs = (0..n_envs)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                Instance {
                    state: EnvState::at_rest(cfg.default_q),
                    ext: Privileged::new(cfg.nominal),
                    cmd: Command { v_star: 0.0, omega_star: 0.0 },
                    prev_action: [0.0; N_JOINTS],
                    obs: Vec::new(),
                    rng,
                    ret: 0.0,
                }
            })
            .collect();
        let mut out = Self {
            cfg,
            envs,
            completed: Vec::new(),
        };
        for i in 0..n_envs {
            out.reset_one(i)?;
        }
        Ok(out)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        self.envs.iter().map(|e| e.obs.clone()).collect()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.envs[i].obs
    }

    pub fn state(&self, i: usize) -> &EnvState {
        &self.envs[i].state
    }

    pub fn command(&self, i: usize) -> Command {
        self.envs[i].cmd
    }

    /// Access-tracked handle to an instance's extrinsics.
    pub fn privileged(&self, i: usize) -> &Privileged {
        &self.envs[i].ext
    }

    /// Extrinsics normalized to the sampling ranges (a counted read).
    pub fn privileged_features(&self, i: usize) -> Vec<f64> {
        self.envs[i].ext.read().normalized(&self.cfg.ranges)
    }

    /// Total counted reads of privileged extrinsics across all instances.
    pub fn privileged_reads(&self) -> u64 {
        self.envs.iter().map(|e| e.ext.reads()).sum()
    }

    pub fn drain_completed(&mut self) -> Vec<EpisodeStats> {
        std::mem::take(&mut self.completed)
    }

    pub fn snapshot(&self, i: usize) -> EnvSnapshot {
        let e = &self.envs[i];
        EnvSnapshot {
            state: e.state,
            ext: *e.ext.dynamics(),
            cmd: e.cmd,
            prev_action: e.prev_action,
        }
    }

    fn reset_one(&mut self, i: usize) -> Result<()> {
        let cfg = &self.cfg;
        let env = &mut self.envs[i];
        let ext = if cfg.randomize {
            sample_extrinsics(&cfg.ranges, &mut env.rng)?
        } else {
            cfg.nominal
        };
        env.ext.replace(ext);
        env.cmd = Command::sample(&cfg.commands, &mut env.rng);
        let mut q = cfg.default_q;
        for qj in q.iter_mut() {
            *qj += (2.0 * env.rng.random::<f64>() - 1.0) * cfg.init_q_noise;
        }
        let global = env.state.step;
        env.state = EnvState::at_rest(q);
        env.state.step = global;
        env.prev_action = [0.0; N_JOINTS];
        env.ret = 0.0;
        env.obs = observe(&env.state, &env.cmd, &env.prev_action, cfg, &mut env.rng);
        Ok(())
    }

    /// Apply one action per instance. Finished episodes reset in place.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<VecStep> {
        check_len("VecEnv::step actions", self.envs.len(), actions.len())?;
        let n = self.envs.len();
        let mut out = VecStep {
            obs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            timeouts: Vec::with_capacity(n),
            terminal_obs: Vec::with_capacity(n),
        };
        for (i, action) in actions.iter().enumerate() {
            let cfg = &self.cfg;
            let env = &mut self.envs[i];
            let ext = *env.ext.dynamics();
            let (_, reward, failed) =
                step(&mut env.state, action, &env.prev_action, &ext, &env.cmd, cfg)?;
            env.prev_action.copy_from_slice(&action[..N_JOINTS]);
            env.ret += reward;
            let every = cfg.commands.resample_every;
            if every > 0 && env.state.episode_step % every == 0 {
                env.cmd = Command::sample(&cfg.commands, &mut env.rng);
            }
            env.obs = observe(&env.state, &env.cmd, &env.prev_action, cfg, &mut env.rng);
            let timeout = !failed && env.state.episode_step >= cfg.max_episode_len;
            let done = failed || timeout;
            out.rewards.push(reward);
            out.dones.push(done);
            out.timeouts.push(timeout);
            out.terminal_obs.push(timeout.then(|| env.obs.clone()));
            if done {
                self.completed.push(EpisodeStats {
                    env: i,
                    ret: env.ret,
                    len: env.state.episode_step,
                    timeout,
                });
                self.reset_one(i)?;
            }
            out.obs.push(self.envs[i].obs.clone());
        }
        Ok(out)
    }
}
