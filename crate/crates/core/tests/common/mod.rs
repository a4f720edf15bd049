//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sma_core::agent::{AdaptMode, AgentSpec, ContextInput};
use sma_core::config::RunConfig;
use sma_core::env::VecEnv;
use sma_core::metagrad::{fd_oracle, unroll_forward, EpisodeSegment, ParameterSet, Var};
use sma_core::mlp::MlpConfig;
use sma_core::network::{PlasticLayerConfig, PlasticRule, PolicyState, SnnArch, SnnInit, SnnPolicy};
use sma_core::pipeline::models::{base_model, modulated_model};
use sma_core::rl::{
    compute_gae, gaussian_log_prob, ppo_update, recompute_log_probs, ActorCritic, Collector, ContextSource, LrSchedule,
    Optimizer, PpoConfig, RolloutBuffer, Transition,
};
use sma_core::plasticity::ModulatorBroadcast;
use sma_core::snn::Surrogate;

pub const N_EXTRINSIC_INPUTS: usize = 3;

/// An 8-input network with one hidden layer of 8 and 4 output neurons
/// (2 actions × 2); the output layer's input synapses are plastic.
pub fn small_arch(rule: PlasticRule, slope: f64, update_scale: f64) -> SnnArch {
    let mut arch = SnnArch::new(8, &[8], 2);
    arch.pop_per_action = 2;
    arch.surrogate = Surrogate { slope, width: 1.0 };
    arch.plastic = Some(PlasticLayerConfig {
        layer: 1,
        rule,
        broadcast: ModulatorBroadcast::PerPost,
        update_scale,
        beta: 1.0,
    });
    arch
}

/// Small agent with initialised parameters. The modulated rule gets a
/// privileged encoder driving its modulators.
pub fn small_agent(rule: PlasticRule, slope: f64, update_scale: f64, seed: u64) -> (AgentSpec, ParameterSet) {
    let arch = small_arch(rule, slope, update_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParameterSet::new();
    let init = SnnInit {
        weight_gain: 1.5,
        bias: 0.1,
        log_std: 0.0,
    };
    arch.init_params(&mut ps, &mut rng, &init);
    // Rates well above their training initialisation so that the
    // modulator pathway carries gradients far above finite-difference
    // noise.
    let rate = ps.id("plastic.rate").unwrap();
    for r in ps.data_mut(rate) {
        *r = rng.random_range(0.05..0.5);
    }
    let spec = if rule == PlasticRule::Modulated {
        let enc = MlpConfig::new("enc", N_EXTRINSIC_INPUTS, &[6], arch.modulator_dim());
        enc.init(&mut ps, &mut rng, 1.0);
        AgentSpec {
            policy: arch,
            mode: AdaptMode::Modulator,
            encoder: Some(enc),
            modulator_gain: 1.0,
        }
    } else {
        AgentSpec::plain(arch)
    };
    (spec, ps)
}

/// Random non-negative observations, with a constant privileged context
/// when the agent has an encoder.
pub fn random_segment(spec: &AgentSpec, len: usize, seed: u64) -> EpisodeSegment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..spec.policy.obs_dim).map(|_| rng.random_range(0.0..1.5)).collect())
        .collect();
    let mut seg = EpisodeSegment::plain(obs);
    if spec.encoder.is_some() {
        let e: Vec<f64> = (0..N_EXTRINSIC_INPUTS).map(|_| rng.random_range(-1.0..1.0)).collect();
        seg.context = vec![ContextInput::Privileged(e); len];
    }
    seg
}

/// Result of comparing taped gradients with central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    /// Tensors without any entry above the finite-difference floor.
    pub skipped: Vec<String>,
    pub spikes: f64,
}

/// Loss `Σ_t (<c_t, mean_t> + Σ_l <d_tl, v_tl>) + k Σ_t trace_sq_t` with
/// fixed random `c_t`, `d_tl` over the action means, the post-reset
/// membrane potentials `v_tl` of every layer and the plastic traces,
/// differentiated on the tape and by central differences. The membrane
/// terms give every parameter a smooth path to the loss even where the
/// spike pattern is locally constant.
pub fn gradient_check(spec: &AgentSpec, ps: &ParameterSet, seg: &EpisodeSegment, seed: u64, h: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let sizes = spec.policy.layer_sizes();
    let coef = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let mean_coefs: Vec<Vec<f64>> = (0..seg.len()).map(|_| coef(&mut rng, spec.policy.n_actions)).collect();
    let membrane_coefs: Vec<Vec<Vec<f64>>> = (0..seg.len())
        .map(|_| sizes.iter().map(|&n| coef(&mut rng, n)).collect())
        .collect();
    let k_trace = 0.7;
    let init = spec.policy.initial_state();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let loss = |p: &ParameterSet| -> f64 {
        let (o, tape) = unroll_forward(spec, p, &init, seg, seg.len()).unwrap();
        let mut l = k_trace * o.trace_sq.iter().sum::<f64>();
        for (t, step) in tape.steps.iter().enumerate() {
            l += dot(&o.means[t], &mean_coefs[t]);
            for (v, d) in step.membrane.iter().zip(&membrane_coefs[t]) {
                l += dot(tape.tape.value(*v), d);
            }
        }
        l
    };
    let (_, tape) = unroll_forward(spec, ps, &init, seg, seg.len()).unwrap();
    let spikes: f64 = tape
        .steps
        .iter()
        .flat_map(|s| s.spikes.iter().map(|v| tape.tape.value(*v).iter().sum::<f64>()))
        .sum();
    let mut seeds: Vec<(Var, &[f64])> = Vec::new();
    let k = [k_trace];
    for (t, step) in tape.steps.iter().enumerate() {
        seeds.push((step.mean, &mean_coefs[t]));
        for (v, d) in step.membrane.iter().zip(&membrane_coefs[t]) {
            seeds.push((*v, d));
        }
        if let Some(sq) = step.trace_sq {
            seeds.push((sq, &k));
        }
    }
    let taped = tape.tape.backward(&seeds).params;
    let numeric = fd_oracle(ps, loss, h, &[]).unwrap();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
        skipped: Vec::new(),
        spikes,
    };
    for (name, (a, f)) in taped.names.iter().zip(taped.values.iter().zip(&numeric.values)) {
        let mut any = false;
        for (k, (x, y)) in a.iter().zip(f).enumerate() {
            if y.abs() <= 1e-8 {
                continue;
            }
            any = true;
            out.checked += 1;
            let rel = (x - y).abs() / x.abs().max(y.abs());
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = format!("{name}[{k}]: tape {x:e} fd {y:e}");
            }
        }
        if !any {
            out.skipped.push(name.clone());
        }
    }
    out
}

/// A configuration small enough to run every stage in seconds.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::desk();
    c.seed = seed;
    c.pretrain.iterations = 2;
    c.pretrain.n_envs = 2;
    c.pretrain.n_steps = 10;
    c.pretrain.eval_episodes = 2;
    c.phase1.iterations = 2;
    c.phase1.n_envs = 2;
    c.phase1.n_steps = 10;
    c.phase2.n_envs = 4;
    c.phase2.steps = 12;
    c.phase2.epochs = 2;
    c
}

/// Modulated agent whose encoder output is live (nonzero modulators).
pub fn live_modulated(seed: u64) -> (RunConfig, ActorCritic, ParameterSet) {
    let cfg = RunConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (base, base_ps) = base_model(&cfg.net, &cfg.env, &mut rng);
    let (ac, mut ps) = modulated_model(&cfg.net, &base, &base_ps, &mut rng).unwrap();
    ac.agent.encoder.as_ref().unwrap().init(&mut ps, &mut rng, 1.0);
    (cfg, ac, ps)
}

pub fn rollout(cfg: &RunConfig, ac: &ActorCritic, ps: &ParameterSet, n_envs: usize, n_steps: usize, seed: u64) -> RolloutBuffer {
    let mut env_cfg = cfg.env.clone();
    env_cfg.randomize = true;
    env_cfg.max_episode_len = 40;
    let mut env = VecEnv::new(env_cfg, n_envs, seed).unwrap();
    let mut col = Collector::new(ac, n_envs, cfg.net.history, seed + 1);
    let source = if ac.agent.encoder.is_some() { ContextSource::Privileged } else { ContextSource::None };
    col.collect(ac, ps, &mut env, &source, n_steps, true, false).unwrap()
}


/// Largest gap between stored rollout log-probabilities and their
/// recomputation by re-unrolling; the rollout crosses two truncation
/// windows and at least one episode boundary.
pub fn log_prob_discrepancy(seed: u64) -> f64 {
    let (cfg, ac, ps) = live_modulated(seed);
    let buf = rollout(&cfg, &ac, &ps, 3, 75, seed + 1);
    assert!(buf.iter().any(|t| t.done));
    let stored: Vec<f64> = (0..buf.n_steps)
        .flat_map(|t| (0..buf.n_envs).map(move |e| (t, e)))
        .map(|(t, e)| buf.get(t, e).log_prob)
        .collect();
    let again = recompute_log_probs(&ac, &ps, &buf, 30).unwrap();
    stored.iter().zip(&again).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// One-step continuous bandit: reward 1 when the first action is positive.
pub fn bandit_model(seed: u64) -> (ActorCritic, ParameterSet) {
    let mut arch = SnnArch::new(4, &[16], 1);
    arch.readout_gain = 20.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParameterSet::new();
    arch.init_params(&mut ps, &mut rng, &Default::default());
    let value = MlpConfig::new("vf", 4, &[8], 1);
    value.init(&mut ps, &mut rng, 1.0);
    (
        ActorCritic {
            agent: AgentSpec::plain(arch),
            value,
        },
        ps,
    )
}

pub fn best_action_probability(mean: f64, log_std: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 20_000;
    let hits = (0..n)
        .filter(|_| {
            let eps: f64 = rng.sample(StandardNormal);
            mean + log_std.exp() * eps > 0.0
        })
        .count();
    hits as f64 / n as f64
}

/// Trains the bandit with PPO for at most `max_updates` updates. Returns
/// the number of updates after which the best action had probability
/// above 0.9, and the last probability measured.
pub fn ppo_bandit(seed: u64, max_updates: usize) -> (Option<usize>, f64) {
    let (ac, mut ps) = bandit_model(seed);
    let obs = vec![0.8; 4];
    let arch = &ac.agent.policy;
    let init: PolicyState = arch.initial_state();
    let mut opt = Optimizer::new(LrSchedule::new(1e-2, 1.0), vec![], &["pi.", "vf."]);
    let cfg = PpoConfig {
        epochs: 4,
        minibatches: 2,
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let n_envs = 32;
    let mut p_best = 0.0;
    for update in 0..max_updates {
        let policy = SnnPolicy::new(arch, &ps).unwrap();
        let mut state = init.clone();
        let mean = policy.act(&ps, &mut state, &obs, None, None);
        let log_std = ps.by_name("pi.log_std").unwrap().to_vec();
        p_best = best_action_probability(mean[0], log_std[0]);
        if p_best > 0.9 {
            return (Some(update), p_best);
        }
        let value = ac.value.resolve(&ps).unwrap().eval(&ps, &obs)[0];
        let mut buf = RolloutBuffer::new(1, n_envs, vec![init.clone(); n_envs]);
        for e in 0..n_envs {
            let eps: f64 = rng.sample(StandardNormal);
            let a = mean[0] + log_std[0].exp() * eps;
            buf.set(
                0,
                e,
                Transition {
                    obs: obs.clone(),
                    context: ContextInput::None,
                    context_value: None,
                    action: vec![a],
                    log_prob: gaussian_log_prob(&[a], &mean, &log_std),
                    value,
                    reward: if a > 0.0 { 1.0 } else { 0.0 },
                    done: true,
                    timeout: false,
                    terminal_value: 0.0,
                    history: None,
                },
            );
        }
        buf.bootstrap_values = vec![0.0; n_envs];
        let gae = compute_gae(&buf, cfg.gamma, cfg.lambda).unwrap();
        ppo_update(&ac, &mut ps, &mut opt, &buf, &gae, &cfg, &mut rng, None).unwrap();
    }
    (None, p_best)
}
