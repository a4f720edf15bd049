mod common;

use common::{live_modulated, log_prob_discrepancy, ppo_bandit, rollout};
use sma_core::metagrad::{unroll_forward, EpisodeSegment};
use sma_core::rl::{a2c_update, ppo_update, A2cConfig, GaeResult, LrSchedule, Optimizer, PpoConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn recomputed_log_probs_match_the_rollout() {
    let worst = log_prob_discrepancy(1);
    assert!(worst <= 1e-6, "max log-prob discrepancy {worst:e}");
}

#[test]
fn zero_advantage_leaves_the_policy_unchanged() {
    let (cfg, ac, ps0) = live_modulated(3);
    let buf = rollout(&cfg, &ac, &ps0, 2, 20, 4);
    let gae = GaeResult {
        advantages: vec![0.0; buf.batch_size()],
        returns: buf.iter().map(|t| t.value).collect(),
    };
    let ppo = PpoConfig {
        entropy_coef: 0.0,
        value_coef: 0.0,
        epochs: 2,
        minibatches: 2,
        ..PpoConfig::default()
    };
    let mut ps = ps0.clone();
    let mut opt = Optimizer::new(LrSchedule::new(1e-2, 1.0), vec![], &["pi.", "plastic.", "enc."]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    ppo_update(&ac, &mut ps, &mut opt, &buf, &gae, &ppo, &mut rng, None).unwrap();
    assert_eq!(ps.flatten(), ps0.flatten());

    let a2c = A2cConfig {
        entropy_coef: 0.0,
        value_coef: 0.0,
        trace_penalty: 0.0,
        ..A2cConfig::default()
    };
    a2c_update(&ac, &mut ps, &mut opt, &buf, &gae, &a2c, None).unwrap();
    assert_eq!(ps.flatten(), ps0.flatten());
}

#[test]
fn trace_penalty_alone_shrinks_synaptic_traces() {
    let (cfg, ac, mut ps) = live_modulated(6);
    let buf = rollout(&cfg, &ac, &ps, 2, 30, 7);
    let gae = GaeResult {
        advantages: vec![0.0; buf.batch_size()],
        returns: buf.iter().map(|t| t.value).collect(),
    };
    let a2c = A2cConfig {
        entropy_coef: 0.0,
        value_coef: 0.0,
        trace_penalty: 1.0,
        ..A2cConfig::default()
    };
    let mut opt = Optimizer::new(LrSchedule::new(1e-2, 1.0), vec![], &["plastic."]);

    // The reported penalty is the mean squared trace over the batch.
    let mut total = 0.0;
    for e in 0..buf.n_envs {
        let seg = EpisodeSegment {
            obs: buf.trajectory(e).map(|t| t.obs.clone()).collect(),
            context: buf.trajectory(e).map(|t| t.context.clone()).collect(),
            resets: buf.trajectory(e).map(|t| t.done).collect(),
        };
        let (o, _) = unroll_forward(&ac.agent, &ps, &buf.initial_states[e], &seg, 30).unwrap();
        total += o.trace_sq.iter().sum::<f64>();
    }
    let first = a2c_update(&ac, &mut ps, &mut opt, &buf, &gae, &a2c, None).unwrap();
    assert!((first.trace_penalty - total / buf.batch_size() as f64).abs() < 1e-12);
    assert!(first.grad_norm > 0.0);

    let mut last = first.trace_penalty;
    for _ in 0..20 {
        last = a2c_update(&ac, &mut ps, &mut opt, &buf, &gae, &a2c, None).unwrap().trace_penalty;
    }
    assert!(last < first.trace_penalty, "{last} !< {}", first.trace_penalty);
}

#[test]
fn ppo_learns_a_bandit_within_fifty_updates() {
    let (solved, p) = ppo_bandit(10, 50);
    assert!(solved.is_some_and(|n| n > 0), "probability of the best action {p}");
}
