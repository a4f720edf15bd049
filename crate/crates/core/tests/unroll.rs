mod common;

use common::{gradient_check, random_segment, small_agent, small_arch};
use sma_core::agent::{AgentSpec, ContextInput};
use sma_core::metagrad::{backward, unroll_forward, EpisodeSegment, ParameterSet, StepGrads};
use sma_core::network::{PlasticRule, SnnPolicy};
use sma_core::SmaError;

#[test]
fn short_unrolls_match_finite_differences() {
    for rule in [PlasticRule::Modulated, PlasticRule::Stdp] {
        let (spec, ps) = small_agent(rule, 0.0, 0.05, 3);
        let seg = random_segment(&spec, 6, 4);
        let r = gradient_check(&spec, &ps, &seg, 5, 1e-6);
        assert!(r.spikes > 0.0, "fixture never spikes");
        assert!(r.max_rel_err < 1e-4, "{rule:?}: {}", r.worst);
        assert!(r.checked > 100, "{rule:?}: only {} scalars checked", r.checked);
    }
}

#[test]
fn single_step_matches_value_only_policy() {
    let (spec, ps) = small_agent(PlasticRule::Modulated, 0.3, 0.05, 1);
    let seg = random_segment(&spec, 1, 2);
    let init = spec.policy.initial_state();
    let (out, tape) = unroll_forward(&spec, &ps, &init, &seg, 1).unwrap();
    assert_eq!(tape.len(), 1);

    let bound = spec.bind(&ps).unwrap();
    let m = bound.context_value(&ps, &seg.context[0]).unwrap();
    let mut state = init.clone();
    let mean = bound.policy.act(&ps, &mut state, &seg.obs[0], None, m.as_deref());
    assert_eq!(out.means[0], mean);
    assert_eq!(out.final_state, state);
}

#[test]
fn zero_modulators_leave_the_policy_unchanged() {
    let (spec, ps) = small_agent(PlasticRule::Modulated, 0.3, 0.05, 7);
    let mut seg = random_segment(&spec, 50, 8);
    seg.context = vec![ContextInput::Given(vec![0.0; spec.context_dim()]); 50];
    let (plastic, _) = unroll_forward(&spec, &ps, &spec.policy.initial_state(), &seg, 50).unwrap();

    let mut fixed_arch = spec.policy.clone();
    fixed_arch.plastic = None;
    let fixed = AgentSpec::plain(fixed_arch);
    let plain = EpisodeSegment::plain(seg.obs.clone());
    let (base, _) = unroll_forward(&fixed, &ps, &fixed.policy.initial_state(), &plain, 50).unwrap();

    assert_eq!(plastic.means, base.means);
    let delta = &plastic.final_state.plastic.as_ref().unwrap().delta;
    assert!(delta.iter().all(|d| *d == 0.0));
}

#[test]
fn replay_reproduces_the_recorded_pass() {
    let (spec, ps) = small_agent(PlasticRule::Modulated, 0.3, 0.05, 11);
    let seg = random_segment(&spec, 12, 12);
    let (out, tape) = unroll_forward(&spec, &ps, &spec.policy.initial_state(), &seg, 30).unwrap();
    assert_eq!(tape.replay(&ps).unwrap(), out);
}

#[test]
fn overlong_segment_is_rejected() {
    let (spec, ps) = small_agent(PlasticRule::Stdp, 0.3, 0.05, 1);
    let seg = random_segment(&spec, 31, 1);
    let err = unroll_forward(&spec, &ps, &spec.policy.initial_state(), &seg, 30).err().unwrap();
    assert!(matches!(err, SmaError::WindowOverflow { len: 31, window: 30 }));
}

#[test]
fn truncated_windows_chain_to_the_full_forward_pass() {
    let (spec, ps) = small_agent(PlasticRule::Modulated, 0.3, 0.05, 21);
    let seg = random_segment(&spec, 40, 22);
    let init = spec.policy.initial_state();
    let (full, _) = unroll_forward(&spec, &ps, &init, &seg, 40).unwrap();

    let split = |lo: usize, hi: usize| EpisodeSegment {
        obs: seg.obs[lo..hi].to_vec(),
        context: seg.context[lo..hi].to_vec(),
        resets: seg.resets[lo..hi].to_vec(),
    };
    let (a, _) = unroll_forward(&spec, &ps, &init, &split(0, 25), 25).unwrap();
    let (b, tape_b) = unroll_forward(&spec, &ps, &a.final_state, &split(25, 40), 25).unwrap();
    let chained: Vec<Vec<f64>> = a.means.iter().chain(&b.means).cloned().collect();
    assert_eq!(chained, full.means);
    assert_eq!(b.final_state, full.final_state);

    // The second window starts from detached state: it needs exactly one
    // adjoint per recorded step.
    let short = vec![StepGrads::default(); 3];
    assert!(matches!(backward(&tape_b, &short), Err(SmaError::IncompleteTape(_))));
}

#[test]
fn resets_restart_from_the_initial_state() {
    let (spec, ps) = small_agent(PlasticRule::Modulated, 0.3, 0.05, 31);
    let mut seg = random_segment(&spec, 10, 32);
    seg.resets[4] = true;
    let init = spec.policy.initial_state();
    let (whole, _) = unroll_forward(&spec, &ps, &init, &seg, 10).unwrap();
    let tail = EpisodeSegment {
        obs: seg.obs[5..].to_vec(),
        context: seg.context[5..].to_vec(),
        resets: seg.resets[5..].to_vec(),
    };
    let (fresh, _) = unroll_forward(&spec, &ps, &init, &tail, 10).unwrap();
    assert_eq!(&whole.means[5..], &fresh.means[..]);
}

#[test]
fn sub_threshold_membrane_is_a_linear_filter() {
    let mut arch = small_arch(PlasticRule::Stdp, 0.3, 0.05);
    arch.threshold = 1e9;
    arch.plastic = None;
    let spec = AgentSpec::plain(arch);
    let (_, mut ps) = small_agent(PlasticRule::Stdp, 0.3, 0.05, 41);
    ps = keep_prefix(&ps, "pi.");
    let seg = random_segment(&spec, 25, 42);
    let (out, _) = unroll_forward(&spec, &ps, &spec.policy.initial_state(), &seg, 25).unwrap();

    let w = ps.by_name("pi.l0.w").unwrap();
    let b = ps.by_name("pi.l0.b").unwrap();
    let (n_out, n_in) = (spec.policy.hidden[0], spec.policy.obs_dim);
    let lam = spec.policy.leak;
    let mut expected = vec![0.0; n_out];
    for (t, x) in seg.obs.iter().enumerate() {
        let k = (seg.len() - 1 - t) as i32;
        for j in 0..n_out {
            let i_j: f64 = (0..n_in).map(|i| w[j * n_in + i] * x[i]).sum::<f64>() + b[j];
            expected[j] += lam.powi(k) * i_j;
        }
    }
    for (v, e) in out.final_state.v[0].iter().zip(&expected) {
        assert!((v - e).abs() <= 1e-12 * e.abs().max(1.0), "{v} vs {e}");
    }
    assert!(out.means.iter().flatten().all(|m| *m == 0.0));
}

fn keep_prefix(ps: &ParameterSet, prefix: &str) -> ParameterSet {
    let mut out = ParameterSet::new();
    for (_, t) in ps.iter().filter(|(_, t)| t.name.starts_with(prefix)) {
        out.insert(t.name.clone(), t.shape.clone(), t.data.clone());
    }
    out
}

#[test]
fn policy_binding_checks_parameter_shapes() {
    let (spec, mut ps) = small_agent(PlasticRule::Stdp, 0.3, 0.05, 1);
    ps.insert("pi.l0.b", vec![3], vec![0.0; 3]);
    assert!(SnnPolicy::new(&spec.policy, &ps).is_err());
}
