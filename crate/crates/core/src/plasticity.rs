//! Synaptic traces, pair-based STDP, dual eligibility traces and the
//! neuromodulated weight update.
//!
//! All synapse matrices are row-major `n_post × n_pre`: entry `(j, i)` is
//! the synapse from pre-synaptic neuron `i` onto post-synaptic neuron `j`.
//!
//! Per-step ordering used throughout the crate:
//! spikes → synaptic traces → eligibilities → weight update → clock tick.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Result, SmaError};

pub fn default_trace_decay() -> f64 {
    (-1.0_f64 / 10.0).exp()
}

pub fn default_eligibility_decay() -> f64 {
    (-1.0_f64 / 200.0).exp()
}

pub const DEFAULT_UPDATE_SCALE: f64 = 1e-3;
pub const RATE_INIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceState {
    pub x_pre: Vec<f64>,
    pub x_post: Vec<f64>,
    /// Decay multiplier α_x.
    pub decay: f64,
    /// Increment per spike β.
    pub beta: f64,
}

impl TraceState {
    pub fn zeros(n_pre: usize, n_post: usize) -> Self {
        Self {
            x_pre: vec![0.0; n_pre],
            x_post: vec![0.0; n_post],
            decay: default_trace_decay(),
            beta: 1.0,
        }
    }

    /// Largest value a trace can reach from zero under binary spikes.
    pub fn upper_bound(&self) -> f64 {
        self.beta / (1.0 - self.decay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilityPair {
    pub n_post: usize,
    pub n_pre: usize,
    pub e_plus: Vec<f64>,
    pub e_minus: Vec<f64>,
    /// Retention multiplier γ.
    pub retention: f64,
    /// Per-synapse incorporation rate α_ij.
    pub rate: Vec<f64>,
}

impl EligibilityPair {
    pub fn zeros(n_post: usize, n_pre: usize, rate: Vec<f64>) -> Self {
        Self {
            n_post,
            n_pre,
            e_plus: vec![0.0; n_post * n_pre],
            e_minus: vec![0.0; n_post * n_pre],
            retention: default_eligibility_decay(),
            rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdpCoefficients {
    pub n_post: usize,
    pub n_pre: usize,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
}

impl StdpCoefficients {
    pub fn uniform(n_post: usize, n_pre: usize, a_plus: f64, a_minus: f64) -> Self {
        Self {
            n_post,
            n_pre,
            a_plus: vec![a_plus; n_post * n_pre],
            a_minus: vec![a_minus; n_post * n_pre],
        }
    }
}

/// Third-factor signals. `m_plus` is per post-neuron unless the layer is
/// configured to broadcast it along pre-synaptic neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatorSignal {
    pub m_plus: Vec<f64>,
    pub m_minus: Vec<f64>,
}

impl ModulatorSignal {
    pub fn zeros(n: usize) -> Self {
        Self {
            m_plus: vec![0.0; n],
            m_minus: vec![0.0; n],
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            m_plus: self.m_plus.iter().map(|m| -m).collect(),
            m_minus: self.m_minus.iter().map(|m| -m).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticWeights {
    pub n_post: usize,
    pub n_pre: usize,
    pub w: Vec<f64>,
    pub update_scale: f64,
    /// Policy steps since episode start, starting at 1.
    pub t: u64,
}

impl PlasticWeights {
    pub fn new(n_post: usize, n_pre: usize, w: Vec<f64>) -> Self {
        Self {
            n_post,
            n_pre,
            w,
            update_scale: DEFAULT_UPDATE_SCALE,
            t: 1,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.w.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Which index the LTP modulator is broadcast along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulatorBroadcast {
    /// Both modulators indexed by post-synaptic neuron.
    #[default]
    PerPost,
    /// `m_plus` indexed by pre-synaptic neuron, `m_minus` by post.
    PlusPerPre,
}

/// `x' = α x + β s`.
pub(crate) fn trace_kernel(x: &[f64], s: &[f64], decay: f64, beta: f64, out: &mut [f64]) {
    for ((o, &xi), &si) in out.iter_mut().zip(x).zip(s) {
        *o = decay * xi + beta * si;
    }
}

/// Row-major outer product `out[j, i] = a[j] * b[i]`.
pub(crate) fn outer_kernel(a: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = b.len();
    for (j, &aj) in a.iter().enumerate() {
        let row = &mut out[j * cols..(j + 1) * cols];
        if aj == 0.0 {
            row.iter_mut().for_each(|o| *o = 0.0);
        } else {
            for (o, &bi) in row.iter_mut().zip(b) {
                *o = aj * bi;
            }
        }
    }
}

fn binary(context: &str, s: &[f64]) -> Result<()> {
    if s.iter().all(|&x| x == 0.0 || x == 1.0) {
        Ok(())
    } else {
        Err(SmaError::InvalidArgument(format!("{context} must be binary")))
    }
}

pub fn update_trace(trace: &TraceState, spikes_pre: &[f64], spikes_post: &[f64]) -> Result<TraceState> {
    check_len("update_trace pre", trace.x_pre.len(), spikes_pre.len())?;
    check_len("update_trace post", trace.x_post.len(), spikes_post.len())?;
    binary("pre spikes", spikes_pre)?;
    binary("post spikes", spikes_post)?;
    let mut next = trace.clone();
    trace_kernel(&trace.x_pre, spikes_pre, trace.decay, trace.beta, &mut next.x_pre);
    trace_kernel(&trace.x_post, spikes_post, trace.decay, trace.beta, &mut next.x_post);
    Ok(next)
}

fn check_synapse_shapes(n_post: usize, n_pre: usize, trace: &TraceState, pre: &[f64], post: &[f64]) -> Result<()> {
    check_len("pre trace", n_pre, trace.x_pre.len())?;
    check_len("post trace", n_post, trace.x_post.len())?;
    check_len("pre spikes", n_pre, pre.len())?;
    check_len("post spikes", n_post, post.len())
}

/// Pair-based STDP: `Δ[j,i] = A+[j,i]·x_pre[i]·s_post[j] − A−[j,i]·x_post[j]·s_pre[i]`.
pub fn stdp_delta(
    coef: &StdpCoefficients,
    trace: &TraceState,
    spikes_pre: &[f64],
    spikes_post: &[f64],
) -> Result<Vec<f64>> {
    let (n_post, n_pre) = (coef.n_post, coef.n_pre);
    check_synapse_shapes(n_post, n_pre, trace, spikes_pre, spikes_post)?;
    check_len("A+", n_post * n_pre, coef.a_plus.len())?;
    check_len("A-", n_post * n_pre, coef.a_minus.len())?;
    let mut ltp = vec![0.0; n_post * n_pre];
    let mut ltd = vec![0.0; n_post * n_pre];
    outer_kernel(spikes_post, &trace.x_pre, &mut ltp);
    outer_kernel(&trace.x_post, spikes_pre, &mut ltd);
    Ok((0..n_post * n_pre)
        .map(|k| coef.a_plus[k] * ltp[k] - coef.a_minus[k] * ltd[k])
        .collect())
}

/// `E+ ← γE+ + α ⊙ (s_post ⊗ x_pre)`, `E− ← γE− − α ⊙ (x_post ⊗ s_pre)`.
pub fn update_eligibility(
    elig: &EligibilityPair,
    trace: &TraceState,
    spikes_pre: &[f64],
    spikes_post: &[f64],
) -> Result<EligibilityPair> {
    let (n_post, n_pre) = (elig.n_post, elig.n_pre);
    check_synapse_shapes(n_post, n_pre, trace, spikes_pre, spikes_post)?;
    check_len("eligibility rate", n_post * n_pre, elig.rate.len())?;
    let mut ltp = vec![0.0; n_post * n_pre];
    let mut ltd = vec![0.0; n_post * n_pre];
    outer_kernel(spikes_post, &trace.x_pre, &mut ltp);
    outer_kernel(&trace.x_post, spikes_pre, &mut ltd);
    let g = elig.retention;
    let mut next = elig.clone();
    for k in 0..n_post * n_pre {
        next.e_plus[k] = g * elig.e_plus[k] + elig.rate[k] * ltp[k];
        next.e_minus[k] = g * elig.e_minus[k] - elig.rate[k] * ltd[k];
    }
    Ok(next)
}

/// Stabilization factor `exp(1/t) − 1` for policy step `t ≥ 1`.
pub fn stabilization(t: u64) -> Result<f64> {
    if t < 1 {
        return Err(SmaError::InvalidArgument("stabilization step must be >= 1".into()));
    }
    Ok(stabilization_unchecked(t))
}

#[inline]
pub(crate) fn stabilization_unchecked(t: u64) -> f64 {
    (1.0 / t as f64).exp_m1()
}

/// Modulated dual-trace delta `m+ ⊙ E+ + m− ⊙ E−` (broadcast per `mode`).
pub(crate) fn modulated_delta_kernel(
    e_plus: &[f64],
    e_minus: &[f64],
    m_plus: &[f64],
    m_minus: &[f64],
    n_pre: usize,
    mode: ModulatorBroadcast,
    out: &mut [f64],
) {
    for (k, o) in out.iter_mut().enumerate() {
        let (j, i) = (k / n_pre, k % n_pre);
        let mp = match mode {
            ModulatorBroadcast::PerPost => m_plus[j],
            ModulatorBroadcast::PlusPerPre => m_plus[i],
        };
        *o = mp * e_plus[k] + m_minus[j] * e_minus[k];
    }
}

pub fn modulated_update(
    w: &PlasticWeights,
    elig: &EligibilityPair,
    modulator: &ModulatorSignal,
) -> Result<PlasticWeights> {
    modulated_update_with(w, elig, modulator, ModulatorBroadcast::PerPost)
}

pub fn modulated_update_with(
    w: &PlasticWeights,
    elig: &EligibilityPair,
    modulator: &ModulatorSignal,
    mode: ModulatorBroadcast,
) -> Result<PlasticWeights> {
    let (n_post, n_pre) = (w.n_post, w.n_pre);
    check_len("eligibility rows", n_post, elig.n_post)?;
    check_len("eligibility cols", n_pre, elig.n_pre)?;
    let plus_len = match mode {
        ModulatorBroadcast::PerPost => n_post,
        ModulatorBroadcast::PlusPerPre => n_pre,
    };
    check_len("m_plus", plus_len, modulator.m_plus.len())?;
    check_len("m_minus", n_post, modulator.m_minus.len())?;
    check_finite("m_plus", &modulator.m_plus)?;
    check_finite("m_minus", &modulator.m_minus)?;
    let eta = stabilization(w.t)?;
    let mut delta = vec![0.0; n_post * n_pre];
    modulated_delta_kernel(
        &elig.e_plus,
        &elig.e_minus,
        &modulator.m_plus,
        &modulator.m_minus,
        n_pre,
        mode,
        &mut delta,
    );
    let c = eta * w.update_scale;
    let mut next = w.clone();
    for (wk, dk) in next.w.iter_mut().zip(&delta) {
        *wk += c * dk;
    }
    next.t += 1;
    Ok(next)
}

/// Plain additive STDP: `W' = W + scale · stdp_delta`, no modulation or
/// stabilization.
pub fn unmodulated_stdp_update(
    w: &PlasticWeights,
    coef: &StdpCoefficients,
    trace: &TraceState,
    spikes_pre: &[f64],
    spikes_post: &[f64],
) -> Result<PlasticWeights> {
    let delta = stdp_delta(coef, trace, spikes_pre, spikes_post)?;
    let mut next = w.clone();
    for (wk, dk) in next.w.iter_mut().zip(&delta) {
        *wk += w.update_scale * dk;
    }
    next.t += 1;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single_trace(x_pre: f64, x_post: f64) -> TraceState {
        TraceState {
            x_pre: vec![x_pre],
            x_post: vec![x_post],
            decay: default_trace_decay(),
            beta: 1.0,
        }
    }

    #[test]
    fn trace_decay_and_increment() {
        let t = update_trace(&single_trace(1.0, 0.0), &[0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(t.x_pre[0], 0.904_837_418_035_960, epsilon = 1e-12);
        assert_eq!(t.x_post[0], 1.0);
    }

    #[test]
    fn trace_fixed_point_under_constant_firing() {
        let mut t = single_trace(0.0, 0.0);
        for _ in 0..500 {
            t = update_trace(&t, &[1.0], &[1.0]).unwrap();
        }
        assert_abs_diff_eq!(t.x_pre[0], 10.508_331_944_775_044, epsilon = 1e-9);
        assert_abs_diff_eq!(t.x_pre[0], t.upper_bound(), epsilon = 1e-9);
    }

    #[test]
    fn stdp_gating_and_ltp() {
        let coef = StdpCoefficients::uniform(1, 1, 0.1, 0.1);
        let t = single_trace(0.5, 0.3);
        assert_eq!(stdp_delta(&coef, &t, &[0.0], &[0.0]).unwrap(), vec![0.0]);
        let d = stdp_delta(&coef, &t, &[0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(d[0], 0.05, epsilon = 1e-15);

        let w = PlasticWeights::new(1, 1, vec![0.2]);
        let w2 = unmodulated_stdp_update(&w, &coef, &t, &[0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(w2.w[0] - w.w[0], 5e-5, epsilon = 1e-15);
        let w3 = unmodulated_stdp_update(&w, &coef, &t, &[0.0], &[0.0]).unwrap();
        assert_eq!(w3.w, w.w);
    }

    /// Runs traces and STDP over a spike schedule and returns the delta at
    /// every step (hand simulation of the trace + pair rule).
    fn stdp_history(pre: &[f64], post: &[f64], coef: &StdpCoefficients) -> Vec<f64> {
        let mut trace = single_trace(0.0, 0.0);
        pre.iter()
            .zip(post)
            .map(|(&sp, &so)| {
                trace = update_trace(&trace, &[sp], &[so]).unwrap();
                stdp_delta(coef, &trace, &[sp], &[so]).unwrap()[0]
            })
            .collect()
    }

    #[test]
    fn pre_before_post_potentiates() {
        let coef = StdpCoefficients::uniform(1, 1, 1.0, 1.0);
        let d = stdp_history(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &coef);
        assert_eq!(d[0], 0.0);
        assert!(d[2] > 0.0);
        assert_abs_diff_eq!(d[2], default_trace_decay().powi(2), epsilon = 1e-15);
        let rev = stdp_history(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &coef);
        assert!(rev[2] < 0.0);
    }

    #[test]
    fn sustained_correlated_firing_grows_weights() {
        let coef = StdpCoefficients::uniform(1, 1, 1.0, 0.5);
        let mut trace = single_trace(0.0, 0.0);
        let mut w = PlasticWeights::new(1, 1, vec![0.0]);
        let mut prev = w.w[0];
        for step in 0..100 {
            // pre fires on even steps, post one step later
            let sp = if step % 2 == 0 { 1.0 } else { 0.0 };
            let so = 1.0 - sp;
            trace = update_trace(&trace, &[sp], &[so]).unwrap();
            w = unmodulated_stdp_update(&w, &coef, &trace, &[sp], &[so]).unwrap();
            if step >= 2 {
                assert!(w.w[0] >= prev || sp == 1.0);
            }
            prev = w.w[0];
        }
        assert!(w.w[0] > 0.0);
    }

    #[test]
    fn eligibility_decay() {
        let e = EligibilityPair {
            n_post: 1,
            n_pre: 1,
            e_plus: vec![1.0],
            e_minus: vec![1.0],
            retention: default_eligibility_decay(),
            rate: vec![0.5],
        };
        let t = single_trace(0.0, 0.0);
        let next = update_eligibility(&e, &t, &[0.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(next.e_plus[0], 0.995_012_479_192_682, epsilon = 1e-12);
        assert_abs_diff_eq!(next.e_minus[0], 0.995_012_479_192_682, epsilon = 1e-12);
    }

    #[test]
    fn zero_rate_ignores_activity() {
        let mut e = EligibilityPair::zeros(2, 2, vec![0.0; 4]);
        e.e_plus = vec![0.3, -0.1, 0.2, 0.0];
        let mut t = TraceState::zeros(2, 2);
        let mut expect = e.e_plus.clone();
        for k in 0..20 {
            let s = [(k % 2) as f64, 1.0];
            t = update_trace(&t, &s, &s).unwrap();
            e = update_eligibility(&e, &t, &s, &s).unwrap();
            expect.iter_mut().for_each(|x| *x *= default_eligibility_decay());
        }
        assert_eq!(e.e_plus, expect);
    }

    #[test]
    fn stabilization_values() {
        assert_abs_diff_eq!(stabilization(1).unwrap(), std::f64::consts::E - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(stabilization(100).unwrap(), 0.010_050_167_084_168, epsilon = 1e-15);
        assert!(stabilization(1_000_000).unwrap() < 1.1e-6);
        assert!(stabilization(0).is_err());
    }

    #[test]
    fn modulated_update_cases() {
        let w = PlasticWeights::new(1, 1, vec![0.25]);
        let mut e = EligibilityPair::zeros(1, 1, vec![1.0]);
        e.e_plus = vec![1.0];
        let m = ModulatorSignal { m_plus: vec![1.0], m_minus: vec![0.0] };
        let next = modulated_update(&w, &e, &m).unwrap();
        assert_abs_diff_eq!(next.w[0] - 0.25, 1.718_281_828_459_045e-3, epsilon = 1e-15);
        assert_eq!(next.t, 2);

        let zero = modulated_update(&w, &e, &ModulatorSignal::zeros(1)).unwrap();
        assert_eq!(zero.w, w.w);

        let bad = ModulatorSignal { m_plus: vec![f64::NAN], m_minus: vec![0.0] };
        assert!(modulated_update(&w, &e, &bad).is_err());
    }

    #[test]
    fn plus_per_pre_broadcast() {
        let w = PlasticWeights::new(1, 2, vec![0.0, 0.0]);
        let mut e = EligibilityPair::zeros(1, 2, vec![1.0; 2]);
        e.e_plus = vec![1.0, 1.0];
        let m = ModulatorSignal { m_plus: vec![1.0, 2.0], m_minus: vec![0.0] };
        let next = modulated_update_with(&w, &e, &m, ModulatorBroadcast::PlusPerPre).unwrap();
        assert_abs_diff_eq!(next.w[1], 2.0 * next.w[0], epsilon = 1e-18);
    }

    fn matrix(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0..2.0f64, n)
    }

    proptest! {
        #[test]
        fn modulated_update_is_linear_in_modulators(
            ep in matrix(6), em in matrix(6), mp in matrix(2), mm in matrix(2), t in 1u64..50,
        ) {
            let mut w = PlasticWeights::new(2, 3, vec![0.0; 6]);
            w.t = t;
            let e = EligibilityPair { n_post: 2, n_pre: 3, e_plus: ep, e_minus: em,
                retention: default_eligibility_decay(), rate: vec![0.0; 6] };
            let m = ModulatorSignal { m_plus: mp, m_minus: mm };
            let up = modulated_update(&w, &e, &m).unwrap();
            let down = modulated_update(&w, &e, &m.negated()).unwrap();
            for k in 0..6 {
                prop_assert_eq!(up.w[k], -down.w[k]);
            }
        }

        #[test]
        fn traces_stay_bounded(spikes in prop::collection::vec(prop::bool::ANY, 1..300), x0 in 0.0..5.0f64) {
            let mut t = single_trace(x0, x0);
            let bound = t.upper_bound();
            for (k, &s) in spikes.iter().enumerate() {
                let s = if s { 1.0 } else { 0.0 };
                t = update_trace(&t, &[s], &[s]).unwrap();
                let limit = bound + x0 * t.decay.powi(k as i32 + 1) + 1e-12;
                prop_assert!(t.x_pre[0] >= 0.0 && t.x_pre[0] <= limit);
            }
        }

        #[test]
        fn stabilization_strictly_decreasing(t in 1u64..5_000_000) {
            prop_assert!(stabilization(t + 1).unwrap() < stabilization(t).unwrap());
        }
    }
}
