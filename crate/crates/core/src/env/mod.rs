//! Desk-scale randomized-dynamics control testbed.
//!
//! Two PD-actuated joints hold a planar body. Joint deflection from the
//! default pose maps through a fixed kinematic matrix to the body's forward
//! velocity and yaw rate, so tracking a velocity command means holding the
//! joints at a commanded offset against a payload-scaled load. The size of
//! the steady-state sag depends on motor gain, P-gain and payload, which is
//! what makes adaptation to the hidden extrinsics worthwhile.

mod config;
mod vec_env;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    CommandRanges, EnvConfig, ExtrinsicsRanges, NoiseConfig, ObsScales, Range, RewardScales,
};
pub use vec_env::{EnvSnapshot, VecEnv, VecStep};

use crate::error::{check_len, Result, SmaError};

pub const N_JOINTS: usize = 2;
pub const N_EXTRINSICS: usize = 5;
pub const OBS_DIM: usize = 15;
pub const N_REWARD_TERMS: usize = 6;

/// Hidden physical parameters of one environment instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicsVector {
    pub motor_gain: f64,
    pub kp: f64,
    pub kd: f64,
    pub damping: f64,
    pub payload: f64,
}

impl ExtrinsicsVector {
    pub const fn nominal() -> Self {
        Self {
            motor_gain: 1.0,
            kp: 20.0,
            kd: 0.5,
            damping: 1.0,
            payload: 1.0,
        }
    }

    pub fn as_array(&self) -> [f64; N_EXTRINSICS] {
        [self.motor_gain, self.kp, self.kd, self.damping, self.payload]
    }

    /// Map each field to roughly `[-1, 1]` relative to its sampling range.
    /// Degenerate ranges map to 0.
    pub fn normalized(&self, ranges: &ExtrinsicsRanges) -> Vec<f64> {
        self.as_array()
            .iter()
            .zip(ranges.as_array())
            .map(|(&x, r)| {
                let half = 0.5 * (r.hi - r.lo);
                if half > 0.0 {
                    (x - r.mid()) / half
                } else {
                    0.0
                }
            })
            .collect()
    }
}

impl Default for ExtrinsicsVector {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Draw every field uniformly from its range.
pub fn sample_extrinsics<R: Rng + ?Sized>(
    ranges: &ExtrinsicsRanges,
    rng: &mut R,
) -> Result<ExtrinsicsVector> {
    ranges.validate()?;
    let mut draw = |r: Range| r.lo + (r.hi - r.lo) * rng.random::<f64>();
    Ok(ExtrinsicsVector {
        motor_gain: draw(ranges.motor_gain),
        kp: draw(ranges.kp),
        kd: draw(ranges.kd),
        damping: draw(ranges.damping),
        payload: draw(ranges.payload),
    })
}

/// Extrinsics behind an access counter.
///
/// Dynamics read the value through a crate-private path. Every other read
/// goes through [`Privileged::read`], which counts, so evaluation code can
/// assert that a non-privileged policy never looked.
#[derive(Debug, Default)]
pub struct Privileged {
    value: ExtrinsicsVector,
    reads: AtomicU64,
}

impl Clone for Privileged {
    fn clone(&self) -> Self {
        Self {
            value: self.value,
            reads: AtomicU64::new(self.reads()),
        }
    }
}

impl Privileged {
    pub fn new(value: ExtrinsicsVector) -> Self {
        Self {
            value,
            reads: AtomicU64::new(0),
        }
    }

    pub fn read(&self) -> ExtrinsicsVector {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.value
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub(crate) fn dynamics(&self) -> &ExtrinsicsVector {
        &self.value
    }

    pub(crate) fn replace(&mut self, value: ExtrinsicsVector) {
        self.value = value;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub v_star: f64,
    pub omega_star: f64,
}

impl Command {
    pub fn sample<R: Rng + ?Sized>(ranges: &CommandRanges, rng: &mut R) -> Self {
        let lv = ranges.lin_vel;
        let av = ranges.ang_vel;
        Self {
            v_star: lv.lo + (lv.hi - lv.lo) * rng.random::<f64>(),
            omega_star: av.lo + (av.hi - av.lo) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub q: [f64; N_JOINTS],
    pub q_dot: [f64; N_JOINTS],
    /// Mean joint acceleration over the last policy step.
    pub q_ddot: [f64; N_JOINTS],
    /// Last applied (clipped) torque.
    pub torque: [f64; N_JOINTS],
    /// Body forward velocity.
    pub v_b: f64,
    /// Body yaw rate.
    pub omega_b: f64,
    /// Body roll and pitch rates.
    pub omega_xy: [f64; 2],
    /// Global policy step counter.
    pub step: u64,
    pub episode_step: usize,
}

impl EnvState {
    pub fn at_rest(q: [f64; N_JOINTS]) -> Self {
        Self {
            q,
            q_dot: [0.0; N_JOINTS],
            q_ddot: [0.0; N_JOINTS],
            torque: [0.0; N_JOINTS],
            v_b: 0.0,
            omega_b: 0.0,
            omega_xy: [0.0; 2],
            step: 0,
            episode_step: 0,
        }
    }

    pub fn kinetic_energy(&self, inertia: f64, payload: f64) -> f64 {
        0.5 * inertia * payload * self.q_dot.iter().map(|v| v * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub timeout: bool,
    pub terms: [f64; N_REWARD_TERMS],
}

/// PD torque toward `c_a·a + q0`, scaled by motor gain and clipped.
pub fn pd_torque(
    action: &[f64],
    state: &EnvState,
    ext: &ExtrinsicsVector,
    cfg: &EnvConfig,
) -> Result<[f64; N_JOINTS]> {
    check_len("pd_torque action", N_JOINTS, action.len())?;
    if action.iter().any(|a| !a.is_finite()) {
        return Err(SmaError::NonFinite("pd_torque action".into()));
    }
    Ok(pd_torque_unchecked(action, state, ext, cfg))
}

fn pd_torque_unchecked(
    action: &[f64],
    state: &EnvState,
    ext: &ExtrinsicsVector,
    cfg: &EnvConfig,
) -> [f64; N_JOINTS] {
    let mut tau = [0.0; N_JOINTS];
    for j in 0..N_JOINTS {
        let err = cfg.action_scale * action[j] + cfg.default_q[j] - state.q[j];
        let raw = ext.motor_gain * (ext.kp * err - ext.kd * state.q_dot[j]);
        tau[j] = raw.clamp(-cfg.torque_limit, cfg.torque_limit);
    }
    tau
}

/// One semi-implicit Euler substep under a given joint torque.
pub fn integrate_substep(
    state: &mut EnvState,
    torque: &[f64; N_JOINTS],
    ext: &ExtrinsicsVector,
    cfg: &EnvConfig,
) {
    let mass = cfg.inertia * ext.payload;
    for j in 0..N_JOINTS {
        let load = ext.payload * cfg.load_torque[j];
        let acc = (torque[j] + load - ext.damping * state.q_dot[j]) / mass;
        state.q_dot[j] += acc * cfg.dt;
        state.q[j] += state.q_dot[j] * cfg.dt;
    }
}

fn update_body(state: &mut EnvState, cfg: &EnvConfig) {
    let d = [state.q[0] - cfg.default_q[0], state.q[1] - cfg.default_q[1]];
    let k = &cfg.kinematics;
    state.v_b = k[0][0] * d[0] + k[0][1] * d[1];
    state.omega_b = k[1][0] * d[0] + k[1][1] * d[1];
    state.omega_xy = [
        cfg.wobble_gain * state.q_dot[0],
        cfg.wobble_gain * state.q_dot[1],
    ];
}

/// Tracking kernel `exp(-‖x‖²/sigma)` applied to a squared norm.
pub fn tracking_kernel(sq_norm: f64, sigma: f64) -> f64 {
    (-sq_norm / sigma).exp()
}

/// Weighted reward terms and their sum clipped at zero.
pub fn reward_terms(
    state: &EnvState,
    action: &[f64],
    prev_action: &[f64],
    torque: &[f64],
    cmd: &Command,
    scales: &RewardScales,
) -> ([f64; N_REWARD_TERMS], f64) {
    let sq = |xs: &mut dyn Iterator<Item = f64>| xs.map(|x| x * x).sum::<f64>();
    let lin_err = (cmd.v_star - state.v_b).powi(2);
    let ang_err = (cmd.omega_star - state.omega_b).powi(2);
    let terms = [
        scales.tracking_lin_vel * tracking_kernel(lin_err, scales.tracking_sigma),
        scales.tracking_ang_vel * tracking_kernel(ang_err, scales.tracking_sigma),
        scales.ang_vel_xy * sq(&mut state.omega_xy.iter().copied()),
        scales.torque * sq(&mut torque.iter().copied()),
        scales.dof_acc * sq(&mut state.q_ddot.iter().copied()),
        scales.action_rate * sq(&mut action.iter().zip(prev_action).map(|(a, b)| a - b)),
    ];
    let total = terms.iter().sum::<f64>().max(0.0);
    (terms, total)
}

/// Advance one policy step (`decimation` physics substeps).
///
/// Returns the per-term rewards, the emitted reward and the failure flag.
/// The emitted reward is multiplied by the policy period when
/// `rewards.scale_by_dt` is set.
pub fn step(
    state: &mut EnvState,
    action: &[f64],
    prev_action: &[f64],
    ext: &ExtrinsicsVector,
    cmd: &Command,
    cfg: &EnvConfig,
) -> Result<([f64; N_REWARD_TERMS], f64, bool)> {
    check_len("step action", N_JOINTS, action.len())?;
    check_len("step prev_action", N_JOINTS, prev_action.len())?;
    if action.iter().any(|a| !a.is_finite()) {
        return Err(SmaError::NonFinite("step action".into()));
    }
    let q_dot0 = state.q_dot;
    let mut tau = [0.0; N_JOINTS];
    for _ in 0..cfg.decimation {
        tau = pd_torque_unchecked(action, state, ext, cfg);
        integrate_substep(state, &tau, ext, cfg);
    }
    let period = cfg.policy_dt();
    for j in 0..N_JOINTS {
        state.q_ddot[j] = (state.q_dot[j] - q_dot0[j]) / period;
    }
    state.torque = tau;
    update_body(state, cfg);
    state.step += 1;
    state.episode_step += 1;

    let (terms, total) = reward_terms(state, action, prev_action, &tau, cmd, &cfg.rewards);
    let reward = if cfg.rewards.scale_by_dt { total * period } else { total };
    let failed = state
        .q
        .iter()
        .zip(cfg.default_q)
        .any(|(q, q0)| (q - q0).abs() > cfg.q_limit || !q.is_finite());
    Ok((terms, reward, failed))
}

/// Number of uniform draws consumed by one call to [`observe`].
pub const OBS_NOISE_DRAWS: usize = 12;

/// Noisy, scaled, clipped observation.
///
/// Layout: body forward velocity (1), body angular velocity (3), gravity
/// projection (3), command (2), joint deflection (2), joint velocity (2),
/// previous action (2). The same number of random draws is consumed at any
/// noise level so paired runs stay aligned.
pub fn observe<R: Rng + ?Sized>(
    state: &EnvState,
    cmd: &Command,
    prev_action: &[f64],
    cfg: &EnvConfig,
    rng: &mut R,
) -> Vec<f64> {
    let n = &cfg.noise;
    let s = &cfg.obs_scales;
    let mut noise = |half: f64| (2.0 * rng.random::<f64>() - 1.0) * half * n.level;
    let mut obs = Vec::with_capacity(OBS_DIM);
    obs.push((state.v_b + noise(n.lin_vel)) * s.lin_vel);
    obs.push((state.omega_xy[0] + noise(n.ang_vel)) * s.ang_vel);
    obs.push((state.omega_xy[1] + noise(n.ang_vel)) * s.ang_vel);
    obs.push((state.omega_b + noise(n.ang_vel)) * s.ang_vel);
    obs.push(noise(n.gravity));
    obs.push(noise(n.gravity));
    obs.push(-1.0 + noise(n.gravity));
    obs.push(cmd.v_star * s.lin_vel);
    obs.push(cmd.omega_star * s.ang_vel);
    for j in 0..N_JOINTS {
        obs.push((state.q[j] - cfg.default_q[j] + noise(n.joint_pos)) * s.joint_pos);
    }
    for j in 0..N_JOINTS {
        obs.push((state.q_dot[j] + noise(n.joint_vel)) * s.joint_vel);
    }
    obs.extend_from_slice(&prev_action[..N_JOINTS]);
    for o in obs.iter_mut() {
        *o = o.clamp(-s.clip, s.clip);
    }
    obs
}

/// `Σ R_i·P_i` over evaluation samples.
pub fn weighted_eval_metric(returns: &[f64], probs: &[f64]) -> Result<f64> {
    check_len("weighted_eval_metric probs", returns.len(), probs.len())?;
    if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(SmaError::InvalidArgument("probabilities must be non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SmaError::InvalidArgument(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    Ok(returns.iter().zip(probs).map(|(r, p)| r * p).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rest() -> EnvState {
        EnvState::at_rest([0.0; 2])
    }

    #[test]
    fn pd_equilibrium_is_zero() {
        let cfg = EnvConfig::default();
        let tau = pd_torque(&[0.0, 0.0], &rest(), &ExtrinsicsVector::nominal(), &cfg).unwrap();
        assert_eq!(tau, [0.0, 0.0]);
    }

    #[test]
    fn pd_position_and_velocity_terms() {
        let cfg = EnvConfig::default();
        let ext = ExtrinsicsVector::nominal();
        // 0.25·0.4 = 0.1 rad of position error on both joints.
        let tau = pd_torque(&[0.4, 0.4], &rest(), &ext, &cfg).unwrap();
        assert_abs_diff_eq!(tau[0], 2.0, epsilon = 1e-12);
        let mut s = rest();
        s.q_dot = [1.0, 0.0];
        let tau = pd_torque(&[0.0, 0.0], &s, &ext, &cfg).unwrap();
        assert_eq!(tau, [-0.5, 0.0]);
    }

    #[test]
    fn pd_clips_at_torque_limit() {
        let cfg = EnvConfig::default();
        let tau =
            pd_torque(&[100.0, -100.0], &rest(), &ExtrinsicsVector::nominal(), &cfg).unwrap();
        assert_eq!(tau, [10.0, -10.0]);
    }

    #[test]
    fn degenerate_range_is_constant() {
        let mut ranges = ExtrinsicsRanges::default();
        ranges.motor_gain = Range::point(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(sample_extrinsics(&ranges, &mut rng).unwrap().motor_gain, 1.0);
        }
    }

    #[test]
    fn motor_gain_sample_mean() {
        let ranges = ExtrinsicsRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_extrinsics(&ranges, &mut rng).unwrap().motor_gain)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn sampling_is_seeded() {
        let ranges = ExtrinsicsRanges::default();
        let a = sample_extrinsics(&ranges, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_extrinsics(&ranges, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverted_range_is_rejected() {
        let mut ranges = ExtrinsicsRanges::default();
        ranges.kd = Range::new(1.0, 0.5);
        let err = sample_extrinsics(&ranges, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, SmaError::InvalidRange { .. }));
    }

    #[test]
    fn perfect_tracking_reward() {
        let (terms, total) = reward_terms(
            &rest(),
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
            &Command { v_star: 0.0, omega_star: 0.0 },
            &RewardScales::default(),
        );
        assert_eq!(total, 1.5);
        assert_eq!(&terms[2..], &[0.0; 4]);
    }

    #[test]
    fn tracking_term_at_unit_kernel_distance() {
        let (terms, _) = reward_terms(
            &rest(),
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
            &Command { v_star: 0.5, omega_star: 0.0 },
            &RewardScales::default(),
        );
        assert_abs_diff_eq!(terms[0], 0.367_879_441_171_442, epsilon = 1e-12);
    }

    #[test]
    fn heavy_penalties_clip_to_zero() {
        let (terms, total) = reward_terms(
            &rest(),
            &[100.0, 100.0],
            &[-100.0, -100.0],
            &[10.0, 10.0],
            &Command { v_star: 0.0, omega_star: 0.0 },
            &RewardScales::default(),
        );
        assert!(terms.iter().sum::<f64>() < 0.0);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn zero_torque_zero_velocity_is_still() {
        let mut cfg = EnvConfig::default();
        cfg.load_torque = [0.0, 0.0];
        let mut s = rest();
        let (_, _, failed) = step(
            &mut s,
            &[0.0, 0.0],
            &[0.0, 0.0],
            &ExtrinsicsVector::nominal(),
            &Command { v_star: 0.0, omega_star: 0.0 },
            &cfg,
        )
        .unwrap();
        assert!(!failed);
        assert_eq!(s.q, [0.0, 0.0]);
        assert_eq!(s.q_dot, [0.0, 0.0]);
        assert_eq!(s.episode_step, 1);
    }

    #[test]
    fn terminal_velocity_under_heavy_damping() {
        let cfg = EnvConfig {
            load_torque: [0.0, 0.0],
            ..EnvConfig::default()
        };
        let ext = ExtrinsicsVector {
            damping: 5.0,
            ..ExtrinsicsVector::nominal()
        };
        let mut s = rest();
        for _ in 0..2000 {
            integrate_substep(&mut s, &[1.0, 1.0], &ext, &cfg);
        }
        assert_abs_diff_eq!(s.q_dot[0], 1.0 / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn free_evolution_matches_linear_map() {
        // With zero torque and no load, one substep is the linear map
        // [q; v] -> [q + dt·a·v; a·v] with a = 1 − dt·c/m.
        let cfg = EnvConfig {
            load_torque: [0.0, 0.0],
            ..EnvConfig::default()
        };
        let ext = ExtrinsicsVector::nominal();
        let mut s = rest();
        s.q = [0.2, -0.1];
        s.q_dot = [1.0, -2.0];
        let (q0, v0) = (s.q, s.q_dot);
        for _ in 0..cfg.decimation {
            integrate_substep(&mut s, &[0.0, 0.0], &ext, &cfg);
        }
        let a = 1.0 - cfg.dt * ext.damping / (cfg.inertia * ext.payload);
        let k = cfg.decimation as i32;
        for j in 0..2 {
            let v = v0[j] * a.powi(k);
            // Geometric sum of a^1..a^k.
            let q = q0[j] + cfg.dt * v0[j] * a * (1.0 - a.powi(k)) / (1.0 - a);
            assert_abs_diff_eq!(s.q_dot[j], v, epsilon = 1e-9);
            assert_abs_diff_eq!(s.q[j], q, epsilon = 1e-9);
        }
    }

    #[test]
    fn noise_free_observation_is_deterministic_and_scaled() {
        let cfg = EnvConfig {
            noise: NoiseConfig::zero(),
            ..EnvConfig::default()
        };
        let mut s = rest();
        s.q_dot = [10.0, 0.0];
        let cmd = Command { v_star: 0.1, omega_star: 0.2 };
        let a = observe(&s, &cmd, &[0.0, 0.0], &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let b = observe(&s, &cmd, &[0.0, 0.0], &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_eq!(a.len(), OBS_DIM);
        assert_eq!(a[11], 0.5);
        assert_eq!(a[6], -1.0);
    }

    #[test]
    fn observation_clips() {
        let cfg = EnvConfig::default();
        let mut s = rest();
        s.q_dot = [1e5, -1e5];
        let cmd = Command { v_star: 0.0, omega_star: 0.0 };
        let o = observe(&s, &cmd, &[0.0, 0.0], &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(o[11], 100.0);
        assert_eq!(o[12], -100.0);
    }

    #[test]
    fn weighted_metric_examples() {
        assert_eq!(weighted_eval_metric(&[1.0, 2.0], &[0.5, 0.5]).unwrap(), 1.5);
        assert_eq!(weighted_eval_metric(&[1.0, 7.0, 2.0], &[0.0, 1.0, 0.0]).unwrap(), 7.0);
        let r: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let p = vec![1.0 / 11.0; 11];
        assert_abs_diff_eq!(weighted_eval_metric(&r, &p).unwrap(), 5.0, epsilon = 1e-12);
        assert!(weighted_eval_metric(&[1.0], &[0.9]).is_err());
        assert!(weighted_eval_metric(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn privileged_reads_are_counted() {
        let p = Privileged::new(ExtrinsicsVector::nominal());
        let _ = p.dynamics();
        assert_eq!(p.reads(), 0);
        let _ = p.read();
        assert_eq!(p.reads(), 1);
    }

    #[test]
    fn normalized_extrinsics_span_unit_interval() {
        let r = ExtrinsicsRanges::default();
        let lo = ExtrinsicsVector {
            motor_gain: 0.8,
            kp: 12.5,
            kd: 0.25,
            damping: 0.1,
            payload: 0.75,
        };
        assert_eq!(lo.normalized(&r), vec![-1.0; 5]);
    }

    proptest! {
        #[test]
        fn passive_energy_never_increases(
            q in prop::array::uniform2(-1.0f64..1.0),
            v in prop::array::uniform2(-5.0f64..5.0),
            damping in 0.1f64..2.75,
            payload in 0.75f64..1.5,
        ) {
            let cfg = EnvConfig { load_torque: [0.0, 0.0], ..EnvConfig::default() };
            let ext = ExtrinsicsVector { damping, payload, ..ExtrinsicsVector::nominal() };
            let mut s = EnvState::at_rest(q);
            s.q_dot = v;
            let mut e = s.kinetic_energy(cfg.inertia, payload);
            for _ in 0..200 {
                integrate_substep(&mut s, &[0.0, 0.0], &ext, &cfg);
                let e2 = s.kinetic_energy(cfg.inertia, payload);
                prop_assert!(e2 <= e);
                e = e2;
            }
        }

        #[test]
        fn larger_motor_gain_gives_larger_torque(
            a in prop::array::uniform2(-2.0f64..2.0),
            q in prop::array::uniform2(-0.5f64..0.5),
            g in 0.8f64..1.1,
        ) {
            let cfg = EnvConfig { torque_limit: f64::INFINITY, ..EnvConfig::default() };
            let s = EnvState::at_rest(q);
            let lo = ExtrinsicsVector { motor_gain: g, ..ExtrinsicsVector::nominal() };
            let hi = ExtrinsicsVector { motor_gain: g + 0.1, ..ExtrinsicsVector::nominal() };
            let t1 = pd_torque(&a, &s, &lo, &cfg).unwrap();
            let t2 = pd_torque(&a, &s, &hi, &cfg).unwrap();
            for j in 0..2 {
                prop_assert!(t2[j].abs() >= t1[j].abs());
            }
        }
    }
}
