//! Evaluation: sweeps along one extrinsic (or noise) axis, the weighted
//! metric `Σ R_i·P_i` with confidence intervals, and paired comparisons.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::run_dir::RunDir;
use crate::config::{EvalAxis, EvalConfig};
use crate::env::{weighted_eval_metric, EnvConfig, Range, VecEnv};
use crate::error::{Result, SmaError};
use crate::metagrad::ParameterSet;
use crate::rl::{ActorCritic, Collector, ContextSource, EvalEpisodes};

/// A trained policy and the context it is evaluated with.
#[derive(Debug, Clone)]
pub struct PolicyEntry {
    pub label: String,
    pub ac: ActorCritic,
    pub ps: ParameterSet,
    pub source: ContextSource,
}

impl PolicyEntry {
    /// Whether this entry may read the true extrinsics.
    pub fn privileged(&self) -> bool {
        self.source == ContextSource::Privileged
    }
}

pub const ROW_NON_ADAPTIVE: &str = "Non-Adaptive SNN";
pub const ROW_PLASTIC: &str = "Plastic SNN";
pub const ROW_RMA: &str = "RMA";
pub const ROW_SMA: &str = "SMA";
pub const ROW_RMA_EXPERT: &str = "RMA Expert";
pub const ROW_SMA_EXPERT: &str = "SMA Expert";

/// Load every available policy of a run in table order. Missing stages are
/// skipped and reported in the returned warnings.
pub fn load_policies(dir: &RunDir) -> Result<(Vec<PolicyEntry>, Vec<String>)> {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let mut push = |label: &str, stage: &str, source: Option<ContextSource>, ck: &Option<crate::persist::Checkpoint>| match (ck, source) {
        (Some(c), Some(s)) => out.push(PolicyEntry {
            label: label.to_string(),
            ac: c.model.clone(),
            ps: c.params.clone(),
            source: s,
        }),
        _ => warnings.push(format!("row {label:?} omitted: stage {stage:?} not available")),
    };
    let pre = dir.load_optional("pretrain")?;
    let plastic = dir.load_optional("plastic")?;
    let rma = dir.load_optional("rma")?;
    let p2 = dir.load_optional("phase2")?;
    let p1 = dir.load_optional("phase1")?;
    let est = |c: &Option<crate::persist::Checkpoint>| c.as_ref().and_then(|c| c.estimator.clone()).map(ContextSource::Estimator);
    push(ROW_NON_ADAPTIVE, "pretrain", Some(ContextSource::None), &pre);
    push(ROW_PLASTIC, "plastic", Some(ContextSource::None), &plastic);
    push(ROW_RMA, "rma", est(&rma), &rma);
    push(ROW_SMA, "phase2", est(&p2), &p2);
    push(ROW_RMA_EXPERT, "rma", Some(ContextSource::Privileged), &rma);
    let expert = if p1.is_some() { p1 } else { p2 };
    push(ROW_SMA_EXPERT, "phase1", Some(ContextSource::Privileged), &expert);
    Ok((out, warnings))
}

/// Grid of values swept along an axis.
pub fn axis_grid(env: &EnvConfig, axis: EvalAxis, k: usize) -> Vec<f64> {
    let r = &env.ranges;
    match axis {
        EvalAxis::MotorGain => r.motor_gain.grid(k),
        EvalAxis::PGain => r.kp.grid(k),
        EvalAxis::DGain => r.kd.grid(k),
        EvalAxis::Friction => r.damping.grid(k),
        EvalAxis::ObservationNoise => Range::new(0.0, 2.0 * env.noise.level).grid(k),
        EvalAxis::Randomized | EvalAxis::NoNoise => vec![f64::NAN],
    }
}

/// Environment for one sweep sample: the swept quantity is fixed at
/// `value`, the other extrinsics at nominal.
pub fn axis_env(base: &EnvConfig, axis: EvalAxis, value: f64) -> EnvConfig {
    let mut cfg = base.clone();
    if axis == EvalAxis::Randomized {
        cfg.randomize = true;
        return cfg;
    }
    let n = base.nominal;
    cfg.randomize = true;
    cfg.ranges.motor_gain = Range::point(n.motor_gain);
    cfg.ranges.kp = Range::point(n.kp);
    cfg.ranges.kd = Range::point(n.kd);
    cfg.ranges.damping = Range::point(n.damping);
    cfg.ranges.payload = Range::point(n.payload);
    match axis {
        EvalAxis::MotorGain => cfg.ranges.motor_gain = Range::point(value),
        EvalAxis::PGain => cfg.ranges.kp = Range::point(value),
        EvalAxis::DGain => cfg.ranges.kd = Range::point(value),
        EvalAxis::Friction => cfg.ranges.damping = Range::point(value),
        EvalAxis::ObservationNoise => cfg.noise.level = value,
        EvalAxis::NoNoise => cfg.noise.level = 0.0,
        EvalAxis::Randomized => unreachable!(),
    }
    cfg
}

/// Deterministic episodes of one policy on a fresh batch of envs. Returns
/// the episodes and the number of privileged reads they made.
pub fn run_policy(entry: &PolicyEntry, env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<(EvalEpisodes, u64)> {
    let mut env = VecEnv::new(env_cfg.clone(), episodes, seed)?;
    let mut collector = Collector::new(&entry.ac, episodes, entry.source.history_len(), seed);
    let out = collector.evaluate(&entry.ac, &entry.ps, &mut env, &entry.source)?;
    let reads = env.privileged_reads();
    if !entry.privileged() && reads != 0 {
        return Err(SmaError::InvalidArgument(format!(
            "policy {:?} read privileged extrinsics {reads} times",
            entry.label
        )));
    }
    Ok((out, reads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub policy: String,
    pub axis: EvalAxis,
    pub metric: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
    /// Per-sample, per-episode returns.
    pub returns: Vec<Vec<f64>>,
    pub privileged_reads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub policies: Vec<String>,
    pub axes: Vec<EvalAxis>,
    pub cells: Vec<CellResult>,
}

impl EvalTable {
    pub fn cell(&self, policy: &str, axis: EvalAxis) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.policy == policy && c.axis == axis)
    }

    /// Aligned text table, `metric ± half-width` per cell.
    pub fn to_text(&self) -> String {
        let w0 = self.policies.iter().map(String::len).max().unwrap_or(6).max(6);
        let cols: Vec<String> = self.axes.iter().map(|a| a.label().to_string()).collect();
        let w = 16;
        let mut s = String::new();
        let _ = write!(s, "{:<w0$}", "policy");
        for c in &cols {
            let _ = write!(s, " {c:>w$}");
        }
        s.push('\n');
        for p in &self.policies {
            let _ = write!(s, "{p:<w0$}");
            for a in &self.axes {
                let cell = match self.cell(p, *a) {
                    Some(c) => format!("{:.3} ± {:.3}", c.metric, 0.5 * (c.ci_high - c.ci_low)),
                    None => "-".to_string(),
                };
                let _ = write!(s, " {cell:>w$}");
            }
            s.push('\n');
        }
        s
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Weighted metric and a normal-approximation 95% interval from per-sample
/// episode returns.
pub fn weighted_with_ci(returns: &[Vec<f64>], probs: &[f64]) -> Result<(f64, f64, f64)> {
    let means: Vec<f64> = returns.iter().map(|r| mean_var(r).0).collect();
    let metric = weighted_eval_metric(&means, probs)?;
    let var: f64 = returns
        .iter()
        .zip(probs)
        .map(|(r, p)| p * p * mean_var(r).1 / r.len() as f64)
        .sum();
    let half = 1.96 * var.sqrt();
    Ok((metric, metric - half, metric + half))
}

/// Evaluate every policy along every configured axis. Each sweep sample uses
/// the same env seed for all policies.
pub fn evaluate_suite(entries: &[PolicyEntry], cfg: &EvalConfig, env: &EnvConfig) -> Result<EvalTable> {
    let mut cells = Vec::new();
    for entry in entries {
        for &axis in &cfg.axes {
            let values = axis_grid(env, axis, cfg.grid);
            let probs = vec![1.0 / values.len() as f64; values.len()];
            let mut returns = Vec::with_capacity(values.len());
            let mut reads = 0;
            for (i, &v) in values.iter().enumerate() {
                let ecfg = axis_env(env, axis, v);
                let (out, r) = run_policy(entry, &ecfg, cfg.episodes_per_sample, cfg.seed + i as u64)?;
                reads += r;
                returns.push(out.returns);
            }
            let (metric, lo, hi) = weighted_with_ci(&returns, &probs)?;
            cells.push(CellResult {
                policy: entry.label.clone(),
                axis,
                metric,
                ci_low: lo,
                ci_high: hi,
                values,
                probs,
                returns,
                privileged_reads: reads,
            });
        }
    }
    Ok(EvalTable {
        policies: entries.iter().map(|e| e.label.clone()).collect(),
        axes: cfg.axes.clone(),
        cells,
    })
}

/// Mean episode return of a policy for each paired seed.
pub fn paired_returns(entry: &PolicyEntry, env_cfg: &EnvConfig, seeds: &[u64], episodes: usize) -> Result<Vec<f64>> {
    seeds
        .iter()
        .map(|&s| {
            let (out, _) = run_policy(entry, env_cfg, episodes, s)?;
            Ok(out.returns.iter().sum::<f64>() / episodes as f64)
        })
        .collect()
}

/// One-sided sign test of `a > b` over paired samples; ties are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    let mut wins = 0;
    let mut losses = 0;
    let mut ties = 0;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            wins += 1;
        } else if x < y {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n = wins + losses;
    // P(X >= wins) for X ~ Binomial(n, 1/2)
    let mut p = 0.0;
    let mut c = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            c = c * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            p += c;
        }
    }
    let p_value = if n == 0 { 1.0 } else { p / 2f64.powi(n as i32) };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

/// A paired one-sided comparison between two policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub better: String,
    pub worse: String,
    pub better_returns: Vec<f64>,
    pub worse_returns: Vec<f64>,
    pub test: SignTest,
}

impl Comparison {
    pub fn passed(&self, alpha: f64) -> bool {
        self.test.p_value < alpha
    }
}

/// Compare two policies on the same paired seeds under `env_cfg`.
pub fn compare(
    name: &str,
    better: &PolicyEntry,
    worse: &PolicyEntry,
    env_cfg: &EnvConfig,
    seeds: &[u64],
    episodes: usize,
) -> Result<Comparison> {
    let a = paired_returns(better, env_cfg, seeds, episodes)?;
    let b = paired_returns(worse, env_cfg, seeds, episodes)?;
    Ok(Comparison {
        name: name.to_string(),
        better: better.label.clone(),
        worse: worse.label.clone(),
        test: sign_test(&a, &b),
        better_returns: a,
        worse_returns: b,
    })
}

/// Paired seeds derived from the eval seed.
pub fn paired_seeds(cfg: &EvalConfig) -> Vec<u64> {
    (0..cfg.paired_seeds as u64).map(|i| cfg.seed.wrapping_add(7919 * (i + 1))).collect()
}

/// The ordering checks between trained policies under randomized extrinsics:
/// adaptive expert over the non-adaptive base, intact latent over a zeroed
/// latent, and each expert over its estimator-driven counterpart. Checks
/// whose policies are missing are skipped.
pub fn ordering_checks(entries: &[PolicyEntry], cfg: &EvalConfig, env: &EnvConfig) -> Result<Vec<Comparison>> {
    let find = |l: &str| entries.iter().find(|e| e.label == l);
    let mut env_cfg = env.clone();
    env_cfg.randomize = true;
    let seeds = paired_seeds(cfg);
    let n = cfg.episodes_per_sample;
    let mut out = Vec::new();
    if let (Some(a), Some(b)) = (find(ROW_SMA_EXPERT), find(ROW_NON_ADAPTIVE)) {
        out.push(compare("sma_expert_over_base", a, b, &env_cfg, &seeds, n)?);
    }
    if let Some(a) = find(ROW_RMA_EXPERT) {
        let zeroed = PolicyEntry {
            label: format!("{} (zeroed latent)", a.label),
            source: ContextSource::Zeros,
            ..a.clone()
        };
        out.push(compare("rma_latent_over_zeroed", a, &zeroed, &env_cfg, &seeds, n)?);
    }
    if let (Some(a), Some(b)) = (find(ROW_SMA_EXPERT), find(ROW_SMA)) {
        out.push(compare("sma_expert_over_estimator", a, b, &env_cfg, &seeds, n)?);
    }
    if let (Some(a), Some(b)) = (find(ROW_RMA_EXPERT), find(ROW_RMA)) {
        out.push(compare("rma_expert_over_estimator", a, b, &env_cfg, &seeds, n)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sign_test_tail() {
        let a = vec![1.0; 15].into_iter().chain(vec![0.0; 5]).collect::<Vec<_>>();
        let b = vec![0.5; 20];
        let t = sign_test(&a, &b);
        assert_eq!((t.wins, t.losses, t.ties), (15, 5, 0));
        // Σ_{k=15}^{20} C(20,k) / 2^20 = 21700 / 1048576
        assert_abs_diff_eq!(t.p_value, 21_700.0 / 1_048_576.0, epsilon = 1e-15);
        let t = sign_test(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(t.ties, 2);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn uniform_weights_give_the_mean() {
        let returns = vec![vec![1.0, 3.0], vec![5.0, 7.0], vec![0.0, 0.0]];
        let probs = vec![1.0 / 3.0; 3];
        let (m, lo, hi) = weighted_with_ci(&returns, &probs).unwrap();
        assert_abs_diff_eq!(m, 16.0 / 6.0, epsilon = 1e-12);
        assert!(lo < m && m < hi);
    }

    #[test]
    fn axis_env_pins_other_extrinsics() {
        let base = EnvConfig::default();
        let cfg = axis_env(&base, EvalAxis::PGain, 30.0);
        assert_eq!(cfg.ranges.kp, Range::point(30.0));
        assert_eq!(cfg.ranges.motor_gain, Range::point(1.0));
        assert_eq!(cfg.noise.level, base.noise.level);
        let nn = axis_env(&base, EvalAxis::NoNoise, f64::NAN);
        assert_eq!(nn.noise.level, 0.0);
        assert_eq!(axis_grid(&base, EvalAxis::MotorGain, 3), vec![0.8, 1.0, 1.2]);
    }
}
