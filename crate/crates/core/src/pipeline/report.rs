//! Diagnostics for trained adaptive policies: modulator trajectories under
//! different extrinsics and the distribution of effective plastic weights.

use serde::{Deserialize, Serialize};

use super::eval::{axis_env, run_policy, PolicyEntry};
use crate::config::EvalAxis;
use crate::env::EnvConfig;
use crate::error::{Result, SmaError};

/// One deterministic episode of an adaptive policy at a fixed extrinsic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub policy: String,
    pub axis: EvalAxis,
    pub value: f64,
    pub episode_return: f64,
    /// Mean absolute context entry per step.
    pub modulator_abs: Vec<f64>,
    /// Full context vector at the first and last step.
    pub first_context: Vec<f64>,
    pub last_context: Vec<f64>,
    /// Static plastic-layer weights.
    pub weights_initial: Vec<f64>,
    /// Static weights plus the episode's accumulated plastic change.
    pub weights_final: Vec<f64>,
}

/// Run one episode per value of `axis` and record the context trajectory and
/// the effective plastic weights at the end of the episode.
pub fn probe_policy(entry: &PolicyEntry, env: &EnvConfig, axis: EvalAxis, values: &[f64], seed: u64) -> Result<Vec<ProbeTrace>> {
    let arch = &entry.ac.agent.policy;
    let w0 = match arch.plastic_shape() {
        Some(_) => {
            let layer = arch.plastic.as_ref().map(|p| p.layer).unwrap_or(0);
            let name = format!("pi.l{layer}.w");
            entry
                .ps
                .by_name(&name)
                .ok_or_else(|| SmaError::InvalidArgument(format!("missing parameter {name}")))?
                .to_vec()
        }
        None => Vec::new(),
    };
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let cfg = axis_env(env, axis, v);
        let (ep, _) = run_policy(entry, &cfg, 1, seed)?;
        let contexts = ep.contexts.first().cloned().unwrap_or_default();
        let modulator_abs = contexts
            .iter()
            .map(|c| if c.is_empty() { 0.0 } else { c.iter().map(|x| x.abs()).sum::<f64>() / c.len() as f64 })
            .collect();
        let final_state = ep
            .final_states
            .first()
            .ok_or_else(|| SmaError::InvalidArgument("probe produced no episode".into()))?;
        let weights_final = match &final_state.plastic {
            Some(p) if p.delta.len() == w0.len() => w0.iter().zip(&p.delta).map(|(w, d)| w + d).collect(),
            _ => w0.clone(),
        };
        out.push(ProbeTrace {
            policy: entry.label.clone(),
            axis,
            value: v,
            episode_return: ep.returns[0],
            first_context: contexts.first().cloned().unwrap_or_default(),
            last_context: contexts.last().cloned().unwrap_or_default(),
            modulator_abs,
            weights_initial: w0.clone(),
            weights_final,
        });
    }
    Ok(out)
}

/// Mean absolute difference between the first-step contexts of two traces.
pub fn context_separation(a: &ProbeTrace, b: &ProbeTrace) -> f64 {
    let n = a.first_context.len().min(b.first_context.len());
    if n == 0 {
        return 0.0;
    }
    a.first_context.iter().zip(&b.first_context).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64
}
