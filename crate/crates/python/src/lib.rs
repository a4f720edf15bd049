//! Python bindings: run configuration, the vectorized environment, training
//! stages, evaluation and the numeric helpers used by the pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sma_core::agent::ContextInput;
use sma_core::config::{Profile, RunConfig};
use sma_core::env::{self, VecEnv};
use sma_core::network::PolicyState;
use sma_core::persist::MetricRecord;
use sma_core::pipeline::{self, RunDir};
use sma_core::rl::{compute_gae, RolloutBuffer, Transition};
use sma_core::SmaError;

fn py_err(e: SmaError) -> PyErr {
    match e {
        SmaError::Config(_) | SmaError::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Experiment configuration with profile defaults.
#[pyclass(name = "RunConfig", module = "sma_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (profile = "desk"))]
    fn new(profile: &str) -> PyResult<Self> {
        let p: Profile = profile.parse().map_err(py_err)?;
        Ok(Self {
            inner: RunConfig::for_profile(p),
        })
    }

    /// Parse TOML merged over the defaults of its profile.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_toml_str(text, Profile::Desk).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    /// Set a dotted key such as `pretrain.iterations` to a TOML literal.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let var = format!("SMA_{}", key.replace('.', "__").to_ascii_uppercase());
        self.inner
            .apply_env_overrides([(var, value.to_string())])
            .map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn out_dir(&self) -> String {
        self.inner.out_dir.display().to_string()
    }

    #[setter]
    fn set_out_dir(&mut self, dir: PathBuf) {
        self.inner.out_dir = dir;
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(profile={:?}, seed={}, out_dir={:?})",
            self.inner.profile,
            self.inner.seed,
            self.inner.out_dir.display().to_string()
        )
    }
}

/// Batch of independent randomized-dynamics environments.
#[pyclass(name = "VecEnv", module = "sma_py")]
pub struct PyVecEnv {
    inner: VecEnv,
}

#[pymethods]
impl PyVecEnv {
    #[new]
    #[pyo3(signature = (n_envs, seed = 0, config = None))]
    fn new(n_envs: usize, seed: u64, config: Option<PyRef<'_, PyRunConfig>>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.env.clone()).unwrap_or_default();
        Ok(Self {
            inner: VecEnv::new(cfg, n_envs, seed).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        env::OBS_DIM
    }

    #[getter]
    fn n_actions(&self) -> usize {
        env::N_JOINTS
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.inner.observations()
    }

    /// Apply one action per env; returns `(obs, rewards, dones, timeouts)`.
    #[allow(clippy::type_complexity)]
    fn step(&mut self, actions: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<bool>, Vec<bool>)> {
        let s = self.inner.step(&actions).map_err(py_err)?;
        Ok((s.obs, s.rewards, s.dones, s.timeouts))
    }

    /// Number of reads of the privileged extrinsics outside the dynamics.
    fn privileged_reads(&self) -> u64 {
        self.inner.privileged_reads()
    }
}

/// The early-episode plasticity factor `exp(1/t) - 1`.
#[pyfunction]
fn stabilization(t: u64) -> PyResult<f64> {
    sma_core::plasticity::stabilization(t).map_err(py_err)
}

/// `Σ R_i·P_i` with validated probabilities.
#[pyfunction]
fn weighted_eval_metric(returns: Vec<f64>, probs: Vec<f64>) -> PyResult<f64> {
    env::weighted_eval_metric(&returns, &probs).map_err(py_err)
}

/// One-sided sign test of `a > b`; returns `(wins, losses, ties, p_value)`.
#[pyfunction]
fn sign_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(usize, usize, usize, f64)> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("paired samples must have equal length"));
    }
    let t = pipeline::sign_test(&a, &b);
    Ok((t.wins, t.losses, t.ties, t.p_value))
}

/// Generalized advantage estimates for a single trajectory. `bootstrap` is
/// the value of the state after the last step.
#[pyfunction]
#[pyo3(signature = (rewards, values, dones, timeouts, terminal_values, bootstrap, gamma = 0.99, lam = 0.95))]
#[allow(clippy::too_many_arguments)]
fn gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    timeouts: Vec<bool>,
    terminal_values: Vec<f64>,
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if [values.len(), dones.len(), timeouts.len(), terminal_values.len()].iter().any(|&l| l != n) {
        return Err(PyValueError::new_err("all per-step sequences must have equal length"));
    }
    let empty = PolicyState {
        v: Vec::new(),
        readout: Vec::new(),
        plastic: None,
    };
    let mut buf = RolloutBuffer::new(n, 1, vec![empty]);
    for t in 0..n {
        buf.set(
            t,
            0,
            Transition {
                obs: Vec::new(),
                context: ContextInput::None,
                context_value: None,
                action: Vec::new(),
                log_prob: 0.0,
                value: values[t],
                reward: rewards[t],
                done: dones[t],
                timeout: timeouts[t],
                terminal_value: terminal_values[t],
                history: None,
            },
        );
    }
    buf.bootstrap_values = vec![bootstrap];
    let g = compute_gae(&buf, gamma, lam).map_err(py_err)?;
    Ok((g.advantages, g.returns))
}

/// Run one training stage into the config's run directory and return its
/// summary.
#[pyfunction]
fn train(py: Python<'_>, stage: &str, config: PyRef<'_, PyRunConfig>) -> PyResult<Py<PyAny>> {
    let cfg = config.inner.clone();
    let stage = stage.to_string();
    let report = py
        .detach(move || -> sma_core::Result<_> {
            let dir = RunDir::create(&cfg.out_dir)?;
            dir.echo_config(&cfg)?;
            let mut quiet = |_: &MetricRecord| {};
            pipeline::run_stage(&stage, &cfg, &dir, &mut quiet)
        })
        .map_err(py_err)?;
    let summary = serde_json::json!({
        "stage": report.stage,
        "checkpoint": report.checkpoint,
        "summary": report.summary,
    });
    json_to_py(py, &summary)
}

/// Evaluate every trained policy in the run directory. Returns the text
/// table, the per-cell records and the paired ordering checks.
#[pyfunction]
fn evaluate(py: Python<'_>, config: PyRef<'_, PyRunConfig>) -> PyResult<Py<PyAny>> {
    let cfg = config.inner.clone();
    let out = py
        .detach(move || -> sma_core::Result<_> {
            let dir = RunDir::open(&cfg.out_dir)?;
            let (entries, warnings) = pipeline::load_policies(&dir)?;
            let table = pipeline::evaluate_suite(&entries, &cfg.eval, &cfg.env)?;
            let checks = pipeline::ordering_checks(&entries, &cfg.eval, &cfg.env)?;
            Ok(serde_json::json!({
                "table": table.to_text(),
                "cells": table.cells,
                "ordering": checks,
                "warnings": warnings,
            }))
        })
        .map_err(py_err)?;
    json_to_py(py, &out)
}

#[pymodule]
fn sma_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyVecEnv>()?;
    m.add_function(wrap_pyfunction!(stabilization, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_eval_metric, m)?)?;
    m.add_function(wrap_pyfunction!(sign_test, m)?)?;
    m.add_function(wrap_pyfunction!(gae, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
