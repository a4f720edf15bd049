//! Leaky integrate-and-fire layers.
//!
//! Membrane dynamics per policy step (leak applied before injection):
//!
//! ```text
//! u     = λ_v · v + I
//! s     = H(u − θ)
//! v'    = u − θ · s          (reset by subtraction)
//! ```
//!
//! The spike nonlinearity is differentiated with a triangle surrogate
//! `max(0, slope · (1 − |u − θ| / width))`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Result};

/// Triangle pseudo-derivative used in place of the Heaviside derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub slope: f64,
    pub width: f64,
}

impl Default for Surrogate {
    fn default() -> Self {
        Self {
            slope: 0.3,
            width: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub n_in: usize,
    pub n_out: usize,
    /// Membrane decay multiplier λ_v in (0, 1).
    pub leak: f64,
    pub threshold: f64,
    pub surrogate: Surrogate,
}

pub const DEFAULT_LEAK_TAU: f64 = 10.0;

pub fn default_leak() -> f64 {
    (-1.0 / DEFAULT_LEAK_TAU).exp()
}

impl LayerConfig {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            leak: default_leak(),
            threshold: 1.0,
            surrogate: Surrogate::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::SmaError::InvalidArgument;
        if !(self.leak > 0.0 && self.leak < 1.0) {
            return Err(InvalidArgument(format!("leak {} not in (0,1)", self.leak)));
        }
        if self.threshold <= 0.0 {
            return Err(InvalidArgument(format!(
                "threshold {} must be positive",
                self.threshold
            )));
        }
        if self.surrogate.slope < 0.0 || self.surrogate.width <= 0.0 {
            return Err(InvalidArgument("surrogate slope/width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v: Vec<f64>,
    pub s: Vec<f64>,
}

impl NeuronState {
    pub fn zeros(n: usize) -> Self {
        Self {
            v: vec![0.0; n],
            s: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Non-plastic weight matrix, row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticWeights {
    pub n_out: usize,
    pub n_in: usize,
    pub w: Vec<f64>,
}

impl StaticWeights {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        Self {
            n_out,
            n_in,
            w: vec![0.0; n_out * n_in],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_out = rows.len();
        let n_in = rows.first().map_or(0, Vec::len);
        Self {
            n_out,
            n_in,
            w: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec input", self.n_in, x.len())?;
        let mut out = vec![0.0; self.n_out];
        matvec_into(&self.w, self.n_out, self.n_in, x, &mut out);
        Ok(out)
    }
}

/// `out = W x` for row-major `W`. Zero entries of `x` are skipped, which
/// makes binary spike inputs cheap.
pub(crate) fn matvec_into(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += w[j * cols + i] * xi;
        }
    }
}

/// One LIF update on raw slices. Writes the pre-reset potential, the spikes
/// and the post-reset potential.
pub(crate) fn lif_kernel(
    v: &[f64],
    current: &[f64],
    leak: f64,
    threshold: f64,
    u_out: &mut [f64],
    s_out: &mut [f64],
    v_out: &mut [f64],
) {
    for j in 0..v.len() {
        let u = leak * v[j] + current[j];
        let s = if u >= threshold { 1.0 } else { 0.0 };
        u_out[j] = u;
        s_out[j] = s;
        v_out[j] = u - threshold * s;
    }
}

#[inline]
pub(crate) fn triangle(u: f64, threshold: f64, sg: Surrogate) -> f64 {
    (sg.slope * (1.0 - (u - threshold).abs() / sg.width)).max(0.0)
}

pub fn lif_step(state: &NeuronState, current: &[f64], cfg: &LayerConfig) -> Result<NeuronState> {
    check_len("lif_step state", cfg.n_out, state.v.len())?;
    check_len("lif_step current", cfg.n_out, current.len())?;
    check_finite("lif_step current", current)?;
    check_finite("lif_step membrane", &state.v)?;
    let n = cfg.n_out;
    let mut u = vec![0.0; n];
    let mut next = NeuronState::zeros(n);
    lif_kernel(
        &state.v,
        current,
        cfg.leak,
        cfg.threshold,
        &mut u,
        &mut next.s,
        &mut next.v,
    );
    Ok(next)
}

/// Surrogate derivative of the spike with respect to the pre-reset potential.
pub fn surrogate_grad(v_pre_spike: f64, cfg: &LayerConfig) -> f64 {
    triangle(v_pre_spike, cfg.threshold, cfg.surrogate)
}

pub fn forward_layer(
    spikes_in: &[f64],
    weights: &StaticWeights,
    state: &NeuronState,
    cfg: &LayerConfig,
) -> Result<NeuronState> {
    check_len("forward_layer rows", cfg.n_out, weights.n_out)?;
    check_len("forward_layer cols", cfg.n_in, weights.n_in)?;
    let current = weights.matvec(spikes_in)?;
    lif_step(state, &current, cfg)
}
