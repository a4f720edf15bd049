//! Spiking policy network: a stack of LIF layers, an optional plastic layer
//! and a rate-decoded Gaussian action head.
//!
//! Layer `l` maps layer `l-1` spikes (or the real-valued observation for
//! `l = 0`) onto `hidden[l]` neurons; the last layer holds
//! `n_actions · pop_per_action` output neurons whose traces are decoded to
//! the action mean by a fixed population readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SmaError};
use crate::metagrad::{ParamId, ParameterSet, Tape, Var};
use crate::plasticity::{
    default_eligibility_decay, default_trace_decay, stabilization_unchecked, ModulatorBroadcast,
    DEFAULT_UPDATE_SCALE, RATE_INIT_SCALE,
};
use crate::snn::{default_leak, Surrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlasticRule {
    /// Dual eligibility traces gated by learned modulators, scaled by the
    /// stabilization factor.
    Modulated,
    /// Plain additive pair-based STDP with coefficients A±.
    Stdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticLayerConfig {
    /// Index of the layer whose input synapses are plastic.
    pub layer: usize,
    pub rule: PlasticRule,
    #[serde(default)]
    pub broadcast: ModulatorBroadcast,
    pub update_scale: f64,
    pub beta: f64,
}

impl Default for PlasticLayerConfig {
    fn default() -> Self {
        Self {
            layer: 2,
            rule: PlasticRule::Modulated,
            broadcast: ModulatorBroadcast::PerPost,
            update_scale: DEFAULT_UPDATE_SCALE,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnArch {
    pub obs_dim: usize,
    /// Extra real-valued input appended to the observation (latent `z`).
    pub context_dim: usize,
    pub hidden: Vec<usize>,
    pub n_actions: usize,
    pub pop_per_action: usize,
    pub leak: f64,
    pub threshold: f64,
    pub surrogate: Surrogate,
    pub readout_decay: f64,
    pub readout_gain: f64,
    pub plastic: Option<PlasticLayerConfig>,
}

impl SnnArch {
    pub fn new(obs_dim: usize, hidden: &[usize], n_actions: usize) -> Self {
        Self {
            obs_dim,
            context_dim: 0,
            hidden: hidden.to_vec(),
            n_actions,
            pop_per_action: 8,
            leak: default_leak(),
            threshold: 1.0,
            surrogate: Surrogate::default(),
            readout_decay: (-1.0_f64 / 5.0).exp(),
            readout_gain: 4.0,
            plastic: None,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn n_output_neurons(&self) -> usize {
        self.n_actions * self.pop_per_action
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = self.hidden.clone();
        sizes.push(self.n_output_neurons());
        sizes
    }

    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.obs_dim + self.context_dim
        } else {
            self.layer_sizes()[l - 1]
        }
    }

    /// `(n_post, n_pre)` of the plastic synapse matrix.
    pub fn plastic_shape(&self) -> Option<(usize, usize)> {
        self.plastic
            .as_ref()
            .map(|p| (self.layer_sizes()[p.layer], self.layer_input(p.layer)))
    }

    /// Length of the concatenated `[m_plus; m_minus]` vector.
    pub fn modulator_dim(&self) -> usize {
        match (&self.plastic, self.plastic_shape()) {
            (Some(p), Some((n_post, n_pre))) if p.rule == PlasticRule::Modulated => match p.broadcast {
                ModulatorBroadcast::PerPost => 2 * n_post,
                ModulatorBroadcast::PlusPerPre => n_pre + n_post,
            },
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.pop_per_action < 2 || self.pop_per_action % 2 != 0 {
            return Err(SmaError::Config(
                "need at least one hidden layer and an even population per action".into(),
            ));
        }
        if !(self.leak > 0.0 && self.leak < 1.0) || self.threshold <= 0.0 {
            return Err(SmaError::Config("leak must be in (0,1), threshold > 0".into()));
        }
        if let Some(p) = &self.plastic {
            if p.layer == 0 || p.layer >= self.n_layers() {
                return Err(SmaError::Config(format!(
                    "plastic layer {} must receive spikes (1..{})",
                    p.layer,
                    self.n_layers()
                )));
            }
        }
        Ok(())
    }

    fn w_name(l: usize) -> String {
        format!("pi.l{l}.w")
    }

    fn b_name(l: usize) -> String {
        format!("pi.l{l}.b")
    }

    /// Initialises the static weights, log-std and (if configured) the
    /// plasticity parameters.
    pub fn init_params(&self, ps: &mut ParameterSet, rng: &mut impl Rng, init: &SnnInit) {
        let sizes = self.layer_sizes();
        for (l, &n_out) in sizes.iter().enumerate() {
            let n_in = self.layer_input(l);
            let bound = init.weight_gain * (3.0 / n_in as f64).sqrt();
            let w = (0..n_out * n_in)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            ps.insert(Self::w_name(l), vec![n_out, n_in], w);
            ps.insert(Self::b_name(l), vec![n_out], vec![init.bias; n_out]);
        }
        ps.insert("pi.log_std", vec![self.n_actions], vec![init.log_std; self.n_actions]);
        self.init_plasticity(ps, rng);
    }

    /// Adds plasticity parameters with their initial values: rates
    /// `U(0,1)·1e-3`, Hebbian `A± ~ U(0,1)`, trace constants at their
    /// defaults.
    pub fn init_plasticity(&self, ps: &mut ParameterSet, rng: &mut impl Rng) {
        let Some((n_post, n_pre)) = self.plastic_shape() else { return };
        let n = n_post * n_pre;
        let rate = (0..n).map(|_| RATE_INIT_SCALE * rng.random::<f64>()).collect();
        ps.insert("plastic.rate", vec![n_post, n_pre], rate);
        let a_plus = (0..n).map(|_| rng.random::<f64>()).collect();
        let a_minus = (0..n).map(|_| rng.random::<f64>()).collect();
        ps.insert("plastic.a_plus", vec![n_post, n_pre], a_plus);
        ps.insert("plastic.a_minus", vec![n_post, n_pre], a_minus);
        ps.insert("plastic.trace_decay", vec![1], vec![default_trace_decay()]);
        ps.insert("plastic.elig_decay", vec![1], vec![default_eligibility_decay()]);
    }

    /// Appends zero-initialised input columns for a context vector to an
    /// existing first layer (used to grow a base policy into a `z`-policy).
    pub fn widen_first_layer(&self, ps: &mut ParameterSet, context_dim: usize, rng: &mut impl Rng, scale: f64) -> Result<()> {
        let id = ps.require(&Self::w_name(0))?;
        let n_out = self.hidden[0];
        let old_in = self.obs_dim;
        let old = ps.data(id).to_vec();
        check_len("first layer", n_out * old_in, old.len())?;
        let mut w = Vec::with_capacity(n_out * (old_in + context_dim));
        for j in 0..n_out {
            w.extend_from_slice(&old[j * old_in..(j + 1) * old_in]);
            w.extend((0..context_dim).map(|_| scale * rng.random_range(-1.0..1.0)));
        }
        ps.insert(Self::w_name(0), vec![n_out, old_in + context_dim], w);
        Ok(())
    }

    pub fn resolve(&self, ps: &ParameterSet) -> Result<PolicyIds> {
        self.validate()?;
        let sizes = self.layer_sizes();
        let mut layers = Vec::new();
        for (l, &n_out) in sizes.iter().enumerate() {
            let w = ps.require(&Self::w_name(l))?;
            let b = ps.require(&Self::b_name(l))?;
            check_len("policy weights", n_out * self.layer_input(l), ps.data(w).len())?;
            check_len("policy bias", n_out, ps.data(b).len())?;
            layers.push((w, b));
        }
        let plastic = match self.plastic_shape() {
            None => None,
            Some((n_post, n_pre)) => {
                let ids = PlasticIds {
                    rate: ps.require("plastic.rate")?,
                    a_plus: ps.require("plastic.a_plus")?,
                    a_minus: ps.require("plastic.a_minus")?,
                    trace_decay: ps.require("plastic.trace_decay")?,
                    elig_decay: ps.require("plastic.elig_decay")?,
                };
                check_len("plastic rate", n_post * n_pre, ps.data(ids.rate).len())?;
                Some(ids)
            }
        };
        Ok(PolicyIds {
            layers,
            log_std: ps.require("pi.log_std")?,
            plastic,
        })
    }

    /// Fixed population readout: `+1/half` on the first half of each
    /// action's population, `-1/half` on the second half.
    pub fn readout_matrix(&self) -> Vec<f64> {
        let n = self.n_output_neurons();
        let half = self.pop_per_action / 2;
        let mut r = vec![0.0; self.n_actions * n];
        for k in 0..self.n_actions {
            for p in 0..self.pop_per_action {
                let sign = if p < half { 1.0 } else { -1.0 };
                r[k * n + k * self.pop_per_action + p] = sign / half as f64;
            }
        }
        r
    }

    pub fn initial_state(&self) -> PolicyState {
        let plastic = self.plastic_shape().map(|(n_post, n_pre)| PlasticState {
            x_pre: vec![0.0; n_pre],
            x_post: vec![0.0; n_post],
            e_plus: vec![0.0; n_post * n_pre],
            e_minus: vec![0.0; n_post * n_pre],
            delta: vec![0.0; n_post * n_pre],
            t: 1,
        });
        PolicyState {
            v: self.layer_sizes().iter().map(|&n| vec![0.0; n]).collect(),
            readout: vec![0.0; self.n_output_neurons()],
            plastic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnInit {
    pub weight_gain: f64,
    pub bias: f64,
    pub log_std: f64,
}

impl Default for SnnInit {
    fn default() -> Self {
        Self {
            weight_gain: 1.0,
            bias: 0.05,
            log_std: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlasticIds {
    pub rate: ParamId,
    pub a_plus: ParamId,
    pub a_minus: ParamId,
    pub trace_decay: ParamId,
    pub elig_decay: ParamId,
}

#[derive(Debug, Clone)]
pub struct PolicyIds {
    pub layers: Vec<(ParamId, ParamId)>,
    pub log_std: ParamId,
    pub plastic: Option<PlasticIds>,
}

/// Plastic-layer state. The effective weight is `W0 + delta`, where `W0` is
/// the layer's static parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticState {
    pub x_pre: Vec<f64>,
    pub x_post: Vec<f64>,
    pub e_plus: Vec<f64>,
    pub e_minus: Vec<f64>,
    pub delta: Vec<f64>,
    pub t: u64,
}

/// Recurrent state of one policy instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub v: Vec<Vec<f64>>,
    pub readout: Vec<f64>,
    pub plastic: Option<PlasticState>,
}

#[derive(Debug, Clone)]
pub struct PlasticVars {
    pub x_pre: Var,
    pub x_post: Var,
    pub e_plus: Var,
    pub e_minus: Var,
    pub delta: Var,
    pub t: u64,
}

#[derive(Debug, Clone)]
pub struct StateVars {
    pub v: Vec<Var>,
    pub readout: Var,
    pub plastic: Option<PlasticVars>,
}

impl StateVars {
    pub fn from_state(tape: &mut Tape<'_>, s: &PolicyState) -> Self {
        let v = s.v.iter().map(|x| tape.constant(x.clone())).collect();
        let readout = tape.constant(s.readout.clone());
        let plastic = s.plastic.as_ref().map(|p| PlasticVars {
            x_pre: tape.constant(p.x_pre.clone()),
            x_post: tape.constant(p.x_post.clone()),
            e_plus: tape.constant(p.e_plus.clone()),
            e_minus: tape.constant(p.e_minus.clone()),
            delta: tape.constant(p.delta.clone()),
            t: p.t,
        });
        Self { v, readout, plastic }
    }

    pub fn to_state(&self, tape: &Tape<'_>) -> PolicyState {
        PolicyState {
            v: self.v.iter().map(|&x| tape.value(x).to_vec()).collect(),
            readout: tape.value(self.readout).to_vec(),
            plastic: self.plastic.as_ref().map(|p| PlasticState {
                x_pre: tape.value(p.x_pre).to_vec(),
                x_post: tape.value(p.x_post).to_vec(),
                e_plus: tape.value(p.e_plus).to_vec(),
                e_minus: tape.value(p.e_minus).to_vec(),
                delta: tape.value(p.delta).to_vec(),
                t: p.t,
            }),
        }
    }
}

/// Outputs of one taped policy step.
#[derive(Debug, Clone)]
pub struct StepVars {
    pub mean: Var,
    pub state: StateVars,
    /// Mean squared plastic-layer synaptic trace (pre and post), if plastic.
    pub trace_sq: Option<Var>,
    /// Per-layer spikes of this step.
    pub spikes: Vec<Var>,
    /// Per-layer membrane potentials after reset.
    pub membrane: Vec<Var>,
}

pub struct SnnPolicy<'a> {
    pub arch: &'a SnnArch,
    pub ids: PolicyIds,
    readout: Vec<f64>,
}

impl<'a> SnnPolicy<'a> {
    pub fn new(arch: &'a SnnArch, ps: &ParameterSet) -> Result<Self> {
        Ok(Self {
            arch,
            ids: arch.resolve(ps)?,
            readout: arch.readout_matrix(),
        })
    }

    /// One policy step on the tape.
    ///
    /// `context` is the latent input appended to the observation (length
    /// `context_dim`); `modulators` is `[m_plus; m_minus]` for a modulated
    /// plastic layer. A missing modulator means no modulated update.
    pub fn step(
        &self,
        tape: &mut Tape<'_>,
        state: &StateVars,
        obs: Var,
        context: Option<Var>,
        modulators: Option<Var>,
    ) -> StepVars {
        let arch = self.arch;
        let input = match context {
            Some(c) if arch.context_dim > 0 => tape.concat(&[obs, c]),
            _ => obs,
        };
        let plastic_cfg = arch.plastic.as_ref();
        let mut x = input;
        let mut new_v = Vec::with_capacity(arch.n_layers());
        let mut spikes = Vec::with_capacity(arch.n_layers());
        let mut new_plastic = None;
        let mut trace_sq = None;
        for l in 0..arch.n_layers() {
            let (w_id, b_id) = self.ids.layers[l];
            let w0 = tape.param(w_id);
            let b = tape.param(b_id);
            let is_plastic = plastic_cfg.is_some_and(|p| p.layer == l);
            let w = if is_plastic {
                let pv = state.plastic.as_ref().expect("plastic state");
                tape.add(w0, pv.delta)
            } else {
                w0
            };
            let current = tape.affine(w, x, Some(b));
            let (s, v) = tape.lif(state.v[l], current, arch.leak, arch.threshold, arch.surrogate);
            if is_plastic {
                let cfg = plastic_cfg.expect("plastic cfg");
                let pv = state.plastic.as_ref().expect("plastic state");
                let ids = self.ids.plastic.as_ref().expect("plastic ids");
                let (next, sq) = self.plastic_update(tape, cfg, ids, pv, x, s, modulators);
                new_plastic = Some(next);
                trace_sq = Some(sq);
            }
            new_v.push(v);
            spikes.push(s);
            x = s;
        }
        // rate decoding of the output population
        let out_s = *spikes.last().expect("output layer");
        let rho = arch.readout_decay;
        let decayed = tape.scale(rho, state.readout);
        let readout = tape.add(decayed, out_s);
        let rate = tape.scale((1.0 - rho) * arch.readout_gain, readout);
        let r = tape.constant(self.readout.clone());
        let mean = tape.affine(r, rate, None);
        StepVars {
            mean,
            state: StateVars {
                v: new_v.clone(),
                readout,
                plastic: new_plastic,
            },
            trace_sq,
            spikes,
            membrane: new_v,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn plastic_update(
        &self,
        tape: &mut Tape<'_>,
        cfg: &PlasticLayerConfig,
        ids: &PlasticIds,
        pv: &PlasticVars,
        pre: Var,
        post: Var,
        modulators: Option<Var>,
    ) -> (PlasticVars, Var) {
        let alpha_x = tape.param(ids.trace_decay);
        let x_pre = tape.trace(alpha_x, pv.x_pre, cfg.beta, pre);
        let x_post = tape.trace(alpha_x, pv.x_post, cfg.beta, post);
        let both = tape.concat(&[x_pre, x_post]);
        let sq = tape.mean_square(both);
        let (e_plus, e_minus, delta) = match cfg.rule {
            PlasticRule::Modulated => {
                let gamma = tape.param(ids.elig_decay);
                let rate = tape.param(ids.rate);
                let ltp = tape.outer(post, x_pre);
                let ltp = tape.mul(rate, ltp);
                let kept = tape.scale_by(gamma, pv.e_plus);
                let e_plus = tape.add(kept, ltp);
                let ltd = tape.outer(x_post, pre);
                let ltd = tape.mul(rate, ltd);
                let kept = tape.scale_by(gamma, pv.e_minus);
                let e_minus = tape.sub(kept, ltd);
                let delta = match modulators {
                    Some(m) => {
                        let (n_post, n_pre) = (tape.value(x_post).len(), tape.value(x_pre).len());
                        let plus_len = match cfg.broadcast {
                            ModulatorBroadcast::PerPost => n_post,
                            ModulatorBroadcast::PlusPerPre => n_pre,
                        };
                        let m_plus = tape.slice(m, 0, plus_len);
                        let m_minus = tape.slice(m, plus_len, n_post);
                        let dp = match cfg.broadcast {
                            ModulatorBroadcast::PerPost => tape.row_scale(e_plus, m_plus),
                            ModulatorBroadcast::PlusPerPre => tape.col_scale(e_plus, m_plus),
                        };
                        let dm = tape.row_scale(e_minus, m_minus);
                        let d = tape.add(dp, dm);
                        let c = stabilization_unchecked(pv.t) * cfg.update_scale;
                        tape.axpy(c, d, pv.delta)
                    }
                    None => pv.delta,
                };
                (e_plus, e_minus, delta)
            }
            PlasticRule::Stdp => {
                let a_plus = tape.param(ids.a_plus);
                let a_minus = tape.param(ids.a_minus);
                let ltp = tape.outer(post, x_pre);
                let ltp = tape.mul(a_plus, ltp);
                let ltd = tape.outer(x_post, pre);
                let ltd = tape.mul(a_minus, ltd);
                let d = tape.sub(ltp, ltd);
                let delta = tape.axpy(cfg.update_scale, d, pv.delta);
                (pv.e_plus, pv.e_minus, delta)
            }
        };
        (
            PlasticVars {
                x_pre,
                x_post,
                e_plus,
                e_minus,
                delta,
                t: pv.t + 1,
            },
            sq,
        )
    }

    /// Value-only step; advances `state` and returns the action mean.
    pub fn act(
        &self,
        ps: &ParameterSet,
        state: &mut PolicyState,
        obs: &[f64],
        context: Option<&[f64]>,
        modulators: Option<&[f64]>,
    ) -> Vec<f64> {
        let mut tape = Tape::new(ps);
        let sv = StateVars::from_state(&mut tape, state);
        let o = tape.constant(obs.to_vec());
        let c = context.map(|c| tape.constant(c.to_vec()));
        let m = modulators.map(|m| tape.constant(m.to_vec()));
        let out = self.step(&mut tape, &sv, o, c, m);
        *state = out.state.to_state(&tape);
        tape.value(out.mean).to_vec()
    }

    pub fn log_std<'p>(&self, ps: &'p ParameterSet) -> &'p [f64] {
        ps.data(self.ids.log_std)
    }
}
