//! Composition of the spiking policy with an optional context pathway.
//!
//! * [`AdaptMode::None`]: plain (possibly plastic) SNN.
//! * [`AdaptMode::Latent`]: a latent vector `z` is appended to the policy
//!   input (encoder/estimator style adaptation).
//! * [`AdaptMode::Modulator`]: the context drives the third-factor
//!   modulators of the plastic layer.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};
use crate::metagrad::{ParameterSet, Tape, Var};
use crate::mlp::{MlpConfig, MlpIds};
use crate::network::{PlasticRule, SnnArch, SnnPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMode {
    None,
    Latent,
    Modulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub policy: SnnArch,
    pub mode: AdaptMode,
    /// Privileged encoder `e → context`; `None` when the mode is `None`.
    pub encoder: Option<MlpConfig>,
    /// Multiplier on the encoder output when it drives modulators.
    pub modulator_gain: f64,
}

/// Where the per-step context comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ContextInput {
    None,
    /// Privileged input fed through the encoder on the tape.
    Privileged(Vec<f64>),
    /// A context vector supplied directly (estimator output, zeros, ...).
    Given(Vec<f64>),
}

impl AgentSpec {
    pub fn plain(policy: SnnArch) -> Self {
        Self {
            policy,
            mode: AdaptMode::None,
            encoder: None,
            modulator_gain: 1.0,
        }
    }

    /// Dimension of the context vector (z or `[m_plus; m_minus]`).
    pub fn context_dim(&self) -> usize {
        match self.mode {
            AdaptMode::None => 0,
            AdaptMode::Latent => self.policy.context_dim,
            AdaptMode::Modulator => self.policy.modulator_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        match self.mode {
            AdaptMode::Modulator => {
                let ok = self
                    .policy
                    .plastic
                    .as_ref()
                    .is_some_and(|p| p.rule == PlasticRule::Modulated);
                if !ok {
                    return Err(SmaError::Config("modulator mode needs a modulated plastic layer".into()));
                }
            }
            AdaptMode::Latent if self.policy.context_dim == 0 => {
                return Err(SmaError::Config("latent mode needs context_dim > 0".into()));
            }
            _ => {}
        }
        if let Some(enc) = &self.encoder {
            if enc.output_dim() != self.context_dim() {
                return Err(SmaError::Config(format!(
                    "encoder output {} != context dim {}",
                    enc.output_dim(),
                    self.context_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn bind<'a>(&'a self, ps: &ParameterSet) -> Result<BoundAgent<'a>> {
        self.validate()?;
        let encoder = self.encoder.as_ref().map(|e| e.resolve(ps)).transpose()?;
        Ok(BoundAgent {
            spec: self,
            policy: SnnPolicy::new(&self.policy, ps)?,
            encoder,
        })
    }
}

pub struct BoundAgent<'a> {
    pub spec: &'a AgentSpec,
    pub policy: SnnPolicy<'a>,
    pub encoder: Option<MlpIds>,
}

impl BoundAgent<'_> {
    /// Context vector on the tape; the returned var is what the policy
    /// consumes (after the modulator gain).
    pub fn context(&self, tape: &mut Tape<'_>, input: &ContextInput) -> Result<Option<Var>> {
        let dim = self.spec.context_dim();
        match input {
            ContextInput::None => Ok(None),
            ContextInput::Given(c) => {
                if c.len() != dim {
                    return Err(SmaError::Dimension {
                        context: "given context",
                        expected: dim,
                        got: c.len(),
                    });
                }
                Ok(Some(tape.constant(c.clone())))
            }
            ContextInput::Privileged(e) => {
                let enc = self
                    .encoder
                    .as_ref()
                    .ok_or_else(|| SmaError::Config("privileged context without encoder".into()))?;
                let ev = tape.constant(e.clone());
                let out = enc.forward(tape, ev);
                Ok(Some(self.gain(tape, out)))
            }
        }
    }

    /// Applies the modulator gain in modulator mode.
    pub fn gain(&self, tape: &mut Tape<'_>, raw: Var) -> Var {
        if self.spec.mode == AdaptMode::Modulator && self.spec.modulator_gain != 1.0 {
            tape.scale(self.spec.modulator_gain, raw)
        } else {
            raw
        }
    }

    /// Splits a context var into `(z, modulators)` according to the mode.
    pub fn route(&self, ctx: Option<Var>) -> (Option<Var>, Option<Var>) {
        match self.spec.mode {
            AdaptMode::None => (None, None),
            AdaptMode::Latent => (ctx, None),
            AdaptMode::Modulator => (None, ctx),
        }
    }

    /// Context value without a tape (for rollouts).
    pub fn context_value(&self, ps: &ParameterSet, input: &ContextInput) -> Result<Option<Vec<f64>>> {
        let mut tape = Tape::new(ps);
        let v = self.context(&mut tape, input)?;
        Ok(v.map(|v| tape.value(v).to_vec()))
    }
}
