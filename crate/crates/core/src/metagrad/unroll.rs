//! Truncated unroll of an agent over an episode segment.
//!
//! The tape starts from a detached copy of the recurrent and plastic state,
//! so gradients only see the steps inside the window. Plastic weights are
//! carried as `W0 + delta`; the static `W0` keeps receiving gradient even
//! though `delta` is detached at the window boundary.

use crate::agent::{AgentSpec, ContextInput};
use crate::error::{Result, SmaError};
use crate::metagrad::{Gradients, ParameterSet, Tape, Var};
use crate::network::{PolicyState, StateVars, StepVars};

/// Inputs for `T` consecutive policy steps of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSegment {
    pub obs: Vec<Vec<f64>>,
    pub context: Vec<ContextInput>,
    /// `resets[t]`: the episode ended at step `t`; step `t+1` starts from
    /// the initial state.
    pub resets: Vec<bool>,
}

impl EpisodeSegment {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// A segment without context and without resets.
    pub fn plain(obs: Vec<Vec<f64>>) -> Self {
        let n = obs.len();
        Self {
            obs,
            context: vec![ContextInput::None; n],
            resets: vec![false; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollOutputs {
    pub means: Vec<Vec<f64>>,
    pub trace_sq: Vec<f64>,
    /// Context vector consumed at each step (z or modulators).
    pub contexts: Vec<Option<Vec<f64>>>,
    pub final_state: PolicyState,
}

pub struct UnrollTape<'p> {
    pub tape: Tape<'p>,
    pub steps: Vec<StepVars>,
    pub contexts: Vec<Option<Var>>,
    initial: PolicyState,
    segment: EpisodeSegment,
    spec: AgentSpec,
}

/// Per-step adjoints of the unroll outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepGrads {
    pub mean: Vec<f64>,
    pub trace_sq: f64,
    /// Adjoint of the context vector (used by the latent regularisers).
    pub context: Option<Vec<f64>>,
}

pub fn unroll_forward<'p>(
    spec: &AgentSpec,
    params: &'p ParameterSet,
    initial: &PolicyState,
    segment: &EpisodeSegment,
    window: usize,
) -> Result<(UnrollOutputs, UnrollTape<'p>)> {
    let t_len = segment.len();
    if t_len > window {
        return Err(SmaError::WindowOverflow { len: t_len, window });
    }
    if segment.context.len() != t_len || segment.resets.len() != t_len {
        return Err(SmaError::InvalidArgument("segment fields differ in length".into()));
    }
    let agent = spec.bind(params)?;
    let mut tape = Tape::new(params);
    let mut state = StateVars::from_state(&mut tape, initial);
    let mut steps = Vec::with_capacity(t_len);
    let mut contexts = Vec::with_capacity(t_len);
    let mut cached: Option<(&ContextInput, Option<Var>)> = None;
    for t in 0..t_len {
        let input = &segment.context[t];
        let ctx = match cached {
            Some((prev, v)) if prev == input => v,
            _ => {
                let v = agent.context(&mut tape, input)?;
                cached = Some((input, v));
                v
            }
        };
        let (z, m) = agent.route(ctx);
        let obs = tape.constant(segment.obs[t].clone());
        let out = agent.policy.step(&mut tape, &state, obs, z, m);
        state = if segment.resets[t] {
            StateVars::from_state(&mut tape, &spec.policy.initial_state())
        } else {
            out.state.clone()
        };
        steps.push(out);
        contexts.push(ctx);
    }
    let outputs = UnrollOutputs {
        means: steps.iter().map(|s| tape.value(s.mean).to_vec()).collect(),
        trace_sq: steps
            .iter()
            .map(|s| s.trace_sq.map_or(0.0, |v| tape.scalar(v)))
            .collect(),
        contexts: contexts.iter().map(|c| c.map(|v| tape.value(v).to_vec())).collect(),
        final_state: state.to_state(&tape),
    };
    Ok((
        outputs,
        UnrollTape {
            tape,
            steps,
            contexts,
            initial: initial.clone(),
            segment: segment.clone(),
            spec: spec.clone(),
        },
    ))
}

impl UnrollTape<'_> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Re-runs the forward pass from the recorded initial state and inputs.
    pub fn replay(&self, params: &ParameterSet) -> Result<UnrollOutputs> {
        let window = self.segment.len().max(1);
        unroll_forward(&self.spec, params, &self.initial, &self.segment, window).map(|(o, _)| o)
    }
}

/// Gradients of `Σ_t <grads[t], outputs[t]>` with respect to every parameter.
pub fn backward(tape: &UnrollTape<'_>, grads: &[StepGrads]) -> Result<Gradients> {
    if grads.len() != tape.steps.len() {
        return Err(SmaError::IncompleteTape(format!(
            "{} step gradients for {} recorded steps",
            grads.len(),
            tape.steps.len()
        )));
    }
    let mut seeds: Vec<(Var, Vec<f64>)> = Vec::new();
    for (step, (out, g)) in tape.steps.iter().zip(grads).enumerate() {
        if !g.mean.is_empty() {
            seeds.push((out.mean, g.mean.clone()));
        }
        if g.trace_sq != 0.0 {
            let v = out
                .trace_sq
                .ok_or_else(|| SmaError::IncompleteTape(format!("no plastic trace at step {step}")))?;
            seeds.push((v, vec![g.trace_sq]));
        }
        if let Some(c) = &g.context {
            let v = tape.contexts[step]
                .ok_or_else(|| SmaError::IncompleteTape(format!("no context at step {step}")))?;
            seeds.push((v, c.clone()));
        }
    }
    let refs: Vec<(Var, &[f64])> = seeds.iter().map(|(v, g)| (*v, g.as_slice())).collect();
    Ok(tape.tape.backward(&refs).params)
}
