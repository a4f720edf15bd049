//! Small non-spiking feedforward nets (critic, extrinsics encoder, history
//! estimator). ELU hidden layers, linear output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::metagrad::{ParamId, ParameterSet, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub prefix: String,
    pub sizes: Vec<usize>,
}

impl MlpConfig {
    pub fn new(prefix: &str, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self {
            prefix: prefix.to_string(),
            sizes,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty mlp")
    }

    fn name(&self, layer: usize, kind: &str) -> String {
        format!("{}.l{layer}.{kind}", self.prefix)
    }

    /// Uniform fan-in initialisation. The last layer is scaled by
    /// `out_gain`; zero gives a net whose output is identically zero.
    pub fn init(&self, ps: &mut ParameterSet, rng: &mut impl Rng, out_gain: f64) {
        let n = self.sizes.len() - 1;
        for l in 0..n {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let gain = if l + 1 == n { out_gain } else { 1.0 };
            let w = (0..fan_in * fan_out)
                .map(|_| gain * rng.random_range(-bound..bound))
                .collect();
            ps.insert(self.name(l, "w"), vec![fan_out, fan_in], w);
            ps.insert(self.name(l, "b"), vec![fan_out], vec![0.0; fan_out]);
        }
    }

    pub fn resolve(&self, ps: &ParameterSet) -> Result<MlpIds> {
        let n = self.sizes.len() - 1;
        let layers = (0..n)
            .map(|l| Ok((ps.require(&self.name(l, "w"))?, ps.require(&self.name(l, "b"))?)))
            .collect::<Result<Vec<_>>>()?;
        for (l, (w, _)) in layers.iter().enumerate() {
            check_len("mlp weights", self.sizes[l] * self.sizes[l + 1], ps.data(*w).len())?;
        }
        Ok(MlpIds { layers })
    }
}

#[derive(Debug, Clone)]
pub struct MlpIds {
    layers: Vec<(ParamId, ParamId)>,
}

impl MlpIds {
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let n = self.layers.len();
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (tape.param(w), tape.param(b));
            h = tape.affine(w, h, Some(b));
            if l + 1 < n {
                h = tape.elu(h);
            }
        }
        h
    }

    /// Value-only evaluation.
    pub fn eval(&self, ps: &ParameterSet, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new(ps);
        let xv = tape.constant(x.to_vec());
        let y = self.forward(&mut tape, xv);
        tape.value(y).to_vec()
    }
}
