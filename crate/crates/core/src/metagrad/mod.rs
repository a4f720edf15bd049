//! Reverse-mode differentiation through the unrolled spiking and plasticity
//! dynamics, with a finite-difference oracle and global-norm clipping.

mod params;
mod tape;
mod unroll;

pub use params::{Gradients, ParamId, ParamTensor, ParameterSet};
pub use tape::{Adjoints, Tape, Var};
pub use unroll::{backward, unroll_forward, EpisodeSegment, StepGrads, UnrollOutputs, UnrollTape};

use crate::error::{Result, SmaError};

pub const DEFAULT_TRUNCATION: usize = 30;

/// Central finite differences of `loss` with respect to every scalar of
/// every tensor whose name starts with one of `prefixes` (all tensors when
/// empty). Aborts if two evaluations at the unperturbed point disagree.
pub fn fd_oracle<F>(params: &ParameterSet, loss: F, h: f64, prefixes: &[&str]) -> Result<Gradients>
where
    F: Fn(&ParameterSet) -> f64,
{
    let base_a = loss(params);
    let base_b = loss(params);
    if base_a.to_bits() != base_b.to_bits() {
        return Err(SmaError::NonDeterministic(format!("{base_a} vs {base_b}")));
    }
    let mut grads = params.zero_grads();
    let mut work = params.clone();
    for (id, t) in params.iter() {
        if !prefixes.is_empty() && !prefixes.iter().any(|p| t.name.starts_with(p)) {
            continue;
        }
        for k in 0..t.data.len() {
            let x = t.data[k];
            work.data_mut(id)[k] = x + h;
            let up = loss(&work);
            work.data_mut(id)[k] = x - h;
            let down = loss(&work);
            work.data_mut(id)[k] = x;
            grads.values[id.index()][k] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Rescales `grads` so that their global L2 norm is at most `max_norm`.
/// Returns the pre-clipping norm alongside.
pub fn clip_global_norm(mut grads: Gradients, max_norm: f64) -> Result<(Gradients, f64)> {
    for (name, v) in grads.names.iter().zip(&grads.values) {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SmaError::NanGradient(name.clone()));
        }
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok((grads, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grads_of(values: Vec<f64>) -> Gradients {
        Gradients {
            names: vec!["g".into()],
            values: vec![values],
        }
    }

    #[test]
    fn clipping() {
        let (g, n) = clip_global_norm(grads_of(vec![3.0, 4.0]), 1.0).unwrap();
        assert_eq!(n, 5.0);
        assert_abs_diff_eq!(g.values[0][0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(g.values[0][1], 0.8, epsilon = 1e-15);
        let (g, _) = clip_global_norm(grads_of(vec![0.3, 0.4]), 1.0).unwrap();
        assert_eq!(g.values[0], vec![0.3, 0.4]);
        let (g, _) = clip_global_norm(grads_of(vec![0.0, 0.0]), 1.0).unwrap();
        assert_eq!(g.values[0], vec![0.0, 0.0]);
        match clip_global_norm(grads_of(vec![f64::NAN]), 1.0) {
            Err(SmaError::NanGradient(name)) => assert_eq!(name, "g"),
            other => panic!("expected NaN error, got {other:?}"),
        }
    }

    #[test]
    fn fd_on_quadratic() {
        let mut ps = ParameterSet::new();
        ps.insert("p", vec![1], vec![3.0]);
        let g = fd_oracle(&ps, |q| q.data(q.id("p").unwrap())[0].powi(2), 1e-5, &[]).unwrap();
        assert_abs_diff_eq!(g.values[0][0], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn fd_detects_nondeterminism() {
        use std::cell::Cell;
        let mut ps = ParameterSet::new();
        ps.insert("p", vec![1], vec![1.0]);
        let calls = Cell::new(0.0);
        let r = fd_oracle(
            &ps,
            |_| {
                calls.set(calls.get() + 1.0);
                calls.get()
            },
            1e-5,
            &[],
        );
        assert!(matches!(r, Err(SmaError::NonDeterministic(_))));
    }
}
