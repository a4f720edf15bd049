//! Reverse-mode tape over dense `f64` vectors.
//!
//! Every operation evaluates eagerly and records what its adjoint needs.
//! Forward kernels are shared with the value-level functions in
//! [`crate::snn`] and [`crate::plasticity`], so a taped forward pass is
//! bitwise identical to composing those functions by hand.

use crate::metagrad::params::{Gradients, ParamId, ParameterSet};
use crate::plasticity::{outer_kernel, trace_kernel};
use crate::snn::{lif_kernel, matvec_into, triangle, Surrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    /// `W x (+ b)` with `W` row-major `rows × cols`.
    Affine { w: Var, x: Var, b: Option<Var>, rows: usize, cols: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `c·x + y`
    Axpy { c: f64, x: Var, y: Var },
    Scale { c: f64, x: Var },
    /// Scalar variable times vector.
    ScaleBy { s: Var, x: Var },
    /// `s·x + c·y` with scalar variable `s`; the trace recurrence.
    Trace { s: Var, x: Var, c: f64, y: Var },
    /// Pre-reset potential `leak·v + current`.
    Integrate { leak: f64, v: Var, current: Var },
    Spike { u: Var, threshold: f64, surrogate: Surrogate },
    /// `u − θ·s`, gradient passes to `u` only.
    Reset { u: Var },
    Outer { a: Var, b: Var },
    RowScale { m: Var, r: Var, cols: usize },
    ColScale { m: Var, c: Var, cols: usize },
    Elu(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    MeanSquare(Var),
    Dot(Var, Var),
    Detach,
}

#[derive(Debug, Clone)]
enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

#[derive(Debug, Clone)]
struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Adjoints {
    nodes: Vec<Option<Vec<f64>>>,
    pub params: Gradients,
}

impl Adjoints {
    /// Adjoint of an arbitrary node; zeros when the node did not influence
    /// any seed.
    pub fn wrt(&self, v: Var, len: usize) -> Vec<f64> {
        self.nodes[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(x) => x,
            Value::Param(id) => self.params.data(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, x: Vec<f64>) -> Var {
        self.push(x, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let cols = self.value(x).len();
        let wl = self.value(w).len();
        assert!(cols > 0 && wl % cols == 0, "affine: {wl} weights for {cols} inputs");
        let rows = wl / cols;
        let mut out = vec![0.0; rows];
        matvec_into(self.value(w), rows, cols, self.value(x), &mut out);
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.len(), rows, "affine bias length");
            for (o, bi) in out.iter_mut().zip(bv) {
                *o += bi;
            }
        }
        self.push(out, Op::Affine { w, x, b, rows, cols })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.len(), y.len(), "elementwise length mismatch");
        let out = x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect();
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn axpy(&mut self, c: f64, x: Var, y: Var) -> Var {
        self.zip_with(x, y, |p, q| c * p + q, Op::Axpy { c, x, y })
    }

    pub fn scale(&mut self, c: f64, x: Var) -> Var {
        let out = self.value(x).iter().map(|p| c * p).collect();
        self.push(out, Op::Scale { c, x })
    }

    pub fn scale_by(&mut self, s: Var, x: Var) -> Var {
        let sv = self.scalar(s);
        let out = self.value(x).iter().map(|p| sv * p).collect();
        self.push(out, Op::ScaleBy { s, x })
    }

    /// Synaptic trace recurrence `decay·x + beta·spikes` with learnable decay.
    pub fn trace(&mut self, decay: Var, x: Var, beta: f64, spikes: Var) -> Var {
        let d = self.scalar(decay);
        let mut out = vec![0.0; self.value(x).len()];
        trace_kernel(self.value(x), self.value(spikes), d, beta, &mut out);
        self.push(out, Op::Trace { s: decay, x, c: beta, y: spikes })
    }

    /// One LIF update; returns `(spikes, membrane after reset)`.
    pub fn lif(&mut self, v: Var, current: Var, leak: f64, threshold: f64, surrogate: Surrogate) -> (Var, Var) {
        let n = self.value(v).len();
        let (mut u, mut s, mut vn) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        lif_kernel(self.value(v), self.value(current), leak, threshold, &mut u, &mut s, &mut vn);
        let u = self.push(u, Op::Integrate { leak, v, current });
        let s = self.push(s, Op::Spike { u, threshold, surrogate });
        let vn = self.push(vn, Op::Reset { u });
        (s, vn)
    }

    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; av.len() * bv.len()];
        outer_kernel(av, bv, &mut out);
        self.push(out, Op::Outer { a, b })
    }

    /// `m[j, i] · r[j]`
    pub fn row_scale(&mut self, m: Var, r: Var) -> Var {
        let rv = self.value(r);
        let cols = self.value(m).len() / rv.len();
        let out = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(k, x)| x * rv[k / cols])
            .collect();
        self.push(out, Op::RowScale { m, r, cols })
    }

    /// `m[j, i] · c[i]`
    pub fn col_scale(&mut self, m: Var, c: Var) -> Var {
        let cv = self.value(c);
        let cols = cv.len();
        let out = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(k, x)| x * cv[k % cols])
            .collect();
        self.push(out, Op::ColScale { m, c, cols })
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&p| if p > 0.0 { p } else { p.exp_m1() }).collect();
        self.push(out, Op::Elu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|p| p.tanh()).collect();
        self.push(out, Op::Tanh(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x)[start..start + len].to_vec();
        self.push(out, Op::Slice { x, start })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    pub fn mean_square(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let m = xs.iter().map(|p| p * p).sum::<f64>() / xs.len() as f64;
        self.push(vec![m], Op::MeanSquare(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let d = self.value(a).iter().zip(self.value(b)).map(|(p, q)| p * q).sum();
        self.push(vec![d], Op::Dot(a, b))
    }

    /// Stop-gradient: same value, no adjoint flows back.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).to_vec();
        self.push(v, Op::Detach)
    }

    /// Propagates the seeded output adjoints back to every node.
    pub fn backward(&self, seeds: &[(Var, &[f64])]) -> Adjoints {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            assert_eq!(self.value(*v).len(), g.len(), "seed length");
            accumulate(&mut adj, *v, g.len(), |a| {
                for (x, y) in a.iter_mut().zip(g.iter()) {
                    *x += y;
                }
            });
        }
        let mut grads = self.params.zero_grads();
        for n in (0..self.nodes.len()).rev() {
            let Some(g) = adj[n].take() else { continue };
            match &self.nodes[n].op {
                Op::Const | Op::Detach => {}
                Op::Param(id) => {
                    for (x, y) in grads.values[id.0].iter_mut().zip(&g) {
                        *x += y;
                    }
                }
                &Op::Affine { w, x, b, rows, cols } => {
                    let xv = self.value(x);
                    let wv = self.value(w);
                    accumulate(&mut adj, w, rows * cols, |gw| {
                        for (i, &xi) in xv.iter().enumerate() {
                            if xi == 0.0 {
                                continue;
                            }
                            for j in 0..rows {
                                gw[j * cols + i] += g[j] * xi;
                            }
                        }
                    });
                    accumulate(&mut adj, x, cols, |gx| {
                        for j in 0..rows {
                            let gj = g[j];
                            if gj == 0.0 {
                                continue;
                            }
                            let row = &wv[j * cols..(j + 1) * cols];
                            for (o, wji) in gx.iter_mut().zip(row) {
                                *o += gj * wji;
                            }
                        }
                    });
                    if let Some(b) = b {
                        accumulate(&mut adj, b, rows, |gb| add_into(gb, &g));
                    }
                }
                &Op::Add(a, b) => {
                    accumulate(&mut adj, a, g.len(), |x| add_into(x, &g));
                    accumulate(&mut adj, b, g.len(), |x| add_into(x, &g));
                }
                &Op::Sub(a, b) => {
                    accumulate(&mut adj, a, g.len(), |x| add_into(x, &g));
                    accumulate(&mut adj, b, g.len(), |x| {
                        for (o, gi) in x.iter_mut().zip(&g) {
                            *o -= gi;
                        }
                    });
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    accumulate(&mut adj, a, g.len(), |x| {
                        for k in 0..g.len() {
                            x[k] += g[k] * bv[k];
                        }
                    });
                    accumulate(&mut adj, b, g.len(), |x| {
                        for k in 0..g.len() {
                            x[k] += g[k] * av[k];
                        }
                    });
                }
                &Op::Axpy { c, x, y } => {
                    accumulate(&mut adj, x, g.len(), |a| axpy_into(a, c, &g));
                    accumulate(&mut adj, y, g.len(), |a| add_into(a, &g));
                }
                &Op::Scale { c, x } => {
                    accumulate(&mut adj, x, g.len(), |a| axpy_into(a, c, &g));
                }
                &Op::ScaleBy { s, x } => {
                    let sv = self.scalar(s);
                    let xv = self.value(x);
                    let ds: f64 = g.iter().zip(xv).map(|(p, q)| p * q).sum();
                    accumulate(&mut adj, s, 1, |a| a[0] += ds);
                    accumulate(&mut adj, x, g.len(), |a| axpy_into(a, sv, &g));
                }
                &Op::Trace { s, x, c, y } => {
                    let sv = self.scalar(s);
                    let xv = self.value(x);
                    let ds: f64 = g.iter().zip(xv).map(|(p, q)| p * q).sum();
                    accumulate(&mut adj, s, 1, |a| a[0] += ds);
                    accumulate(&mut adj, x, g.len(), |a| axpy_into(a, sv, &g));
                    accumulate(&mut adj, y, g.len(), |a| axpy_into(a, c, &g));
                }
                &Op::Integrate { leak, v, current } => {
                    accumulate(&mut adj, v, g.len(), |a| axpy_into(a, leak, &g));
                    accumulate(&mut adj, current, g.len(), |a| add_into(a, &g));
                }
                &Op::Spike { u, threshold, surrogate } => {
                    if surrogate.slope != 0.0 {
                        let uv = self.value(u);
                        accumulate(&mut adj, u, g.len(), |a| {
                            for k in 0..g.len() {
                                a[k] += g[k] * triangle(uv[k], threshold, surrogate);
                            }
                        });
                    }
                }
                &Op::Reset { u } => {
                    accumulate(&mut adj, u, g.len(), |a| add_into(a, &g));
                }
                &Op::Outer { a, b } => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let cols = bv.len();
                    accumulate(&mut adj, a, av.len(), |x| {
                        for (j, xj) in x.iter_mut().enumerate() {
                            let row = &g[j * cols..(j + 1) * cols];
                            *xj += row.iter().zip(bv).map(|(p, q)| p * q).sum::<f64>();
                        }
                    });
                    accumulate(&mut adj, b, cols, |x| {
                        for (j, &aj) in av.iter().enumerate() {
                            if aj == 0.0 {
                                continue;
                            }
                            for (xi, gi) in x.iter_mut().zip(&g[j * cols..(j + 1) * cols]) {
                                *xi += aj * gi;
                            }
                        }
                    });
                }
                &Op::RowScale { m, r, cols } => {
                    let (mv, rv) = (self.value(m), self.value(r));
                    accumulate(&mut adj, m, g.len(), |x| {
                        for k in 0..g.len() {
                            x[k] += g[k] * rv[k / cols];
                        }
                    });
                    accumulate(&mut adj, r, rv.len(), |x| {
                        for k in 0..g.len() {
                            x[k / cols] += g[k] * mv[k];
                        }
                    });
                }
                &Op::ColScale { m, c, cols } => {
                    let (mv, cv) = (self.value(m), self.value(c));
                    accumulate(&mut adj, m, g.len(), |x| {
                        for k in 0..g.len() {
                            x[k] += g[k] * cv[k % cols];
                        }
                    });
                    accumulate(&mut adj, c, cols, |x| {
                        for k in 0..g.len() {
                            x[k % cols] += g[k] * mv[k];
                        }
                    });
                }
                &Op::Elu(x) => {
                    let xv = self.value(x);
                    accumulate(&mut adj, x, g.len(), |a| {
                        for k in 0..g.len() {
                            let d = if xv[k] > 0.0 { 1.0 } else { xv[k].exp() };
                            a[k] += g[k] * d;
                        }
                    });
                }
                &Op::Tanh(x) => {
                    let yv = self.value(Var(n));
                    accumulate(&mut adj, x, g.len(), |a| {
                        for k in 0..g.len() {
                            a[k] += g[k] * (1.0 - yv[k] * yv[k]);
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        accumulate(&mut adj, p, len, |a| add_into(a, &g[off..off + len]));
                        off += len;
                    }
                }
                &Op::Slice { x, start } => {
                    let len = self.value(x).len();
                    accumulate(&mut adj, x, len, |a| add_into(&mut a[start..start + g.len()], &g));
                }
                &Op::Sum(x) => {
                    let len = self.value(x).len();
                    accumulate(&mut adj, x, len, |a| a.iter_mut().for_each(|p| *p += g[0]));
                }
                &Op::MeanSquare(x) => {
                    let xv = self.value(x);
                    let c = 2.0 * g[0] / xv.len() as f64;
                    accumulate(&mut adj, x, xv.len(), |a| axpy_into(a, c, xv));
                }
                &Op::Dot(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    accumulate(&mut adj, a, av.len(), |x| axpy_into(x, g[0], bv));
                    accumulate(&mut adj, b, bv.len(), |x| axpy_into(x, g[0], av));
                }
            }
            adj[n] = Some(g);
        }
        Adjoints { nodes: adj, params: grads }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn add_into(a: &mut [f64], g: &[f64]) {
    for (x, y) in a.iter_mut().zip(g) {
        *x += y;
    }
}

fn axpy_into(a: &mut [f64], c: f64, g: &[f64]) {
    for (x, y) in a.iter_mut().zip(g) {
        *x += c * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn composite_matches_finite_differences() {
        let mut ps = ParameterSet::new();
        let w = ps.insert("w", vec![2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6]);
        let b = ps.insert("b", vec![2], vec![0.05, -0.1]);
        let s = ps.insert("s", vec![1], vec![0.8]);
        let x = vec![0.7, -1.1, 0.4];

        let eval = |ps: &ParameterSet, x: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut t = Tape::new(ps);
            let (wv, bv, sv) = (t.param(w), t.param(b), t.param(s));
            let xv = t.constant(x.to_vec());
            let h = t.affine(wv, xv, Some(bv));
            let e = t.elu(h);
            let th = t.tanh(h);
            let o = t.outer(e, xv);
            let r = t.row_scale(o, th);
            let c = t.col_scale(r, xv);
            let tr = t.trace(sv, h, 0.5, th);
            let cat = t.concat(&[c, tr]);
            let sl = t.slice(cat, 1, 5);
            let ms = t.mean_square(sl);
            let d = t.dot(e, th);
            let sc = t.scale_by(sv, d);
            let l = t.add(ms, sc);
            let adj = t.backward(&[(l, &[1.0])]);
            (t.scalar(l), adj.params.flatten(), adj.wrt(xv, 3))
        };
        let (_, g, gx) = eval(&ps, &x);
        let flat = ps.flatten();
        let num = fd(
            |p| {
                let mut q = ps.clone();
                q.data_mut(w).copy_from_slice(&p[0..6]);
                q.data_mut(b).copy_from_slice(&p[6..8]);
                q.data_mut(s).copy_from_slice(&p[8..9]);
                eval(&q, &x).0
            },
            &flat,
        );
        for (a, n) in g.iter().zip(&num) {
            assert_abs_diff_eq!(a, n, epsilon = 1e-7);
        }
        let numx = fd(|xx| eval(&ps, xx).0, &x);
        for (a, n) in gx.iter().zip(&numx) {
            assert_abs_diff_eq!(a, n, epsilon = 1e-7);
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut ps = ParameterSet::new();
        let a = ps.insert("a", vec![2], vec![1.0, 2.0]);
        let mut t = Tape::new(&ps);
        let av = t.param(a);
        let d = t.detach(av);
        let l = t.dot(d, d);
        let adj = t.backward(&[(l, &[1.0])]);
        assert_eq!(adj.params.get(a), &[0.0, 0.0]);
    }

    #[test]
    fn spike_uses_surrogate() {
        let ps = ParameterSet::new();
        let mut t = Tape::new(&ps);
        let v = t.constant(vec![0.0, 0.0]);
        let i = t.constant(vec![1.5, -0.5]);
        let (s, _) = t.lif(v, i, 0.9, 1.0, Surrogate::default());
        assert_eq!(t.value(s), &[1.0, 0.0]);
        let adj = t.backward(&[(s, &[1.0, 1.0])]);
        let gi = adj.wrt(i, 2);
        assert_abs_diff_eq!(gi[0], 0.15, epsilon = 1e-15);
        assert_eq!(gi[1], 0.0);
    }
}
