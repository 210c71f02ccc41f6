//! Scalar reverse-mode automatic differentiation.
//!
//! Model code is written once against the [`Arith`] trait and runs on two
//! backends: [`Eval`] computes plain `f64` values with no bookkeeping, and
//! [`Tape`] records every primitive so that a reverse sweep can produce exact
//! gradients. Because the inner gradient-descent loop is itself expressed in
//! `Arith` primitives, taping it yields exact second-order meta-gradients.
//!
//! ```
//! use metaxb::numerics::{Arith, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.input(3.0);
//! let y = tape.mul(w, w);
//! assert_eq!(tape.value(y), 9.0);
//! assert_eq!(tape.gradient(y, &[w]), vec![6.0]);
//! ```

use crate::error::{Error, Result};

/// Arithmetic backend. Every differentiable computation in the crate is
/// generic over this trait.
pub trait Arith {
    type V: Copy + std::fmt::Debug;

    /// A value that carries no gradient.
    fn constant(&mut self, c: f64) -> Self::V;
    fn value(&self, v: Self::V) -> f64;

    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn div(&mut self, a: Self::V, b: Self::V) -> Self::V;
    /// `c * a`
    fn scale(&mut self, a: Self::V, c: f64) -> Self::V;
    /// `a + c`
    fn offset(&mut self, a: Self::V, c: f64) -> Self::V;
    /// `ca * a + cb * b`
    fn lin2(&mut self, a: Self::V, ca: f64, b: Self::V, cb: f64) -> Self::V;

    fn exp(&mut self, a: Self::V) -> Self::V;
    fn ln(&mut self, a: Self::V) -> Self::V;
    /// `max(a, 0)`; derivative 0 at the kink.
    fn relu(&mut self, a: Self::V) -> Self::V;
    /// Exponential linear unit with unit scale.
    fn elu(&mut self, a: Self::V) -> Self::V;
    /// Standard logistic `1 / (1 + exp(-a))`.
    fn sigmoid(&mut self, a: Self::V) -> Self::V;

    /// `sum_i a[i] * b[i]`
    fn dot(&mut self, a: &[Self::V], b: &[Self::V]) -> Self::V;
    /// `sum_i a[i] * c[i]` with constant weights.
    fn dot_const(&mut self, a: &[Self::V], c: &[f64]) -> Self::V;
    fn sum(&mut self, a: &[Self::V]) -> Self::V;

    /// Same value, gradient stopped.
    fn detach(&mut self, a: Self::V) -> Self::V {
        let v = self.value(a);
        self.constant(v)
    }

    fn neg(&mut self, a: Self::V) -> Self::V {
        self.scale(a, -1.0)
    }
}

/// Plain `f64` evaluation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Arith for Eval {
    type V = f64;

    #[inline]
    fn constant(&mut self, c: f64) -> f64 {
        c
    }
    #[inline]
    fn value(&self, v: f64) -> f64 {
        v
    }
    #[inline]
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    #[inline]
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    #[inline]
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    #[inline]
    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }
    #[inline]
    fn scale(&mut self, a: f64, c: f64) -> f64 {
        c * a
    }
    #[inline]
    fn offset(&mut self, a: f64, c: f64) -> f64 {
        a + c
    }
    #[inline]
    fn lin2(&mut self, a: f64, ca: f64, b: f64, cb: f64) -> f64 {
        ca * a + cb * b
    }
    #[inline]
    fn exp(&mut self, a: f64) -> f64 {
        a.exp()
    }
    #[inline]
    fn ln(&mut self, a: f64) -> f64 {
        a.ln()
    }
    #[inline]
    fn relu(&mut self, a: f64) -> f64 {
        a.max(0.0)
    }
    #[inline]
    fn elu(&mut self, a: f64) -> f64 {
        elu(a)
    }
    #[inline]
    fn sigmoid(&mut self, a: f64) -> f64 {
        logistic(a)
    }
    #[inline]
    fn dot(&mut self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    #[inline]
    fn dot_const(&mut self, a: &[f64], c: &[f64]) -> f64 {
        a.iter().zip(c).map(|(x, y)| x * y).sum()
    }
    #[inline]
    fn sum(&mut self, a: &[f64]) -> f64 {
        a.iter().sum()
    }
}

pub(crate) fn elu(a: f64) -> f64 {
    if a > 0.0 {
        a
    } else {
        a.exp_m1()
    }
}

pub(crate) fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Append-only record of primitive operations.
///
/// Nodes are stored in creation order, so parents always precede children
/// and the reverse sweep is a single backwards pass. Nodes that do not depend
/// on any input are flagged as constants and never stored as parents.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<f64>,
    live: Vec<bool>,
    // edges of node i are edges[start[i]..start[i + 1]]
    start: Vec<u32>,
    edges: Vec<(u32, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            live: Vec::new(),
            start: vec![0],
            edges: Vec::new(),
        }
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        let mut start = Vec::with_capacity(nodes + 1);
        start.push(0);
        Self {
            values: Vec::with_capacity(nodes),
            live: Vec::with_capacity(nodes),
            start,
            edges: Vec::with_capacity(edges),
        }
    }

    /// Drops all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        self.values.clear();
        self.live.clear();
        self.start.clear();
        self.start.push(0);
        self.edges.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: f64) -> Var {
        self.push_leaf(value, true)
    }

    pub fn inputs(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    /// Parents of a node with their local partial derivatives.
    pub fn parents(&self, v: Var) -> &[(u32, f64)] {
        let i = v.index();
        &self.edges[self.start[i] as usize..self.start[i + 1] as usize]
    }

    fn push_leaf(&mut self, value: f64, live: bool) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.live.push(live);
        self.start.push(self.edges.len() as u32);
        Var(id as u32)
    }

    #[inline]
    fn push_edge(&mut self, parent: Var, partial: f64) {
        if self.live[parent.index()] {
            self.edges.push((parent.0, partial));
        }
    }

    #[inline]
    fn finish(&mut self, value: f64, first_edge: usize) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.live.push(self.edges.len() > first_edge);
        self.start.push(self.edges.len() as u32);
        Var(id as u32)
    }

    #[inline]
    fn unary(&mut self, a: Var, value: f64, partial: f64) -> Var {
        let first = self.edges.len();
        self.push_edge(a, partial);
        self.finish(value, first)
    }

    #[inline]
    fn binary(&mut self, a: Var, pa: f64, b: Var, pb: f64, value: f64) -> Var {
        let first = self.edges.len();
        self.push_edge(a, pa);
        self.push_edge(b, pb);
        self.finish(value, first)
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var) -> Vec<f64> {
        let n = output.index() + 1;
        let mut adj = vec![0.0; n];
        adj[output.index()] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (self.start[i] as usize, self.start[i + 1] as usize);
            for &(p, w) in &self.edges[s..e] {
                adj[p as usize] += a * w;
            }
        }
        adj
    }

    /// Gradient of `output` with respect to the given leaves.
    pub fn gradient(&self, output: Var, wrt: &[Var]) -> Vec<f64> {
        let adj = self.backward(output);
        wrt.iter()
            .map(|v| adj.get(v.index()).copied().unwrap_or(0.0))
            .collect()
    }
}

impl Arith for Tape {
    type V = Var;

    fn constant(&mut self, c: f64) -> Var {
        self.push_leaf(c, false)
    }

    #[inline]
    fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.binary(a, 1.0, b, 1.0, v)
    }

    fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.binary(a, 1.0, b, -1.0, v)
    }

    fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.binary(a, y, b, x, x * y)
    }

    fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let q = x / y;
        self.binary(a, 1.0 / y, b, -q / y, q)
    }

    fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.unary(a, v, c)
    }

    fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.unary(a, v, 1.0)
    }

    fn lin2(&mut self, a: Var, ca: f64, b: Var, cb: f64) -> Var {
        let v = ca * self.value(a) + cb * self.value(b);
        self.binary(a, ca, b, cb, v)
    }

    fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.unary(a, v, v)
    }

    fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(a, x.ln(), 1.0 / x)
    }

    fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.unary(a, x, 1.0)
        } else {
            self.unary(a, 0.0, 0.0)
        }
    }

    fn elu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.unary(a, x, 1.0)
        } else {
            self.unary(a, x.exp_m1(), x.exp())
        }
    }

    fn sigmoid(&mut self, a: Var) -> Var {
        let s = logistic(self.value(a));
        self.unary(a, s, s * (1.0 - s))
    }

    fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        debug_assert_eq!(a.len(), b.len());
        let first = self.edges.len();
        let mut acc = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            let (vx, vy) = (self.value(x), self.value(y));
            acc += vx * vy;
            self.push_edge(x, vy);
            self.push_edge(y, vx);
        }
        self.finish(acc, first)
    }

    fn dot_const(&mut self, a: &[Var], c: &[f64]) -> Var {
        debug_assert_eq!(a.len(), c.len());
        let first = self.edges.len();
        let mut acc = 0.0;
        for (&x, &w) in a.iter().zip(c) {
            acc += self.value(x) * w;
            self.push_edge(x, w);
        }
        self.finish(acc, first)
    }

    fn sum(&mut self, a: &[Var]) -> Var {
        let first = self.edges.len();
        let mut acc = 0.0;
        for &x in a {
            acc += self.value(x);
            self.push_edge(x, 1.0);
        }
        self.finish(acc, first)
    }
}

/// Reverse-mode gradient of a scalar function at `at`.
///
/// The closure receives a fresh tape and one input per coordinate. Only the
/// primitives of [`Arith`] can be recorded, so an unsupported operation is a
/// compile error rather than a runtime one; a closure error or a non-finite
/// value or gradient is reported as [`Error`].
pub fn grad<F>(f: F, at: &[f64]) -> Result<Vec<f64>>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    value_and_grad(f, at).map(|(_, g)| g)
}

/// Like [`grad`] but also returns the function value.
pub fn value_and_grad<F>(f: F, at: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xs = tape.inputs(at);
    let out = f(&mut tape, &xs)?;
    let value = tape.value(out);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "function value".into(),
        });
    }
    let g = tape.gradient(out, &xs);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient".into(),
        });
    }
    Ok((value, g))
}
