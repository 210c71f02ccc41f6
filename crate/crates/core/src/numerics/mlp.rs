//! Fully connected classifier: ELU hidden layers, softmax output.
//!
//! Parameters live in one flat vector. Each layer contributes its weight
//! matrix (row-major, `fan_out x fan_in`) followed by its bias vector.

use std::io::{Read, Write};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Arith, Eval};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: usize,
    pub b: usize,
}

impl Layout {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize) -> Result<Self> {
        let layout = Self {
            input_dim,
            hidden,
            classes,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Two hidden layers of width 32.
    pub fn with_default_hidden(input_dim: usize, classes: usize) -> Result<Self> {
        Self::new(input_dim, vec![32, 32], classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("classes", "need at least two classes"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        Ok(())
    }

    pub(crate) fn shapes(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(self.classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    w: offset,
                    b: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.shapes()
            .iter()
            .map(|s| s.fan_in * s.fan_out + s.fan_out)
            .sum()
    }
}

/// Flat weight vector together with the layout that interprets it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamVector {
    layout: Layout,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParamVector {
    layout: Layout,
    values: Vec<f64>,
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawParamVector::deserialize(d)?;
        ParamVector::new(raw.layout, raw.values).map_err(serde::de::Error::custom)
    }
}

const MAGIC: &[u8; 4] = b"MXBP";

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        let expected = layout.param_count();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector".into(),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.param_count();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    /// Fan-in scaled (He) normal weights and zero biases.
    pub fn random_init(layout: Layout, seed: SeedTree) -> Self {
        let mut rng = seed.rng();
        let mut values = vec![0.0; layout.param_count()];
        for s in layout.shapes() {
            let normal = Normal::new(0.0, (2.0 / s.fan_in as f64).sqrt()).expect("positive std");
            for v in &mut values[s.w..s.b] {
                *v = normal.sample(&mut rng);
            }
        }
        Self { layout, values }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Little-endian binary encoding: magic, layout header, values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.layout.input_dim as u32).to_le_bytes())?;
        w.write_all(&(self.layout.hidden.len() as u32).to_le_bytes())?;
        for &h in &self.layout.hidden {
            w.write_all(&(h as u32).to_le_bytes())?;
        }
        w.write_all(&(self.layout.classes as u32).to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let bad = |what: &str| Error::invalid("param binary", what.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let read_u32 = |r: &mut R| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let input_dim = read_u32(&mut r)?;
        let n_hidden = read_u32(&mut r)?;
        let hidden = (0..n_hidden)
            .map(|_| read_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let classes = read_u32(&mut r)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let count = u64::from_le_bytes(b8) as usize;
        let layout = Layout::new(input_dim, hidden, classes)?;
        if count != layout.param_count() {
            return Err(Error::DimensionMismatch {
                expected: layout.param_count(),
                actual: count,
            });
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8).map_err(|_| bad("truncated values"))?;
            values.push(f64::from_le_bytes(b8));
        }
        Self::new(layout, values)
    }
}

/// Hidden-layer pre-activations and activations of one forward pass.
pub(crate) struct Trace<V> {
    pub pre: Vec<Vec<V>>,
    pub act: Vec<Vec<V>>,
    pub logits: Vec<V>,
}

fn affine<A: Arith>(ops: &mut A, params: &[A::V], s: &LayerShape, input: &[A::V]) -> Vec<A::V> {
    (0..s.fan_out)
        .map(|o| {
            let row = &params[s.w + o * s.fan_in..s.w + (o + 1) * s.fan_in];
            let z = ops.dot(row, input);
            ops.add(z, params[s.b + o])
        })
        .collect()
}

fn affine_const<A: Arith>(ops: &mut A, params: &[A::V], s: &LayerShape, input: &[f64]) -> Vec<A::V> {
    (0..s.fan_out)
        .map(|o| {
            let row = &params[s.w + o * s.fan_in..s.w + (o + 1) * s.fan_in];
            let z = ops.dot_const(row, input);
            ops.add(z, params[s.b + o])
        })
        .collect()
}

pub(crate) fn trace<A: Arith>(
    ops: &mut A,
    shapes: &[LayerShape],
    params: &[A::V],
    x: &[f64],
) -> Trace<A::V> {
    let mut pre = Vec::with_capacity(shapes.len() - 1);
    let mut act: Vec<Vec<A::V>> = Vec::with_capacity(shapes.len() - 1);
    let last = shapes.len() - 1;
    let mut logits = Vec::new();
    for (l, s) in shapes.iter().enumerate() {
        let z = if l == 0 {
            affine_const(ops, params, s, x)
        } else {
            affine(ops, params, s, &act[l - 1])
        };
        if l == last {
            logits = z;
        } else {
            let a = z.iter().map(|&u| ops.elu(u)).collect();
            pre.push(z);
            act.push(a);
        }
    }
    Trace { pre, act, logits }
}

fn check_input(layout: &Layout, x: &[f64]) -> Result<()> {
    if x.len() != layout.input_dim {
        return Err(Error::DimensionMismatch {
            expected: layout.input_dim,
            actual: x.len(),
        });
    }
    Ok(())
}

fn max_value<A: Arith>(ops: &A, xs: &[A::V]) -> f64 {
    xs.iter()
        .map(|&v| ops.value(v))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Softmax with max subtraction. The shift is treated as a constant, which
/// is exact since softmax is shift invariant.
pub fn softmax<A: Arith>(ops: &mut A, logits: &[A::V]) -> Vec<A::V> {
    let m = max_value(ops, logits);
    let e: Vec<A::V> = logits
        .iter()
        .map(|&l| {
            let shifted = ops.offset(l, -m);
            ops.exp(shifted)
        })
        .collect();
    let s = ops.sum(&e);
    e.into_iter().map(|ei| ops.div(ei, s)).collect()
}

/// Class probabilities for input `x` under parameters `params`.
pub fn probabilities<A: Arith>(
    ops: &mut A,
    layout: &Layout,
    params: &[A::V],
    x: &[f64],
) -> Result<Vec<A::V>> {
    check_input(layout, x)?;
    let t = trace(ops, &layout.shapes(), params, x);
    Ok(softmax(ops, &t.logits))
}

/// Probability vector of the classifier at `x`.
pub fn mlp_forward(x: &[f64], params: &ParamVector) -> Result<Vec<f64>> {
    probabilities(&mut Eval, params.layout(), params.values(), x)
}

fn log_softmax_value(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits[y] - m - s.ln()
}

/// Per-example log-loss with the probability clamp.
pub fn log_loss(probs: &[f64], y: usize) -> f64 {
    -probs[y].max(LOG_CLAMP).ln()
}

/// Mean log-loss over `data` together with its gradient, the latter built
/// from backend primitives so it can itself be differentiated.
///
/// Examples whose true-class probability falls below the clamp contribute a
/// constant loss and therefore no gradient.
pub fn loss_gradient<A: Arith>(
    ops: &mut A,
    layout: &Layout,
    params: &[A::V],
    data: &[Sample],
) -> Result<(f64, Vec<A::V>)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let shapes = layout.shapes();
    let n_layers = shapes.len();
    let inv_n = 1.0 / data.len() as f64;
    let log_clamp = LOG_CLAMP.ln();

    // Transposed weight views: columns[l][j] = W_l[:, j].
    let columns: Vec<Vec<Vec<A::V>>> = shapes
        .iter()
        .map(|s| {
            (0..s.fan_in)
                .map(|j| (0..s.fan_out).map(|o| params[s.w + o * s.fan_in + j]).collect())
                .collect()
        })
        .collect();

    // deltas[l][o] and acts[l][i] collect one entry per contributing example.
    let mut deltas: Vec<Vec<Vec<A::V>>> = shapes.iter().map(|s| vec![Vec::new(); s.fan_out]).collect();
    let mut hidden_acts: Vec<Vec<Vec<A::V>>> = shapes[..n_layers - 1]
        .iter()
        .map(|s| vec![Vec::new(); s.fan_out])
        .collect();
    let mut inputs: Vec<Vec<f64>> = vec![Vec::new(); layout.input_dim];

    let mut loss = 0.0;
    for sample in data {
        check_input(layout, &sample.x)?;
        if sample.y >= layout.classes {
            return Err(Error::invalid("label", format!("{} >= {} classes", sample.y, layout.classes)));
        }
        let t = trace(ops, &shapes, params, &sample.x);
        let logit_values: Vec<f64> = t.logits.iter().map(|&v| ops.value(v)).collect();
        let lp = log_softmax_value(&logit_values, sample.y);
        if lp < log_clamp {
            loss -= log_clamp;
            continue;
        }
        loss -= lp;

        let probs = softmax(ops, &t.logits);
        let mut delta: Vec<A::V> = probs
            .into_iter()
            .enumerate()
            .map(|(c, p)| {
                let target = if c == sample.y { 1.0 } else { 0.0 };
                let d = ops.offset(p, -target);
                ops.scale(d, inv_n)
            })
            .collect();

        for l in (0..n_layers).rev() {
            for (o, &d) in delta.iter().enumerate() {
                deltas[l][o].push(d);
            }
            if l == 0 {
                break;
            }
            let pre = &t.pre[l - 1];
            delta = (0..shapes[l].fan_in)
                .map(|j| {
                    let back = ops.dot(&columns[l][j], &delta);
                    let z = pre[j];
                    if ops.value(z) > 0.0 {
                        back
                    } else {
                        let slope = ops.exp(z);
                        ops.mul(back, slope)
                    }
                })
                .collect();
        }
        for (l, a) in t.act.into_iter().enumerate() {
            for (i, v) in a.into_iter().enumerate() {
                hidden_acts[l][i].push(v);
            }
        }
        for (i, &xi) in sample.x.iter().enumerate() {
            inputs[i].push(xi);
        }
    }
    loss *= inv_n;

    let mut grad: Vec<Option<A::V>> = vec![None; params.len()];
    for (l, s) in shapes.iter().enumerate() {
        for o in 0..s.fan_out {
            let d = &deltas[l][o];
            for i in 0..s.fan_in {
                let g = if l == 0 {
                    ops.dot_const(d, &inputs[i])
                } else {
                    ops.dot(d, &hidden_acts[l - 1][i])
                };
                grad[s.w + o * s.fan_in + i] = Some(g);
            }
            grad[s.b + o] = Some(ops.sum(d));
        }
    }
    let grad = grad
        .into_iter()
        .map(|g| g.expect("every parameter receives a gradient"))
        .collect();
    Ok((loss, grad))
}

/// Mean clamped log-loss (value only).
pub fn mean_log_loss(layout: &Layout, params: &[f64], data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let shapes = layout.shapes();
    let mut total = 0.0;
    for s in data {
        check_input(layout, &s.x)?;
        let t = trace(&mut Eval, &shapes, params, &s.x);
        total -= log_softmax_value(&t.logits, s.y).max(LOG_CLAMP.ln());
    }
    Ok(total / data.len() as f64)
}
