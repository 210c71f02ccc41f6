//! Nonconformity scores.
//!
//! Every score is computed in two steps: train a classifier from the
//! initialization `xi` on a dataset, then evaluate a loss-like function of
//! its predictive distribution at the test pair. The second step is exposed
//! separately (`*_from_probs`) so predictors can train once per fold and
//! score every candidate label.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::{gd_train, log_loss, mlp_forward, Arith, Eval, GdConfig, ParamVector, LOG_CLAMP};
use crate::quantiles::SmoothingParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreKind {
    /// Log-loss of the trained model.
    #[default]
    ConventionalLogloss,
    /// Total probability of the classes at least as likely as `y`.
    Adaptive,
    /// Sigmoid-smoothed version of [`ScoreKind::Adaptive`].
    SoftAdaptive { smoothing: SmoothingParams },
}

impl ScoreKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScoreKind::SoftAdaptive { smoothing } => smoothing.validate(),
            _ => Ok(()),
        }
    }

    /// The kind used inside a differentiable objective: the hard adaptive
    /// score is replaced by its smoothed form, the others are unchanged.
    pub fn differentiable(self, smoothing: SmoothingParams) -> Self {
        match self {
            ScoreKind::Adaptive => ScoreKind::SoftAdaptive { smoothing },
            other => other,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreKind::ConventionalLogloss => "conventional_logloss",
            ScoreKind::Adaptive => "adaptive",
            ScoreKind::SoftAdaptive { .. } => "soft_adaptive",
        }
    }

    /// Score of label `y` under the probability vector `probs`.
    pub fn from_probs(&self, probs: &[f64], y: usize) -> f64 {
        score_with(&mut Eval, self, probs, y)
    }

    /// Scores of every label at `x` under a trained model.
    pub fn all_labels(&self, x: &[f64], model: &ParamVector) -> Result<Vec<f64>> {
        let probs = mlp_forward(x, model)?;
        Ok((0..probs.len()).map(|y| self.from_probs(&probs, y)).collect())
    }
}

pub fn conventional_from_probs(probs: &[f64], y: usize) -> f64 {
    log_loss(probs, y)
}

/// `sum_{y'} 1(p_{y'} >= p_y) p_{y'}`
pub fn adaptive_from_probs(probs: &[f64], y: usize) -> f64 {
    let py = probs[y];
    probs.iter().filter(|&&p| p >= py).sum()
}

/// Greedy reading: walk the classes in decreasing probability and stop once
/// `y` has been included. Ties with `y` are visited before `y`.
pub fn adaptive_maxform_from_probs(probs: &[f64], y: usize) -> f64 {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .total_cmp(&probs[a])
            .then_with(|| (a == y).cmp(&(b == y)))
    });
    let mut total = 0.0;
    for c in order {
        total += probs[c];
        if c == y {
            break;
        }
    }
    total
}

/// `1 + sum_{y' != y} ReLU(p_y - p_{y'}) - p_y sum_{y' != y} sigmoid((p_y - p_{y'}) / c_sigma)`
pub fn soft_adaptive_from_probs(probs: &[f64], y: usize, c_sigma: f64) -> f64 {
    soft_adaptive_with(&mut Eval, probs, y, c_sigma)
}

fn soft_adaptive_with<A: Arith>(ops: &mut A, probs: &[A::V], y: usize, c_sigma: f64) -> A::V {
    let py = probs[y];
    let mut relus = Vec::with_capacity(probs.len());
    let mut sigmas = Vec::with_capacity(probs.len());
    for (c, &p) in probs.iter().enumerate() {
        if c == y {
            continue;
        }
        let gap = ops.sub(py, p);
        relus.push(ops.relu(gap));
        let scaled = ops.scale(gap, 1.0 / c_sigma);
        sigmas.push(ops.sigmoid(scaled));
    }
    let relu_sum = ops.sum(&relus);
    let sigma_sum = ops.sum(&sigmas);
    let count = ops.mul(py, sigma_sum);
    let body = ops.sub(relu_sum, count);
    ops.offset(body, 1.0)
}

/// Score in any [`Arith`] backend.
pub fn score_with<A: Arith>(ops: &mut A, kind: &ScoreKind, probs: &[A::V], y: usize) -> A::V {
    match kind {
        ScoreKind::ConventionalLogloss => {
            let p = probs[y];
            if ops.value(p) < LOG_CLAMP {
                ops.constant(-LOG_CLAMP.ln())
            } else {
                let l = ops.ln(p);
                ops.neg(l)
            }
        }
        ScoreKind::Adaptive => {
            let py = ops.value(probs[y]);
            let kept: Vec<A::V> = probs
                .iter()
                .copied()
                .filter(|&p| ops.value(p) >= py)
                .collect();
            ops.sum(&kept)
        }
        ScoreKind::SoftAdaptive { smoothing } => soft_adaptive_with(ops, probs, y, smoothing.c_sigma),
    }
}

fn check_label(model: &ParamVector, y: usize) -> Result<()> {
    let classes = model.layout().classes;
    if y >= classes {
        return Err(Error::invalid("label", format!("{y} >= {classes} classes")));
    }
    Ok(())
}

fn trained_probs(z: &Sample, train: &[Sample], xi: &ParamVector, cfg: &GdConfig) -> Result<Vec<f64>> {
    check_label(xi, z.y)?;
    let model = gd_train(train, xi, cfg)?;
    mlp_forward(&z.x, &model)
}

/// Score of `z` after training from `xi` on `train`.
pub fn nc_score(kind: &ScoreKind, z: &Sample, train: &[Sample], xi: &ParamVector, cfg: &GdConfig) -> Result<f64> {
    let probs = trained_probs(z, train, xi, cfg)?;
    Ok(kind.from_probs(&probs, z.y))
}

pub fn nc_conventional(z: &Sample, train: &[Sample], xi: &ParamVector, cfg: &GdConfig) -> Result<f64> {
    nc_score(&ScoreKind::ConventionalLogloss, z, train, xi, cfg)
}

pub fn nc_adaptive(z: &Sample, train: &[Sample], xi: &ParamVector, cfg: &GdConfig) -> Result<f64> {
    nc_score(&ScoreKind::Adaptive, z, train, xi, cfg)
}

pub fn nc_adaptive_maxform_oracle(z: &Sample, train: &[Sample], xi: &ParamVector, cfg: &GdConfig) -> Result<f64> {
    let probs = trained_probs(z, train, xi, cfg)?;
    Ok(adaptive_maxform_from_probs(&probs, z.y))
}

pub fn nc_soft_adaptive(
    z: &Sample,
    train: &[Sample],
    xi: &ParamVector,
    cfg: &GdConfig,
    smoothing: &SmoothingParams,
) -> Result<f64> {
    smoothing.validate()?;
    nc_score(&ScoreKind::SoftAdaptive { smoothing: *smoothing }, z, train, xi, cfg)
}
