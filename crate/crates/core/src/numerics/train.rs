//! Deterministic full-batch gradient descent on the mean log-loss.
//!
//! This is the training algorithm behind every nonconformity score: its
//! output depends on the training set only through a mean over examples, so
//! it is invariant to reordering up to floating-point reassociation. A
//! stochastic training algorithm would turn each score into an expectation;
//! an ensemble version would average [`gd_steps`] over several runs.

use serde::{Deserialize, Serialize};

use super::mlp::{loss_gradient, Layout, ParamVector};
use super::tape::{Arith, Eval};
use crate::data::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Treat the inner gradients as constants when differentiating through
    /// training (first-order approximation).
    #[serde(default)]
    pub first_order: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            steps: 1,
            learning_rate: 0.1,
            first_order: false,
        }
    }
}

impl GdConfig {
    pub fn new(steps: usize, learning_rate: f64) -> Result<Self> {
        let cfg = Self {
            steps,
            learning_rate,
            first_order: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Five steps, the default used when deploying a learned initialization.
    pub fn meta_test() -> Self {
        Self {
            steps: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be a finite non-negative number"));
        }
        Ok(())
    }
}

/// Runs `cfg.steps` gradient steps from `init` in backend `ops`.
pub fn gd_steps<A: Arith>(
    ops: &mut A,
    layout: &Layout,
    init: Vec<A::V>,
    data: &[Sample],
    cfg: &GdConfig,
) -> Result<Vec<A::V>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let lr = cfg.learning_rate;
    let mut params = init;
    for step in 0..cfg.steps {
        if cfg.first_order {
            let values: Vec<f64> = params.iter().map(|&p| ops.value(p)).collect();
            let (loss, g) = loss_gradient(&mut Eval, layout, &values, data)?;
            check_loss(step, loss)?;
            params = params
                .into_iter()
                .zip(g)
                .map(|(p, gi)| ops.offset(p, -lr * gi))
                .collect();
        } else {
            let (loss, g) = loss_gradient(ops, layout, &params, data)?;
            check_loss(step, loss)?;
            params = params
                .into_iter()
                .zip(g)
                .map(|(p, gi)| ops.lin2(p, 1.0, gi, -lr))
                .collect();
        }
    }
    if params.iter().any(|&p| !ops.value(p).is_finite()) {
        return Err(Error::TrainingDiverged {
            step: cfg.steps,
            loss: f64::NAN,
        });
    }
    Ok(params)
}

fn check_loss(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged { step, loss })
    }
}

/// Trains a classifier on `data` starting from the initialization `xi`.
pub fn gd_train(data: &[Sample], xi: &ParamVector, cfg: &GdConfig) -> Result<ParamVector> {
    cfg.validate()?;
    let out = gd_steps(&mut Eval, xi.layout(), xi.values().to_vec(), data, cfg)?;
    ParamVector::new(xi.layout().clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn toy_data() -> Vec<Sample> {
        vec![
            Sample::new(vec![0.5, -1.0], 0),
            Sample::new(vec![1.5, 0.3], 1),
            Sample::new(vec![-0.7, 0.9], 2),
            Sample::new(vec![0.1, 0.1], 1),
        ]
    }

    #[test]
    fn zero_learning_rate_returns_init() {
        let layout = Layout::new(2, vec![4], 3).unwrap();
        let xi = ParamVector::random_init(layout, SeedTree::new(0));
        let cfg = GdConfig::new(3, 0.0).unwrap();
        assert_eq!(gd_train(&toy_data(), &xi, &cfg).unwrap(), xi);
    }

    #[test]
    fn single_step_on_linear_model_matches_hand_computation() {
        // Zero init: p = (0.5, 0.5); label 0 at x = 2 gives grad_W = (-1, 1),
        // grad_b = (-0.5, 0.5).
        let layout = Layout::new(1, vec![], 2).unwrap();
        let xi = ParamVector::zeros(layout);
        let data = vec![Sample::new(vec![2.0], 0)];
        let out = gd_train(&data, &xi, &GdConfig::new(1, 0.1).unwrap()).unwrap();
        assert_eq!(out.values(), &[0.1, -0.1, 0.05, -0.05]);
    }

    #[test]
    fn permutation_invariance() {
        let layout = Layout::new(2, vec![8, 8], 3).unwrap();
        let xi = ParamVector::random_init(layout, SeedTree::new(9));
        let data = toy_data();
        let cfg = GdConfig::new(5, 0.1).unwrap();
        let a = gd_train(&data, &xi, &cfg).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let b = gd_train(&rev, &xi, &cfg).unwrap();
        let sup = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 1e-6, "sup-norm {sup}");
    }

    #[test]
    fn training_reduces_loss() {
        let layout = Layout::new(2, vec![8], 3).unwrap();
        let xi = ParamVector::random_init(layout.clone(), SeedTree::new(4));
        let data = toy_data();
        let before = crate::numerics::mean_log_loss(&layout, xi.values(), &data).unwrap();
        let out = gd_train(&data, &xi, &GdConfig::new(20, 0.1).unwrap()).unwrap();
        let after = crate::numerics::mean_log_loss(&layout, out.values(), &data).unwrap();
        assert!(after < before);
    }

    #[test]
    fn divergence_reports_step() {
        let layout = Layout::new(2, vec![4], 3).unwrap();
        let xi = ParamVector::random_init(layout, SeedTree::new(1));
        let cfg = GdConfig::new(50, 1e300).unwrap();
        match gd_train(&toy_data(), &xi, &cfg) {
            Err(Error::TrainingDiverged { step, .. }) => assert!(step <= 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let layout = Layout::new(2, vec![4], 3).unwrap();
        let xi = ParamVector::zeros(layout);
        assert!(matches!(
            gd_train(&[], &xi, &GdConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn invalid_configs() {
        assert!(GdConfig::new(0, 0.1).is_err());
        assert!(GdConfig::new(1, -0.1).is_err());
        assert!(GdConfig::new(1, f64::NAN).is_err());
    }
}
