//! Soft inefficiency of XB-CP and meta-learning of the training
//! initialization.
//!
//! The soft inefficiency replaces each hard step of the XB-CP set size by a
//! smooth one: the minimum over fold models by a softmin, the quantile of
//! score differences by a soft quantile and the inclusion indicator by a
//! sigmoid. Evaluated on a [`Tape`], the whole pipeline, including the
//! unrolled inner gradient descent, is differentiated with respect to the
//! initialization.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::numerics::{
    adam_update, gd_steps, probabilities, sgd_update, value_and_grad, AdamConfig, AdamState, Arith,
    Eval, GdConfig, Layout, ParamVector,
};
use crate::predictors::{AlphaBudget, FoldPartition, XbFit};
use crate::quantiles::{smooth_indicator_with, soft_quantile_with, softmin_with, SmoothingParams};
use crate::rng::SeedTree;
use crate::scores::{score_with, ScoreKind};

/// One realization: a dataset and a held-out test pair from the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPair {
    pub data: Dataset,
    pub test: Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTask {
    pub task_id: usize,
    pub pairs: Vec<MetaPair>,
}

/// Realizations from `T` meta-training tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDataset {
    pub input_dim: usize,
    pub classes: usize,
    pub tasks: Vec<MetaTask>,
}

impl MetaDataset {
    /// Common dataset size `N`.
    pub fn n(&self) -> usize {
        self.tasks
            .first()
            .and_then(|t| t.pairs.first())
            .map_or(0, |p| p.data.len())
    }

    pub fn min_pairs(&self) -> usize {
        self.tasks.iter().map(|t| t.pairs.len()).min().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::EmptyInput("meta-dataset"));
        }
        let n = self.n();
        for t in &self.tasks {
            if t.pairs.is_empty() {
                return Err(Error::EmptyInput("task realizations"));
            }
            for p in &t.pairs {
                if p.data.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: p.data.len(),
                    });
                }
                for s in p.data.iter().chain(std::iter::once(&p.test)) {
                    if s.x.len() != self.input_dim {
                        return Err(Error::DimensionMismatch {
                            expected: self.input_dim,
                            actual: s.x.len(),
                        });
                    }
                    if s.y >= self.classes {
                        return Err(Error::invalid("label", format!("{} >= {} classes", s.y, self.classes)));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    Sgd,
    #[default]
    Adam,
}

/// Early stop when the mean loss of the last `window` iterations differs
/// from the mean of the window before it by less than `tolerance`
/// (relative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plateau {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            window: 50,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub alpha: f64,
    /// Number of folds.
    pub k: usize,
    pub score: ScoreKind,
    pub smoothing: SmoothingParams,
    /// Inner training during meta-training.
    pub inner: GdConfig,
    /// Inner training when the learned initialization is deployed.
    pub inner_test: GdConfig,
    /// Outer step size.
    pub kappa: f64,
    pub task_batch: usize,
    pub pair_batch: usize,
    pub optimizer: OuterOptimizer,
    pub max_iters: usize,
    pub hidden: Vec<usize>,
    pub plateau: Option<Plateau>,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            k: 9,
            score: ScoreKind::ConventionalLogloss,
            smoothing: SmoothingParams::default(),
            inner: GdConfig::default(),
            inner_test: GdConfig::meta_test(),
            kappa: 1e-3,
            task_batch: 10,
            pair_batch: 10,
            optimizer: OuterOptimizer::Adam,
            max_iters: 500,
            hidden: vec![32, 32],
            plateau: None,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        self.score.validate()?;
        self.inner.validate()?;
        self.inner_test.validate()?;
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid("kappa", "must be a finite non-negative number"));
        }
        if self.task_batch == 0 || self.pair_batch == 0 {
            return Err(Error::invalid("batch", "task_batch and pair_batch must be positive"));
        }
        if let Some(p) = self.plateau {
            if p.window == 0 || p.tolerance.is_nan() || p.tolerance < 0.0 {
                return Err(Error::invalid("plateau", "window must be positive and tolerance non-negative"));
            }
        }
        Ok(())
    }

    /// Checks that the configuration fits `meta`.
    pub fn validate_for(&self, meta: &MetaDataset) -> Result<()> {
        self.validate()?;
        meta.validate()?;
        AlphaBudget::for_xb(self.alpha, meta.n(), self.k)?;
        if self.task_batch > meta.tasks.len() {
            return Err(Error::invalid(
                "task_batch",
                format!("{} exceeds the {} available tasks", self.task_batch, meta.tasks.len()),
            ));
        }
        if self.pair_batch > meta.min_pairs() {
            return Err(Error::invalid(
                "pair_batch",
                format!("{} exceeds the {} realizations per task", self.pair_batch, meta.min_pairs()),
            ));
        }
        Ok(())
    }

    pub fn layout(&self, meta: &MetaDataset) -> Result<Layout> {
        Layout::new(meta.input_dim, self.hidden.clone(), meta.classes)
    }

    /// Random initialization shared by meta-training and the random-init
    /// baseline.
    pub fn initial_xi(&self, meta: &MetaDataset) -> Result<ParamVector> {
        self.initial_xi_for(meta.input_dim, meta.classes)
    }

    /// [`MetaConfig::initial_xi`] without a meta-dataset at hand.
    pub fn initial_xi_for(&self, input_dim: usize, classes: usize) -> Result<ParamVector> {
        let layout = Layout::new(input_dim, self.hidden.clone(), classes)?;
        Ok(ParamVector::random_init(layout, SeedTree::new(self.seed).child("init")))
    }
}

/// Soft set size computed from scores: `cal[i]` is the held-out score of
/// calibration point `i` and `cand[k][y]` the score of label `y` under fold
/// model `k`.
pub fn soft_inefficiency_from_scores_with<A: Arith>(
    ops: &mut A,
    cal: &[A::V],
    cand: &[Vec<A::V>],
    alpha_prime: f64,
    smoothing: &SmoothingParams,
) -> A::V {
    let classes = cand[0].len();
    let terms: Vec<A::V> = (0..classes)
        .map(|y| {
            let fold_scores: Vec<A::V> = cand.iter().map(|c| c[y]).collect();
            let m = softmin_with(ops, &fold_scores, smoothing.c_s);
            let diffs: Vec<A::V> = cal.iter().map(|&s| ops.sub(s, m)).collect();
            let q = soft_quantile_with(ops, &diffs, alpha_prime, smoothing.c_q, smoothing.delta);
            smooth_indicator_with(ops, q, smoothing.c_sigma)
        })
        .collect();
    ops.sum(&terms)
}

pub fn soft_inefficiency_from_scores(
    cal: &[f64],
    cand: &[Vec<f64>],
    alpha_prime: f64,
    smoothing: &SmoothingParams,
) -> f64 {
    soft_inefficiency_from_scores_with(&mut Eval, cal, cand, alpha_prime, smoothing)
}

/// Hard counterpart of [`soft_inefficiency_from_scores`].
pub fn hard_inefficiency_from_scores(cal: &[f64], cand: &[Vec<f64>], budget: &AlphaBudget) -> usize {
    let classes = cand[0].len();
    let mins: Vec<f64> = (0..classes)
        .map(|y| cand.iter().map(|c| c[y]).fold(f64::INFINITY, f64::min))
        .collect();
    crate::predictors::xb_set_from_scores(&mins, cal, budget).len()
}

/// Scores feeding the inefficiency, computed in any backend.
pub(crate) struct InstanceScores<V> {
    pub cal: Vec<V>,
    pub cand: Vec<Vec<V>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn instance_scores<A: Arith>(
    ops: &mut A,
    layout: &Layout,
    xi: &[A::V],
    x: &[f64],
    data: &Dataset,
    partition: &FoldPartition,
    score: &ScoreKind,
    cfg: &GdConfig,
) -> Result<InstanceScores<A::V>> {
    if partition.n() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: partition.n(),
            actual: data.len(),
        });
    }
    let mut fold_params = Vec::with_capacity(partition.k());
    for j in 0..partition.k() {
        let train = data.without(partition.fold(j));
        fold_params.push(gd_steps(ops, layout, xi.to_vec(), &train, cfg)?);
    }
    let mut cal = Vec::with_capacity(data.len());
    for (i, z) in data.iter().enumerate() {
        let p = probabilities(ops, layout, &fold_params[partition.fold_of(i)], &z.x)?;
        cal.push(score_with(ops, score, &p, z.y));
    }
    let mut cand = Vec::with_capacity(partition.k());
    for phi in &fold_params {
        let p = probabilities(ops, layout, phi, x)?;
        cand.push((0..layout.classes).map(|y| score_with(ops, score, &p, y)).collect());
    }
    Ok(InstanceScores { cal, cand })
}

/// Everything that specifies one soft-inefficiency evaluation besides the
/// initialization.
#[derive(Debug, Clone, Copy)]
pub struct SoftProblem<'a> {
    pub x: &'a [f64],
    pub data: &'a Dataset,
    pub partition: &'a FoldPartition,
    pub alpha: f64,
    pub score: &'a ScoreKind,
    pub smoothing: &'a SmoothingParams,
    pub cfg: &'a GdConfig,
}

impl SoftProblem<'_> {
    fn budget(&self) -> Result<AlphaBudget> {
        AlphaBudget::for_xb(self.alpha, self.data.len(), self.partition.k())
    }

    fn eval_with<A: Arith>(&self, ops: &mut A, layout: &Layout, xi: &[A::V], alpha_prime: f64) -> Result<A::V> {
        // Training uses the smooth adaptive score in place of the hard one.
        let score = self.score.differentiable(*self.smoothing);
        let s = instance_scores(ops, layout, xi, self.x, self.data, self.partition, &score, self.cfg)?;
        Ok(soft_inefficiency_from_scores_with(ops, &s.cal, &s.cand, alpha_prime, self.smoothing))
    }

    pub fn value(&self, xi: &ParamVector) -> Result<f64> {
        let b = self.budget()?;
        self.eval_with(&mut Eval, xi.layout(), xi.values(), b.alpha_prime)
    }

    pub fn value_and_grad(&self, xi: &ParamVector) -> Result<(f64, Vec<f64>)> {
        let b = self.budget()?;
        let layout = xi.layout();
        value_and_grad(|t, v| self.eval_with(t, layout, v, b.alpha_prime), xi.values())
    }
}

/// Soft inefficiency of K-fold XB-CP at input `x`.
#[allow(clippy::too_many_arguments)]
pub fn soft_inefficiency(
    x: &[f64],
    data: &Dataset,
    xi: &ParamVector,
    alpha: f64,
    partition: &FoldPartition,
    score: &ScoreKind,
    smoothing: &SmoothingParams,
    cfg: &GdConfig,
) -> Result<f64> {
    SoftProblem {
        x,
        data,
        partition,
        alpha,
        score,
        smoothing,
        cfg,
    }
    .value(xi)
}

/// Size of the XB-CP set at input `x`.
pub fn hard_inefficiency(
    x: &[f64],
    data: &Dataset,
    xi: &ParamVector,
    alpha: f64,
    partition: &FoldPartition,
    score: &ScoreKind,
    cfg: &GdConfig,
) -> Result<usize> {
    let budget = AlphaBudget::for_xb(alpha, data.len(), partition.k())?;
    Ok(XbFit::fit(data, xi, partition, score, cfg)?.predict(x, &budget)?.len())
}

/// Fold partition used for realization `j` of task `t` at outer iteration
/// `iteration`.
pub fn training_partition(seed: u64, iteration: usize, t: usize, j: usize, n: usize, k: usize) -> Result<FoldPartition> {
    let s = SeedTree::new(seed)
        .child("folds")
        .index(iteration as u64)
        .index(t as u64)
        .index(j as u64);
    FoldPartition::new(n, k, s)
}

/// Partition used by [`meta_objective`] for realization `j` of task `t`.
pub fn objective_partition(seed: u64, t: usize, j: usize, n: usize, k: usize) -> Result<FoldPartition> {
    let s = SeedTree::new(seed).child("objective").index(t as u64).index(j as u64);
    FoldPartition::new(n, k, s)
}

/// Mean soft inefficiency over every realization of every task.
pub fn meta_objective(xi: &ParamVector, meta: &MetaDataset, cfg: &MetaConfig) -> Result<f64> {
    cfg.validate()?;
    meta.validate()?;
    let n = meta.n();
    let per_task = meta
        .tasks
        .par_iter()
        .enumerate()
        .map(|(t, task)| {
            let vals = task
                .pairs
                .iter()
                .enumerate()
                .map(|(j, pair)| {
                    let part = objective_partition(cfg.seed, t, j, n, cfg.k)?;
                    problem(pair, &part, cfg).value(xi)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

fn problem<'a>(pair: &'a MetaPair, part: &'a FoldPartition, cfg: &'a MetaConfig) -> SoftProblem<'a> {
    SoftProblem {
        x: &pair.test.x,
        data: &pair.data,
        partition: part,
        alpha: cfg.alpha,
        score: &cfg.score,
        smoothing: &cfg.smoothing,
        cfg: &cfg.inner,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub tasks: Vec<usize>,
    /// Mean over the sampled tasks of the minibatch soft inefficiency.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutput {
    pub xi: ParamVector,
    pub trace: Vec<TraceRow>,
    pub stopped_early: bool,
}

/// Tasks and realizations drawn at outer iteration `iteration`: sorted task
/// indices, each with sorted realization indices.
pub fn minibatch(meta: &MetaDataset, cfg: &MetaConfig, iteration: usize) -> Vec<(usize, Vec<usize>)> {
    let s = SeedTree::new(cfg.seed).child("minibatch").index(iteration as u64);
    let mut tasks = sample(&mut s.child("tasks").rng(), meta.tasks.len(), cfg.task_batch).into_vec();
    tasks.sort_unstable();
    tasks
        .into_iter()
        .map(|t| {
            let m = meta.tasks[t].pairs.len();
            let mut js = sample(&mut s.child("pairs").index(t as u64).rng(), m, cfg.pair_batch).into_vec();
            js.sort_unstable();
            (t, js)
        })
        .collect()
}

/// Gradient of the minibatch loss at one outer iteration: the sum over
/// sampled tasks of each task's mean gradient. Also returns the mean task
/// loss.
pub fn minibatch_gradient(
    xi: &ParamVector,
    meta: &MetaDataset,
    cfg: &MetaConfig,
    iteration: usize,
    batch: &[(usize, Vec<usize>)],
) -> Result<(f64, Vec<f64>)> {
    let n = meta.n();
    let jobs: Vec<(usize, usize)> = batch
        .iter()
        .flat_map(|(t, js)| js.iter().map(move |&j| (*t, j)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(t, j)| {
            let part = training_partition(cfg.seed, iteration, t, j, n, cfg.k)?;
            problem(&meta.tasks[t].pairs[j], &part, cfg).value_and_grad(xi)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grad = vec![0.0; xi.len()];
    let mut loss = 0.0;
    let mut it = results.into_iter();
    for (_, js) in batch {
        let w = 1.0 / js.len() as f64;
        for _ in js {
            let (v, g) = it.next().expect("one result per job");
            loss += w * v;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += w * b;
            }
        }
    }
    Ok((loss / batch.len() as f64, grad))
}

/// Meta-training from the configured random initialization.
pub fn meta_train(meta: &MetaDataset, cfg: &MetaConfig) -> Result<MetaTrainOutput> {
    cfg.validate_for(meta)?;
    let init = cfg.initial_xi(meta)?;
    meta_train_from(init, meta, cfg)
}

/// Meta-training from a given initialization.
pub fn meta_train_from(init: ParamVector, meta: &MetaDataset, cfg: &MetaConfig) -> Result<MetaTrainOutput> {
    cfg.validate_for(meta)?;
    let mut xi = init;
    let mut adam = AdamState::zeros(xi.len());
    let adam_cfg = AdamConfig {
        learning_rate: cfg.kappa,
        ..AdamConfig::default()
    };
    let mut trace = Vec::new();
    let mut stopped_early = false;
    for iteration in 0..cfg.max_iters {
        let batch = minibatch(meta, cfg, iteration);
        let (loss, grad) = minibatch_gradient(&xi, meta, cfg, iteration, &batch).map_err(|e| {
            if e.is_numeric() {
                Error::MetaDiverged {
                    iteration,
                    reason: e.to_string(),
                }
            } else {
                e.context(format!("meta-training iteration {iteration}"))
            }
        })?;
        let next = match cfg.optimizer {
            OuterOptimizer::Sgd => sgd_update(xi.values(), &grad, cfg.kappa),
            OuterOptimizer::Adam => {
                let (p, s) = adam_update(xi.values(), &grad, &adam, &adam_cfg);
                adam = s;
                p
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::MetaDiverged {
                iteration,
                reason: "non-finite parameters after the outer update".into(),
            });
        }
        xi = xi.with_values(next)?;
        trace.push(TraceRow {
            iteration,
            tasks: batch.iter().map(|(t, _)| meta.tasks[*t].task_id).collect(),
            loss,
        });
        if let Some(p) = cfg.plateau {
            if plateaued(&trace, p) {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(MetaTrainOutput {
        xi,
        trace,
        stopped_early,
    })
}

fn plateaued(trace: &[TraceRow], p: Plateau) -> bool {
    if trace.len() < 2 * p.window {
        return false;
    }
    let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    let end = trace.len();
    let last = mean(&trace[end - p.window..]);
    let prev = mean(&trace[end - 2 * p.window..end - p.window]);
    (last - prev).abs() <= p.tolerance * prev.abs().max(f64::MIN_POSITIVE)
}
