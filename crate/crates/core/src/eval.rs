//! Monte Carlo evaluation of set predictors and the strange-points audit.
//!
//! Draws are addressed by seed paths derived from the task seed, the
//! dataset index and the test index, never by predictor, so two predictors
//! evaluated with the same seed see identical datasets, test points and fold
//! partitions (common random numbers).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{gd_train, mlp_forward, GdConfig, ParamVector};
use crate::predictors::{
    default_vb_split, greedy_set, oracle_predict, AlphaBudget, FoldPartition, PredictionSet, VbFit,
    XbFit,
};
use crate::rng::SeedTree;
use crate::scores::ScoreKind;
use crate::tasks::{sample_dataset, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    /// K-fold XB-CP.
    Xb { alpha: f64, k: usize, score: ScoreKind },
    /// VB-CP training on the first `n_tr` points (default `ceil(N/2)`).
    Vb {
        alpha: f64,
        #[serde(default)]
        n_tr: Option<usize>,
        score: ScoreKind,
    },
    /// Model-mass set of the classifier trained on all points.
    Naive { alpha: f64 },
    /// Ground-truth smallest set.
    Oracle { alpha: f64 },
    /// Every label.
    FullSet,
}

impl PredictorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorSpec::Xb { .. } => "xb",
            PredictorSpec::Vb { .. } => "vb",
            PredictorSpec::Naive { .. } => "naive",
            PredictorSpec::Oracle { .. } => "oracle",
            PredictorSpec::FullSet => "full_set",
        }
    }

    fn needs_model(&self) -> bool {
        matches!(
            self,
            PredictorSpec::Xb { .. } | PredictorSpec::Vb { .. } | PredictorSpec::Naive { .. }
        )
    }

    /// Fails fast on parameters that are infeasible for datasets of size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            PredictorSpec::Xb { alpha, k, score } => {
                score.validate()?;
                AlphaBudget::for_xb(*alpha, n, *k).map(|_| ())
            }
            PredictorSpec::Vb { alpha, n_tr, score } => {
                score.validate()?;
                let n_tr = n_tr.unwrap_or_else(|| default_vb_split(n));
                if n_tr == 0 || n_tr >= n {
                    return Err(Error::invalid("n_tr", format!("{n_tr} must lie in 1..{n}")));
                }
                AlphaBudget::for_vb(*alpha, n - n_tr).map(|_| ())
            }
            PredictorSpec::Naive { alpha } => {
                if (0.0..=1.0).contains(alpha) {
                    Ok(())
                } else {
                    Err(Error::invalid("alpha", format!("{alpha} is not in [0, 1]")))
                }
            }
            PredictorSpec::Oracle { alpha } => {
                if (0.0..1.0).contains(alpha) {
                    Ok(())
                } else {
                    Err(Error::invalid("alpha", format!("{alpha} is not in [0, 1)")))
                }
            }
            PredictorSpec::FullSet => Ok(()),
        }
    }
}

/// A predictor specification together with the classifier it trains.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub spec: PredictorSpec,
    /// Training initialization; required by model-based predictors.
    pub xi: Option<ParamVector>,
    pub cfg: GdConfig,
}

impl Predictor {
    pub fn new(spec: PredictorSpec, xi: Option<ParamVector>, cfg: GdConfig) -> Self {
        Self { spec, xi, cfg }
    }

    fn xi(&self) -> Result<&ParamVector> {
        self.xi
            .as_ref()
            .ok_or_else(|| Error::Config(format!("predictor `{}` needs an initialization", self.spec.name())))
    }

    pub fn validate(&self, task: &TaskSpec, n: usize) -> Result<()> {
        self.spec.validate(n)?;
        self.cfg.validate()?;
        if self.spec.needs_model() {
            let layout = self.xi()?.layout();
            if layout.input_dim != task.input_dim() || layout.classes != task.classes() {
                return Err(Error::Config(format!(
                    "initialization expects {} inputs and {} classes, task has {} and {}",
                    layout.input_dim,
                    layout.classes,
                    task.input_dim(),
                    task.classes()
                )));
            }
        }
        Ok(())
    }

    fn fit(&self, data: &Dataset, classes: usize, folds: SeedTree) -> Result<Fitted> {
        Ok(match &self.spec {
            PredictorSpec::Xb { alpha, k, score } => {
                let budget = AlphaBudget::for_xb(*alpha, data.len(), *k)?;
                let part = FoldPartition::new(data.len(), *k, folds)?;
                Fitted::Xb(XbFit::fit(data, self.xi()?, &part, score, &self.cfg)?, budget)
            }
            PredictorSpec::Vb { alpha, n_tr, score } => {
                let n_tr = n_tr.unwrap_or_else(|| default_vb_split(data.len()));
                let budget = AlphaBudget::for_vb(*alpha, data.len() - n_tr)?;
                Fitted::Vb(VbFit::fit(data, self.xi()?, n_tr, score, &self.cfg)?, budget)
            }
            PredictorSpec::Naive { alpha } => Fitted::Naive(gd_train(data.samples(), self.xi()?, &self.cfg)?, *alpha),
            PredictorSpec::Oracle { alpha } => Fitted::Oracle(*alpha),
            PredictorSpec::FullSet => Fitted::Full(classes),
        })
    }
}

enum Fitted {
    Xb(XbFit, AlphaBudget),
    Vb(VbFit, AlphaBudget),
    Naive(ParamVector, f64),
    Oracle(f64),
    Full(usize),
}

impl Fitted {
    fn predict(&self, task: &TaskSpec, x: &[f64]) -> Result<PredictionSet> {
        match self {
            Fitted::Xb(fit, b) => fit.predict(x, b),
            Fitted::Vb(fit, b) => fit.predict(x, b),
            Fitted::Naive(model, alpha) => Ok(greedy_set(&mlp_forward(x, model)?, *alpha)),
            Fitted::Oracle(alpha) => oracle_predict(&task.conditional(x)?, *alpha),
            Fitted::Full(c) => Ok(PredictionSet::full(*c)),
        }
    }
}

/// Number of datasets per task and test draws per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBudget {
    pub datasets: usize,
    pub tests: usize,
}

impl Default for EvalBudget {
    fn default() -> Self {
        Self {
            datasets: 200,
            tests: 100,
        }
    }
}

impl std::str::FromStr for EvalBudget {
    type Err = Error;

    /// Parses `<datasets>x<tests>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("budget", format!("`{s}` is not of the form <datasets>x<tests>"));
        let (d, t) = s.split_once('x').ok_or_else(bad)?;
        let b = Self {
            datasets: d.trim().parse().map_err(|_| bad())?,
            tests: t.trim().parse().map_err(|_| bad())?,
        };
        b.validate()?;
        Ok(b)
    }
}

impl EvalBudget {
    pub fn validate(&self) -> Result<()> {
        if self.datasets == 0 || self.tests == 0 {
            return Err(Error::invalid("budget", "datasets and tests must be positive"));
        }
        Ok(())
    }

    pub fn trials(&self) -> usize {
        self.datasets * self.tests
    }
}

/// Coverage and set size over one group of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: String,
    pub trials: usize,
    /// `None` when no trial fell in the bucket.
    pub coverage: Option<f64>,
    pub coverage_se: Option<f64>,
    pub inefficiency: Option<f64>,
    pub inefficiency_se: Option<f64>,
}

impl BucketReport {
    fn from_trials(bucket: String, trials: &[Trial]) -> Self {
        let n = trials.len();
        if n == 0 {
            return Self {
                bucket,
                trials: 0,
                coverage: None,
                coverage_se: None,
                inefficiency: None,
                inefficiency_se: None,
            };
        }
        let nf = n as f64;
        let cov = trials.iter().filter(|t| t.covered).count() as f64 / nf;
        let mean = trials.iter().map(|t| t.size as f64).sum::<f64>() / nf;
        let var = if n > 1 {
            trials.iter().map(|t| (t.size as f64 - mean).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        Self {
            bucket,
            trials: n,
            coverage: Some(cov),
            coverage_se: Some((cov * (1.0 - cov) / nf).sqrt()),
            inefficiency: Some(mean),
            inefficiency_se: Some((var / nf).sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: usize,
    pub task_seed: u64,
    pub marginal: BucketReport,
    /// Filled only for conditional evaluations.
    pub buckets: Vec<BucketReport>,
}

impl TaskReport {
    pub fn coverage(&self) -> f64 {
        self.marginal.coverage.unwrap_or(f64::NAN)
    }

    pub fn inefficiency(&self) -> f64 {
        self.marginal.inefficiency.unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

impl Percentiles {
    /// Linearly interpolated percentiles of `values`.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        Self {
            p25: percentile(&v, 0.25),
            p50: percentile(&v, 0.5),
            p75: percentile(&v, 0.75),
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tasks: usize,
    pub trials_per_task: usize,
    pub mean_coverage: f64,
    pub coverage: Percentiles,
    pub mean_inefficiency: f64,
    pub inefficiency: Percentiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: PredictorSpec,
    pub seed: u64,
    pub budget: EvalBudget,
    pub tasks: Vec<TaskReport>,
    pub summary: EvalSummary,
}

impl EvalReport {
    fn new(predictor: PredictorSpec, seed: u64, budget: EvalBudget, tasks: Vec<TaskReport>) -> Self {
        let cov: Vec<f64> = tasks.iter().map(TaskReport::coverage).collect();
        let ineff: Vec<f64> = tasks.iter().map(TaskReport::inefficiency).collect();
        let summary = EvalSummary {
            tasks: tasks.len(),
            trials_per_task: budget.trials(),
            mean_coverage: mean(&cov),
            coverage: Percentiles::of(&cov),
            mean_inefficiency: mean(&ineff),
            inefficiency: Percentiles::of(&ineff),
        };
        Self {
            predictor,
            seed,
            budget,
            tasks,
            summary,
        }
    }

    /// Trials pooled over tasks for the bucket named `name`.
    pub fn pooled_bucket(&self, name: &str) -> Option<(usize, f64)> {
        let mut trials = 0;
        let mut covered = 0.0;
        for t in &self.tasks {
            if let Some(b) = t.buckets.iter().find(|b| b.bucket == name) {
                if let Some(c) = b.coverage {
                    trials += b.trials;
                    covered += c * b.trials as f64;
                }
            }
        }
        (trials > 0).then(|| (trials, covered / trials as f64))
    }

    /// One row per task and bucket; the marginal row has bucket `all`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "task",
            "task_seed",
            "bucket",
            "trials",
            "coverage",
            "coverage_se",
            "inefficiency",
            "inefficiency_se",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for t in &self.tasks {
            for b in std::iter::once(&t.marginal).chain(&t.buckets) {
                w.write_record([
                    t.task.to_string(),
                    t.task_seed.to_string(),
                    b.bucket.clone(),
                    b.trials.to_string(),
                    opt(b.coverage),
                    opt(b.coverage_se),
                    opt(b.inefficiency),
                    opt(b.inefficiency_se),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Trial {
    covered: bool,
    size: usize,
    bucket: usize,
}

/// Root of the draws for one task.
pub fn eval_stream(seed: u64, task: &TaskSpec) -> SeedTree {
    SeedTree::new(seed).child("eval").index(task.seed())
}

/// Datasets of size `n` drawn for `task`; the `d`-th is the one every
/// predictor sees at dataset index `d`.
pub fn eval_dataset(task: &TaskSpec, n: usize, seed: u64, d: usize) -> Dataset {
    sample_dataset(task, n, eval_stream(seed, task).child("dataset").index(d as u64))
}

fn run_task(
    pred: &Predictor,
    task: &TaskSpec,
    n: usize,
    budget: EvalBudget,
    seed: u64,
) -> Result<Vec<Trial>> {
    pred.validate(task, n)?;
    budget.validate()?;
    let root = eval_stream(seed, task);
    let per_dataset = (0..budget.datasets)
        .into_par_iter()
        .map(|d| {
            let ctx = |e: Error, what: String| e.context(format!("task seed {}, dataset {d}{what}", task.seed()));
            let data = eval_dataset(task, n, seed, d);
            let fitted = pred
                .fit(&data, task.classes(), root.child("folds").index(d as u64))
                .map_err(|e| ctx(e, String::new()))?;
            let mut rng = root.child("test").index(d as u64).rng();
            (0..budget.tests)
                .map(|i| {
                    let z = task.sample(&mut rng);
                    let set = fitted
                        .predict(task, &z.x)
                        .map_err(|e| ctx(e, format!(", test {i}")))?;
                    Ok(Trial {
                        covered: set.contains(z.y),
                        size: set.len(),
                        bucket: task.bucket(&z.x)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_dataset.concat())
}

fn task_report(index: usize, task: &TaskSpec, trials: &[Trial], conditional: bool) -> TaskReport {
    let buckets = if conditional {
        task.bucket_names()
            .into_iter()
            .enumerate()
            .map(|(b, name)| {
                let sel: Vec<Trial> = trials.iter().copied().filter(|t| t.bucket == b).collect();
                BucketReport::from_trials(name, &sel)
            })
            .collect()
    } else {
        Vec::new()
    };
    TaskReport {
        task: index,
        task_seed: task.seed(),
        marginal: BucketReport::from_trials("all".into(), trials),
        buckets,
    }
}

/// Coverage and inefficiency of `pred` on one task.
pub fn evaluate_predictor(pred: &Predictor, task: &TaskSpec, n: usize, budget: EvalBudget, seed: u64) -> Result<TaskReport> {
    Ok(task_report(0, task, &run_task(pred, task, n, budget, seed)?, false))
}

/// As [`evaluate_predictor`] with per-bucket breakdowns.
pub fn evaluate_conditional(pred: &Predictor, task: &TaskSpec, n: usize, budget: EvalBudget, seed: u64) -> Result<TaskReport> {
    Ok(task_report(0, task, &run_task(pred, task, n, budget, seed)?, true))
}

/// Evaluation over several tasks.
pub fn evaluate_tasks(
    pred: &Predictor,
    tasks: &[TaskSpec],
    n: usize,
    budget: EvalBudget,
    seed: u64,
    conditional: bool,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("evaluation tasks"));
    }
    let reports = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Ok(task_report(i, t, &run_task(pred, t, n, budget, seed)?, conditional)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(pred.spec.clone(), seed, budget, reports))
}

/// Paired per-task differences `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub rows: Vec<ComparisonRow>,
    pub coverage_diff: Percentiles,
    pub inefficiency_diff: Percentiles,
    /// Median of `b` inefficiency over median of `a` inefficiency.
    pub median_inefficiency_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: usize,
    pub task_seed: u64,
    pub coverage_a: f64,
    pub coverage_b: f64,
    pub coverage_diff: f64,
    pub inefficiency_a: f64,
    pub inefficiency_b: f64,
    pub inefficiency_diff: f64,
}

pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    if a.seed != b.seed || a.budget != b.budget || a.tasks.len() != b.tasks.len() {
        return Err(Error::Config(format!(
            "reports are not paired: seeds {} / {}, budgets {:?} / {:?}, {} / {} tasks",
            a.seed,
            b.seed,
            a.budget,
            b.budget,
            a.tasks.len(),
            b.tasks.len()
        )));
    }
    let rows = a
        .tasks
        .iter()
        .zip(&b.tasks)
        .map(|(ta, tb)| {
            if ta.task_seed != tb.task_seed {
                return Err(Error::Config(format!(
                    "task {} has seed {} in one report and {} in the other",
                    ta.task, ta.task_seed, tb.task_seed
                )));
            }
            Ok(ComparisonRow {
                task: ta.task,
                task_seed: ta.task_seed,
                coverage_a: ta.coverage(),
                coverage_b: tb.coverage(),
                coverage_diff: tb.coverage() - ta.coverage(),
                inefficiency_a: ta.inefficiency(),
                inefficiency_b: tb.inefficiency(),
                inefficiency_diff: tb.inefficiency() - ta.inefficiency(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cd: Vec<f64> = rows.iter().map(|r| r.coverage_diff).collect();
    let id: Vec<f64> = rows.iter().map(|r| r.inefficiency_diff).collect();
    Ok(Comparison {
        a: a.predictor.name().into(),
        b: b.predictor.name().into(),
        coverage_diff: Percentiles::of(&cd),
        inefficiency_diff: Percentiles::of(&id),
        median_inefficiency_ratio: b.summary.inefficiency.p50 / a.summary.inefficiency.p50,
        rows,
    })
}

impl Comparison {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// `(N+1) x (N+1)` matrix with `R[i][j]` the score of point `i` under the
/// model trained without points `i` and `j` (without `i` alone on the
/// diagonal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreMatrix(pub Vec<Vec<f64>>);

impl ScoreMatrix {
    pub fn validate(&self) -> Result<()> {
        let m = self.0.len();
        if m < 2 {
            return Err(Error::MalformedMatrix(format!("{m} rows, need at least 2")));
        }
        for (i, row) in self.0.iter().enumerate() {
            if row.len() != m {
                return Err(Error::MalformedMatrix(format!("row {i} has {} entries, expected {m}", row.len())));
            }
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::MalformedMatrix(format!("row {i} contains NaN")));
            }
        }
        Ok(())
    }
}

/// Leave-two-out scores of the `N + 1` points in `points`.
pub fn leave_two_out_scores(points: &Dataset, xi: &ParamVector, score: &ScoreKind, cfg: &GdConfig) -> Result<ScoreMatrix> {
    let m = points.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let models = pairs
        .par_iter()
        .map(|&(i, j)| {
            let excluded = if i == j { vec![i] } else { vec![i, j] };
            gd_train(&points.without(&excluded), xi, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = vec![vec![0.0; m]; m];
    for (&(i, j), model) in pairs.iter().zip(&models) {
        let zi = &points.samples()[i];
        let zj = &points.samples()[j];
        r[i][j] = score.from_probs(&mlp_forward(&zi.x, model)?, zi.y);
        r[j][i] = score.from_probs(&mlp_forward(&zj.x, model)?, zj.y);
    }
    Ok(ScoreMatrix(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub strange: usize,
    pub bound: f64,
    pub pass: bool,
}

/// Counts strange points with the comparison `A(i,j) = 1(min_k R[i][k] >
/// R[j][i])` for `i != j`.
pub fn strange_points_audit(scores: &ScoreMatrix, alpha_prime: f64) -> Result<Audit> {
    strange_points_audit_by(scores, alpha_prime, |a, b| a > b)
}

/// [`strange_points_audit`] with the comparison `beats(min_k R[i][k], R[j][i])`.
pub fn strange_points_audit_by(scores: &ScoreMatrix, alpha_prime: f64, beats: impl Fn(f64, f64) -> bool) -> Result<Audit> {
    scores.validate()?;
    let r = &scores.0;
    let m = r.len();
    let need = (1.0 - alpha_prime) * m as f64;
    let strange = (0..m)
        .filter(|&i| {
            let min_i = r[i].iter().copied().fold(f64::INFINITY, f64::min);
            let wins = (0..m).filter(|&j| j != i && beats(min_i, r[j][i])).count();
            wins as f64 >= need - 1e-9
        })
        .count();
    let bound = m as f64 - need;
    Ok(Audit {
        strange,
        bound,
        pass: strange as f64 <= bound + 1e-9,
    })
}
