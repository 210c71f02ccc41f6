//! Experiment driver behind the `metaxb` binary.
//!
//! Every command reads an [`ExperimentConfig`], validates all of it before
//! doing any work and writes into one run directory:
//!
//! | file | written by | content |
//! |------|------------|---------|
//! | `config.json` | all | effective configuration (after flag overrides) |
//! | `run.json` | all | command, seed, wall-clock timestamp |
//! | `tasks/task_NNN.json` | `gen-tasks` | one serialized task each |
//! | `xi.json`, `trace.csv` | `meta-train` | learned initialization, loss trace |
//! | `eval.csv`, `summary.json`, `report.json` | `eval` | per-task rows, percentiles, full report |
//! | `comparison.csv`, `comparison.json` | `compare` | paired differences |
//!
//! Apart from the timestamp in `run.json`, every output is a function of the
//! configuration and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{compare_reports, evaluate_tasks, Comparison, EvalBudget, EvalReport, Predictor, PredictorSpec};
use crate::meta::{meta_train, MetaConfig, MetaTrainOutput, OuterOptimizer, Plateau};
use crate::numerics::{GdConfig, ParamVector};
use crate::predictors::AlphaBudget;
use crate::quantiles::SmoothingParams;
use crate::scores::ScoreKind;
use crate::tasks::{sample_meta_dataset, Environment, TaskSpec};

/// Exit code for invalid configuration or unusable input files.
pub const EXIT_CONFIG: i32 = 1;
/// Exit code for numerical failure (divergence, NaN).
pub const EXIT_NUMERIC: i32 = 2;
/// Exit code for a failing self-test.
pub const EXIT_SELFTEST: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_CONFIG
    }
}

/// Top-level experiment configuration. Unknown keys are rejected.
///
/// ```json
/// {
///   "environment": "multinomial",
///   "N": 9, "K": 9, "alpha": 0.1,
///   "score": { "variant": "conventional_logloss" },
///   "smoothing": { "c_sigma": 0.1, "c_s": 0.1, "c_q": 0.1, "delta": 1.0 },
///   "meta": { "tasks": 100, "pairs": 50, "kappa": 0.003, "max_iters": 300 },
///   "eval": { "tasks": 20, "budget": { "datasets": 200, "tests": 100 } },
///   "seed": 1,
///   "out": "runs/multinomial"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: Environment,
    /// Points per dataset.
    #[serde(rename = "N")]
    pub n: usize,
    /// Folds.
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    /// Score used at inference. Meta-training swaps the adaptive score for
    /// its smooth version.
    #[serde(default = "default_score")]
    pub score: ScoreKind,
    #[serde(default)]
    pub smoothing: SmoothingParams,
    #[serde(default)]
    pub meta: MetaSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_score() -> ScoreKind {
    ScoreKind::ConventionalLogloss
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaSection {
    /// Meta-training tasks `T`.
    pub tasks: usize,
    /// Dataset realizations per task `M_t`.
    pub pairs: usize,
    pub task_batch: usize,
    pub pair_batch: usize,
    pub kappa: f64,
    pub max_iters: usize,
    pub optimizer: OuterOptimizer,
    pub inner: GdConfig,
    pub inner_test: GdConfig,
    pub hidden: Vec<usize>,
    pub plateau: Option<Plateau>,
}

impl Default for MetaSection {
    fn default() -> Self {
        let m = MetaConfig::default();
        Self {
            tasks: 100,
            pairs: 50,
            task_batch: m.task_batch,
            pair_batch: m.pair_batch,
            kappa: m.kappa,
            max_iters: m.max_iters,
            optimizer: m.optimizer,
            inner: m.inner,
            inner_test: m.inner_test,
            hidden: m.hidden,
            plateau: m.plateau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Held-out tasks.
    pub tasks: usize,
    pub budget: EvalBudget,
    /// Defaults to XB-CP with the top-level `alpha`, `K` and `score`.
    pub predictor: Option<PredictorSpec>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            tasks: 20,
            budget: EvalBudget::default(),
            predictor: None,
        }
    }
}

fn field<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("`{name}`: {e}")))
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| e.context(format!("config {}", path.display())))
    }

    /// Checks every field; the error names the first offending one.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("`N`: {} is below 2", self.n)));
        }
        field("alpha", AlphaBudget::for_xb(self.alpha, self.n, self.k))?;
        field("score", self.score.validate())?;
        field("smoothing", self.smoothing.validate())?;
        let m = &self.meta;
        field("meta", self.meta_config().validate())?;
        if m.tasks == 0 || m.pairs == 0 {
            return Err(Error::Config("`meta`: tasks and pairs must be positive".into()));
        }
        if m.task_batch > m.tasks {
            return Err(Error::Config(format!("`meta.task_batch`: {} exceeds {} tasks", m.task_batch, m.tasks)));
        }
        if m.pair_batch > m.pairs {
            return Err(Error::Config(format!("`meta.pair_batch`: {} exceeds {} pairs", m.pair_batch, m.pairs)));
        }
        if self.eval.tasks == 0 {
            return Err(Error::Config("`eval.tasks`: must be positive".into()));
        }
        field("eval.budget", self.eval.budget.validate())?;
        field("eval.predictor", self.predictor_spec().validate(self.n))?;
        Ok(())
    }

    pub fn meta_config(&self) -> MetaConfig {
        let m = &self.meta;
        MetaConfig {
            alpha: self.alpha,
            k: self.k,
            score: self.score,
            smoothing: self.smoothing,
            inner: m.inner,
            inner_test: m.inner_test,
            kappa: m.kappa,
            task_batch: m.task_batch,
            pair_batch: m.pair_batch,
            optimizer: m.optimizer,
            max_iters: m.max_iters,
            hidden: m.hidden.clone(),
            plateau: m.plateau,
            seed: self.seed,
        }
    }

    pub fn predictor_spec(&self) -> PredictorSpec {
        self.eval.predictor.clone().unwrap_or(PredictorSpec::Xb {
            alpha: self.alpha,
            k: self.k,
            score: self.score,
        })
    }

    /// Meta-training task `t`.
    pub fn train_task(&self, t: usize) -> TaskSpec {
        self.environment.generate(Environment::task_seed(self.seed, "meta-train", t))
    }

    /// Held-out evaluation tasks.
    pub fn eval_tasks(&self) -> Vec<TaskSpec> {
        (0..self.eval.tasks)
            .map(|t| self.environment.generate(Environment::task_seed(self.seed, "eval", t)))
            .collect()
    }
}

/// Source of the initialization used by `eval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum XiSource {
    /// The seeded random initialization meta-training starts from.
    Random,
    File(PathBuf),
}

impl FromStr for XiSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => XiSource::Random,
            path => XiSource::File(PathBuf::from(path)),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    seed: u64,
    /// Seconds since the Unix epoch when the command finished.
    timestamp: u64,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_provenance(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    write_json(
        &cfg.out.join("run.json"),
        &RunMeta {
            command,
            seed: cfg.seed,
            timestamp,
        },
    )
}

/// Writes the `T` meta-training tasks to `<out>/tasks/task_NNN.json`.
pub fn cmd_gen_tasks(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = cfg.out.join("tasks");
    create_dir(&dir)?;
    let paths = (0..cfg.meta.tasks)
        .map(|t| {
            let path = dir.join(format!("task_{t:03}.json"));
            write_json(&path, &cfg.train_task(t))?;
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    write_provenance(cfg, "gen-tasks")?;
    Ok(paths)
}

/// Meta-trains on freshly sampled data and writes `xi.json` and
/// `trace.csv`.
pub fn cmd_meta_train(cfg: &ExperimentConfig) -> Result<MetaTrainOutput> {
    cfg.validate()?;
    create_dir(&cfg.out)?;
    let meta = sample_meta_dataset(cfg.environment, cfg.meta.tasks, cfg.meta.pairs, cfg.n, cfg.seed)?;
    let out = meta_train(&meta, &cfg.meta_config())?;
    let xi_path = cfg.out.join("xi.json");
    fs::write(&xi_path, out.xi.to_json()? + "\n").map_err(|e| Error::io(&xi_path, e))?;
    write_trace(&cfg.out.join("trace.csv"), &out)?;
    write_provenance(cfg, "meta-train")?;
    Ok(out)
}

fn write_trace(path: &Path, out: &MetaTrainOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "tasks", "loss"])?;
    for r in &out.trace {
        let tasks: Vec<String> = r.tasks.iter().map(usize::to_string).collect();
        w.write_record([r.iteration.to_string(), tasks.join(";"), r.loss.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_xi(path: &Path) -> Result<ParamVector> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ParamVector::from_json(&s).map_err(|e| Error::Config(format!("initialization file {}: {e}", path.display())))
}

/// Evaluates the configured predictor on the held-out tasks.
pub fn cmd_eval(cfg: &ExperimentConfig, xi: &XiSource, conditional: bool) -> Result<EvalReport> {
    cfg.validate()?;
    let spec = cfg.predictor_spec();
    let tasks = cfg.eval_tasks();
    let probe = &tasks[0];
    let xi = match xi {
        XiSource::Random => cfg.meta_config().initial_xi_for(probe.input_dim(), probe.classes())?,
        XiSource::File(p) => load_xi(p)?,
    };
    let pred = Predictor::new(spec, Some(xi), cfg.meta.inner_test);
    pred.validate(probe, cfg.n)?;
    let report = evaluate_tasks(&pred, &tasks, cfg.n, cfg.eval.budget, cfg.seed, conditional)?;
    create_dir(&cfg.out)?;
    report.write_csv(&cfg.out.join("eval.csv"))?;
    write_json(&cfg.out.join("summary.json"), &report.summary)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    write_provenance(cfg, "eval")?;
    Ok(report)
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let s = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("report {}: {e}", file.display())))
}

/// Pairs the first evaluation output with each of the others and writes
/// the differences to `out`.
pub fn cmd_compare(inputs: &[PathBuf], out: &Path) -> Result<Vec<Comparison>> {
    if inputs.len() < 2 {
        return Err(Error::Config("compare needs at least two evaluation outputs".into()));
    }
    let reports = inputs.iter().map(|p| load_report(p)).collect::<Result<Vec<_>>>()?;
    let comparisons = reports[1..]
        .iter()
        .map(|b| compare_reports(&reports[0], b))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    if comparisons.len() == 1 {
        comparisons[0].write_csv(&out.join("comparison.csv"))?;
    } else {
        for (i, c) in comparisons.iter().enumerate() {
            c.write_csv(&out.join(format!("comparison_{}.csv", i + 1)))?;
        }
    }
    write_json(&out.join("comparison.json"), &comparisons)?;
    Ok(comparisons)
}
