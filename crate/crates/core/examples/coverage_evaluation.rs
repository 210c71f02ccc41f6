//! Monte Carlo coverage and set size of several predictors on the same
//! draws, written to CSV.
//!
//! cargo run --release --example coverage_evaluation -- [out_dir]

use std::path::PathBuf;

use metaxb::eval::{evaluate_tasks, EvalBudget, Predictor, PredictorSpec};
use metaxb::numerics::{GdConfig, Layout, ParamVector};
use metaxb::rng::SeedTree;
use metaxb::scores::ScoreKind;
use metaxb::tasks::{Environment, TaskSpec};

fn main() -> metaxb::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "coverage_evaluation".into()));
    std::fs::create_dir_all(&out).map_err(|e| metaxb::Error::Io { path: out.display().to_string(), source: e })?;
    let tasks: Vec<TaskSpec> = (0..10)
        .map(|t| Environment::Multinomial.generate(Environment::task_seed(9, "eval", t)))
        .collect();
    let xi = ParamVector::random_init(Layout::new(10, vec![32, 32], 5)?, SeedTree::new(9));
    let budget = EvalBudget { datasets: 100, tests: 20 };
    let conv = ScoreKind::ConventionalLogloss;
    let specs = [
        ("xb conventional a=0.1", PredictorSpec::Xb { alpha: 0.1, k: 9, score: conv }),
        ("xb adaptive a=0.1", PredictorSpec::Xb { alpha: 0.1, k: 9, score: ScoreKind::Adaptive }),
        ("vb conventional a=0.2", PredictorSpec::Vb { alpha: 0.2, n_tr: None, score: conv }),
        ("naive a=0.1", PredictorSpec::Naive { alpha: 0.1 }),
        ("oracle a=0.1", PredictorSpec::Oracle { alpha: 0.1 }),
        ("full set", PredictorSpec::FullSet),
    ];
    println!("{:<28} {:>9} {:>9} {:>9} {:>9}", "predictor", "coverage", "cov p25", "ineff", "ineff p75");
    for (i, (label, spec)) in specs.into_iter().enumerate() {
        let pred = Predictor::new(spec, Some(xi.clone()), GdConfig::meta_test());
        let r = evaluate_tasks(&pred, &tasks, 9, budget, 1, true)?;
        let s = &r.summary;
        println!(
            "{:<28} {:>9.4} {:>9.4} {:>9.3} {:>9.3}",
            label, s.mean_coverage, s.coverage.p25, s.mean_inefficiency, s.inefficiency.p75
        );
        r.write_csv(&out.join(format!("{i}_{}.csv", r.predictor.name())))?;
    }
    println!("per-task rows written to {}", out.display());
    Ok(())
}
