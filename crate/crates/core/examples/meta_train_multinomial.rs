//! Meta-trains an initialization on multinomial tasks and compares XB-CP
//! with the learned and the random initialization on held-out tasks.
//!
//! cargo run --release --example meta_train_multinomial -- [iterations] [tasks]

use metaxb::eval::{compare_reports, evaluate_tasks, EvalBudget, Predictor, PredictorSpec};
use metaxb::meta::{meta_train, MetaConfig};
use metaxb::numerics::GdConfig;
use metaxb::quantiles::SmoothingParams;
use metaxb::scores::ScoreKind;
use metaxb::tasks::{sample_meta_dataset, Environment, TaskSpec};

fn main() -> metaxb::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let iters = args.next().unwrap_or(600);
    let tasks = args.next().unwrap_or(100);

    let meta = sample_meta_dataset(Environment::Multinomial, tasks, 50, 9, 1)?;
    let inner = GdConfig::new(1, 0.5)?;
    let cfg = MetaConfig {
        smoothing: SmoothingParams::uniform(0.1),
        kappa: 1e-2,
        inner,
        inner_test: inner,
        max_iters: iters,
        seed: 1,
        ..MetaConfig::default()
    };
    let init = cfg.initial_xi(&meta)?;
    let out = meta_train(&meta, &cfg)?;
    for row in out.trace.iter().step_by((iters / 10).max(1)) {
        println!("iteration {:>5}  minibatch soft inefficiency {:.4}", row.iteration, row.loss);
    }

    let held_out: Vec<TaskSpec> = (0..20)
        .map(|t| Environment::Multinomial.generate(Environment::task_seed(1, "eval", t)))
        .collect();
    let spec = PredictorSpec::Xb {
        alpha: 0.1,
        k: 9,
        score: ScoreKind::ConventionalLogloss,
    };
    let budget = EvalBudget { datasets: 50, tests: 20 };
    let random = evaluate_tasks(&Predictor::new(spec.clone(), Some(init), inner), &held_out, 9, budget, 7, false)?;
    let learned = evaluate_tasks(&Predictor::new(spec, Some(out.xi), inner), &held_out, 9, budget, 7, false)?;
    for (name, r) in [("random xi", &random), ("meta-learned xi", &learned)] {
        println!(
            "{name:<16} coverage {:.4}  inefficiency median {:.3} (p25 {:.3}, p75 {:.3})",
            r.summary.mean_coverage, r.summary.inefficiency.p50, r.summary.inefficiency.p25, r.summary.inefficiency.p75
        );
    }
    let c = compare_reports(&random, &learned)?;
    println!("median paired inefficiency difference {:.3}", c.inefficiency_diff.p50);
    Ok(())
}
