//! The demodulation environment: per-symbol conditional coverage of XB-CP
//! with conventional and adaptive scores.
//!
//! cargo run --release --example demodulation

use metaxb::eval::{evaluate_conditional, EvalBudget, Predictor, PredictorSpec};
use metaxb::numerics::{GdConfig, Layout, ParamVector};
use metaxb::rng::SeedTree;
use metaxb::scores::ScoreKind;
use metaxb::tasks::{gen_demodulation_task, TaskSpec};

fn main() -> metaxb::Result<()> {
    let task = gen_demodulation_task(5);
    if let TaskSpec::Demodulation(d) = &task {
        println!("phase {:.3} rad, {} symbols", d.phase, d.m);
        for (s, (c, nb)) in d.constellation.iter().zip(&d.neighbors).enumerate() {
            println!("  symbol {s}: ({:+.3}, {:+.3}) neighbours {nb:?}", c[0], c[1]);
        }
    }
    let xi = ParamVector::random_init(Layout::new(2, vec![32, 32], 6)?, SeedTree::new(1));
    let budget = EvalBudget { datasets: 100, tests: 50 };
    for score in [ScoreKind::ConventionalLogloss, ScoreKind::Adaptive] {
        let spec = PredictorSpec::Xb { alpha: 0.1, k: 9, score };
        let pred = Predictor::new(spec, Some(xi.clone()), GdConfig::meta_test());
        let r = evaluate_conditional(&pred, &task, 9, budget, 3)?;
        println!("\n{}: coverage {:.4}, inefficiency {:.3}", score.name(), r.coverage(), r.inefficiency());
        for b in &r.buckets {
            if let (Some(c), Some(i)) = (b.coverage, b.inefficiency) {
                println!("  {:<9} trials {:>5} coverage {c:.3} inefficiency {i:.3}", b.bucket, b.trials);
            }
        }
    }
    Ok(())
}
