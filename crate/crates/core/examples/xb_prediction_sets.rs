//! XB-CP, VB-CP, naive and oracle prediction sets on one multinomial task.
//!
//! cargo run --release --example xb_prediction_sets

use metaxb::numerics::{mlp_forward, gd_train, GdConfig, Layout, ParamVector};
use metaxb::predictors::{
    default_vb_split, greedy_set, oracle_predict, AlphaBudget, FoldPartition, VbFit, XbFit,
};
use metaxb::rng::SeedTree;
use metaxb::scores::ScoreKind;
use metaxb::tasks::{gen_multinomial_task, sample_dataset};

fn main() -> metaxb::Result<()> {
    let task = gen_multinomial_task(42);
    let data = sample_dataset(&task, 9, SeedTree::new(1));
    let xi = ParamVector::random_init(Layout::new(10, vec![32, 32], 5)?, SeedTree::new(2));
    let cfg = GdConfig::meta_test();

    for (alpha, k) in [(0.1, 9), (0.3, 3)] {
        let budget = AlphaBudget::for_xb(alpha, 9, k)?;
        println!(
            "K = {k}, alpha = {alpha}: alpha' = {:.4}, a label needs {} calibration scores at least as large",
            budget.alpha_prime,
            budget.threshold_count(9)
        );
    }
    // K = 3 at alpha = 0.1 has no valid threshold.
    println!("K = 3, alpha = 0.1: {}", AlphaBudget::for_xb(0.1, 9, 3).unwrap_err());

    let score = ScoreKind::Adaptive;
    let part = FoldPartition::new(9, 9, SeedTree::new(3))?;
    let xb = XbFit::fit(&data, &xi, &part, &score, &cfg)?;
    let xb_budget = AlphaBudget::for_xb(0.1, 9, 9)?;
    let vb = VbFit::fit(&data, &xi, default_vb_split(9), &score, &cfg)?;
    let vb_budget = AlphaBudget::for_vb(0.2, 9 - default_vb_split(9))?;
    let full_model = gd_train(data.samples(), &xi, &cfg)?;

    println!("\n{:<8} {:<16} {:<16} {:<16} {:<16} {:<16}", "label", "xb (0.1)", "xb quantile", "vb (0.2)", "naive (0.1)", "oracle (0.1)");
    for z in sample_dataset(&task, 6, SeedTree::new(4)).iter() {
        println!(
            "{:<8} {:<16} {:<16} {:<16} {:<16} {:<16}",
            z.y,
            format!("{:?}", xb.predict(&z.x, &xb_budget)?.members()),
            format!("{:?}", xb.predict_quantile_form(&z.x, &xb_budget)?.members()),
            format!("{:?}", vb.predict(&z.x, &vb_budget)?.members()),
            format!("{:?}", greedy_set(&mlp_forward(&z.x, &full_model)?, 0.1).members()),
            format!("{:?}", oracle_predict(&task.conditional(&z.x)?, 0.1)?.members()),
        );
    }
    Ok(())
}
