//! Reverse-mode gradients through one unrolled GD step, checked against
//! central finite differences.
//!
//! cargo run --release --example autodiff_gradcheck

use metaxb::meta::SoftProblem;
use metaxb::numerics::{value_and_grad, Arith, GdConfig, Layout, ParamVector};
use metaxb::predictors::FoldPartition;
use metaxb::quantiles::SmoothingParams;
use metaxb::rng::SeedTree;
use metaxb::scores::ScoreKind;
use metaxb::tasks::{gen_multinomial_task, sample_dataset};

fn main() -> metaxb::Result<()> {
    // A scalar warm-up: f(a, b) = a * exp(b) + sigmoid(a - b).
    let (v, g) = value_and_grad(
        |t, x| {
            let e = t.exp(x[1]);
            let p = t.mul(x[0], e);
            let d = t.sub(x[0], x[1]);
            let s = t.sigmoid(d);
            Ok(t.add(p, s))
        },
        &[0.7, -0.3],
    )?;
    println!("f = {v:.6}, grad = [{:.6}, {:.6}]", g[0], g[1]);

    // Soft inefficiency of one XB instance as a function of the
    // initialization, differentiated through the fold models' training.
    let task = gen_multinomial_task(3);
    let data = sample_dataset(&task, 9, SeedTree::new(1));
    let x = sample_dataset(&task, 1, SeedTree::new(2)).0.remove(0).x;
    let part = FoldPartition::new(9, 9, SeedTree::new(3))?;
    let xi = ParamVector::random_init(Layout::new(10, vec![32, 32], 5)?, SeedTree::new(4));
    let score = ScoreKind::ConventionalLogloss;
    let smoothing = SmoothingParams::default();
    let cfg = GdConfig::default();
    let problem = SoftProblem {
        x: &x,
        data: &data,
        partition: &part,
        alpha: 0.1,
        score: &score,
        smoothing: &smoothing,
        cfg: &cfg,
    };
    let (value, grad) = problem.value_and_grad(&xi)?;
    println!("soft inefficiency {value:.6} over {} parameters", xi.len());

    let h = 1e-5;
    println!("{:>6} {:>14} {:>14} {:>10}", "coord", "tape", "finite diff", "rel err");
    for c in (0..xi.len()).step_by(xi.len() / 8) {
        let at = |d: f64| {
            let mut v = xi.values().to_vec();
            v[c] += d;
            problem.value(&xi.with_values(v)?)
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        let rel = (grad[c] - fd).abs() / grad[c].abs().max(fd.abs()).max(1e-6);
        println!("{c:>6} {:>14.6e} {:>14.6e} {rel:>10.2e}", grad[c], fd);
    }
    Ok(())
}
