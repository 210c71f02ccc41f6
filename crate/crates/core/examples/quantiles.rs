//! Empirical quantiles, the pinball loss and their smooth counterparts.
//!
//! cargo run --release --example quantiles

use metaxb::quantiles::{empirical_quantile, lower_quantile, pinball, smooth_indicator, soft_quantile, softmin};

fn main() -> metaxb::Result<()> {
    let scores = [0.3, 1.2, 0.7, 2.5, 0.9, 1.8, 0.1, 1.1, 0.4];
    for alpha in [0.1, 0.2, 0.5] {
        println!(
            "alpha {alpha}: upper quantile {:?}, lower quantile {:?}",
            empirical_quantile(&scores, alpha)?,
            lower_quantile(&scores, alpha)?
        );
    }

    // The empirical quantile minimizes the pinball loss over the list with
    // a large value appended.
    let alpha = 0.2;
    let mut augmented = scores.to_vec();
    augmented.push(1e6);
    let best = augmented
        .iter()
        .copied()
        .min_by(|a, b| pinball(*a, &augmented, alpha).total_cmp(&pinball(*b, &augmented, alpha)))
        .unwrap();
    println!("pinball minimizer at alpha {alpha}: {best}");

    // Smooth versions approach the hard ones as the temperature shrinks.
    // alpha = 0.15 keeps (1 - alpha)(M + 1) off the integer lattice.
    let hard = empirical_quantile(&scores, 0.15)?;
    println!("hard quantile at 0.15: {hard:?}");
    for c in [1.0, 0.3, 0.1, 0.03, 0.01] {
        println!(
            "c = {c:<5} soft quantile {:.5}  softmin {:.5}  sigmoid(0.2) {:.5}",
            soft_quantile(&scores, 0.15, c, 1.0)?,
            softmin(&scores, c)?,
            smooth_indicator(0.2, c)
        );
    }
    Ok(())
}
