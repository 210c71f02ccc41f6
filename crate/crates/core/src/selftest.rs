//! Fast oracle suites run by `metaxb selftest`.
//!
//! Each suite compares an implementation against an independent oracle on
//! random inputs. A [`Fault`] corrupts one implementation on purpose so the
//! harness itself can be checked to fail.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{strange_points_audit_by, ScoreMatrix};
use crate::meta::{hard_inefficiency_from_scores, soft_inefficiency_from_scores, SoftProblem};
use crate::numerics::{softmax, Eval, GdConfig, Layout, ParamVector};
use crate::predictors::{AlphaBudget, FoldPartition, XbFit};
use crate::quantiles::{empirical_quantile, Extended, SmoothingParams};
use crate::rng::SeedTree;
use crate::scores::{adaptive_from_probs, adaptive_maxform_from_probs, ScoreKind};
use crate::tasks::{gen_multinomial_task, sample_dataset};

/// Deliberate corruption used as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Audit with `<` in place of `>`.
    FlipAudit,
    /// Quantile taken one rank too low.
    QuantileRank,
    /// Analytic gradient scaled by 1.001.
    GradientScale,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flip-audit" => Ok(Fault::FlipAudit),
            "quantile-rank" => Ok(Fault::QuantileRank),
            "gradient-scale" => Ok(Fault::GradientScale),
            _ => Err(Error::invalid(
                "fault",
                format!("`{s}` is not one of flip-audit, quantile-rank, gradient-scale"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed discrepancy, where meaningful.
    pub worst: f64,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>6} {:>8} {:>12} {:>8}  result", "suite", "cases", "failures", "worst", "seconds")?;
        for s in &self.suites {
            writeln!(
                f,
                "{:<28} {:>6} {:>8} {:>12.3e} {:>8.2}  {}",
                s.name,
                s.cases,
                s.failures,
                s.worst,
                s.seconds,
                if s.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Runs every suite.
pub fn run(fault: Option<Fault>) -> Result<SelftestReport> {
    let suites = vec![
        timed(|| quantile_exactness(fault == Some(Fault::QuantileRank)))?,
        timed(adaptive_equivalence)?,
        timed(xb_form_equivalence)?,
        timed(soft_to_hard)?,
        timed(|| gradient_check(fault == Some(Fault::GradientScale)))?,
        timed(|| strange_points(fault == Some(Fault::FlipAudit)))?,
    ];
    Ok(SelftestReport { suites })
}

fn timed(f: impl FnOnce() -> Result<SuiteResult>) -> Result<SuiteResult> {
    let t = Instant::now();
    let mut r = f()?;
    r.seconds = Duration::as_secs_f64(&t.elapsed());
    Ok(r)
}

fn suite(name: &'static str) -> SuiteResult {
    SuiteResult {
        name,
        cases: 0,
        failures: 0,
        worst: 0.0,
        seconds: 0.0,
    }
}

/// Sort-and-index oracle with exact integer rank arithmetic for
/// `alpha = num / den`.
fn quantile_oracle(values: &[f64], num: usize, den: usize) -> Extended {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let rank = ((den - num) * (m + 1)).div_ceil(den);
    if rank > m {
        Extended::Infinity
    } else {
        Extended::Finite(v[rank - 1])
    }
}

fn quantile_exactness(fault: bool) -> Result<SuiteResult> {
    let mut r = suite("quantile exactness");
    let mut rng = SeedTree::new(1).child("selftest-quantile").rng();
    for _ in 0..2000 {
        let m = rng.random_range(1..=15);
        let values: Vec<f64> = (0..m).map(|_| rng.random_range(0..5) as f64).collect();
        let num = rng.random_range(1..20);
        let alpha = num as f64 / 20.0;
        // One rank lower: (1 - alpha - 1/(m+1))(m+1) = (1 - alpha)(m+1) - 1.
        let shifted = alpha + 1.0 / (m + 1) as f64;
        let used = if fault && shifted < 1.0 { shifted } else { alpha };
        let got = empirical_quantile(&values, used)?;
        r.cases += 1;
        if got != quantile_oracle(&values, num, 20) {
            r.failures += 1;
        }
    }
    Ok(r)
}

fn random_probs<R: Rng>(rng: &mut R, classes: usize) -> Vec<f64> {
    let scale = rng.random_range(0.1..5.0);
    let logits: Vec<f64> = (0..classes)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    softmax(&mut Eval, &logits)
}

fn adaptive_equivalence() -> Result<SuiteResult> {
    let mut r = suite("adaptive score equivalence");
    let mut rng = SeedTree::new(2).child("selftest-adaptive").rng();
    for _ in 0..1000 {
        let classes = rng.random_range(2..=8);
        let p = random_probs(&mut rng, classes);
        for y in 0..classes {
            let d = (adaptive_from_probs(&p, y) - adaptive_maxform_from_probs(&p, y)).abs();
            r.cases += 1;
            r.worst = r.worst.max(d);
            r.failures += usize::from(d > 1e-12);
        }
    }
    Ok(r)
}

fn xb_form_equivalence() -> Result<SuiteResult> {
    let mut r = suite("xb counting vs quantile");
    let cfg = GdConfig::meta_test();
    let root = SeedTree::new(3).child("selftest-xb");
    for t in 0..40u64 {
        let s = root.index(t);
        let task = gen_multinomial_task(s.child("task").key());
        let data = sample_dataset(&task, 9, s.child("data"));
        let xi = ParamVector::random_init(Layout::new(10, vec![8], 5)?, s.child("xi"));
        let k = if t % 2 == 0 { 9 } else { 3 };
        let alpha = if k == 9 { 0.1 } else { 0.3 };
        let budget = AlphaBudget::for_xb(alpha, 9, k)?;
        let part = FoldPartition::new(9, k, s.child("folds"))?;
        let score = if t % 4 < 2 {
            ScoreKind::ConventionalLogloss
        } else {
            ScoreKind::Adaptive
        };
        let fit = XbFit::fit(&data, &xi, &part, &score, &cfg)?;
        for x in sample_dataset(&task, 5, s.child("test")).iter() {
            r.cases += 1;
            if fit.predict(&x.x, &budget)? != fit.predict_quantile_form(&x.x, &budget)? {
                r.failures += 1;
            }
        }
    }
    Ok(r)
}

/// Scores with every calibration score and per-label minimum at least
/// `margin` apart from each other.
fn separated_instance<R: Rng>(rng: &mut R, n: usize, k: usize, classes: usize, margin: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    loop {
        let cal: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        let cand: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..classes).map(|_| rng.random_range(0.0..4.0)).collect())
            .collect();
        let mins = (0..classes).map(|y| cand.iter().map(|c| c[y]).fold(f64::INFINITY, f64::min));
        let all: Vec<f64> = cal.iter().copied().chain(mins).collect();
        let ok = all
            .iter()
            .enumerate()
            .all(|(i, a)| all[i + 1..].iter().all(|b| (a - b).abs() >= margin));
        if ok {
            return (cal, cand);
        }
    }
}

fn soft_to_hard() -> Result<SuiteResult> {
    let mut r = suite("soft to hard convergence");
    let mut rng = SeedTree::new(4).child("selftest-soft").rng();
    let budget = AlphaBudget::for_xb(0.15, 9, 9)?;
    let smoothing = SmoothingParams::uniform(1e-3);
    for _ in 0..100 {
        let (cal, cand) = separated_instance(&mut rng, 9, 9, 5, 0.1);
        let soft = soft_inefficiency_from_scores(&cal, &cand, budget.alpha_prime, &smoothing);
        let hard = hard_inefficiency_from_scores(&cal, &cand, &budget) as f64;
        let d = (soft - hard).abs();
        r.cases += 1;
        r.worst = r.worst.max(d);
        r.failures += usize::from(d > 0.05);
    }
    Ok(r)
}

fn gradient_check(fault: bool) -> Result<SuiteResult> {
    let mut r = suite("soft inefficiency gradient");
    let root = SeedTree::new(5).child("selftest-grad");
    let cfg = GdConfig::default();
    let score = ScoreKind::ConventionalLogloss;
    let smoothing = SmoothingParams::uniform(0.5);
    let h = 1e-5;
    for t in 0..3u64 {
        let s = root.index(t);
        let task = gen_multinomial_task(s.child("task").key());
        let data = sample_dataset(&task, 4, s.child("data"));
        let x = sample_dataset(&task, 1, s.child("x")).0.remove(0).x;
        let part = FoldPartition::new(4, 4, s.child("folds"))?;
        let xi = ParamVector::random_init(Layout::new(10, vec![4], 5)?, s.child("xi"));
        let problem = SoftProblem {
            x: &x,
            data: &data,
            partition: &part,
            alpha: 0.3,
            score: &score,
            smoothing: &smoothing,
            cfg: &cfg,
        };
        let (_, mut g) = problem.value_and_grad(&xi)?;
        if fault {
            g.iter_mut().for_each(|v| *v *= 1.001);
        }
        let mut rng = s.child("coords").rng();
        for _ in 0..5 {
            let c = rng.random_range(0..xi.len());
            let at = |delta: f64| {
                let mut v = xi.values().to_vec();
                v[c] += delta;
                problem.value(&xi.with_values(v)?)
            };
            let fd = (at(h)? - at(-h)?) / (2.0 * h);
            let rel = (g[c] - fd).abs() / g[c].abs().max(fd.abs()).max(1e-6);
            r.cases += 1;
            r.worst = r.worst.max(rel);
            r.failures += usize::from(rel > 1e-4);
        }
    }
    Ok(r)
}

/// Leave-two-out style matrix from exchangeable scores: a per-point level
/// plus independent noise for every excluded partner.
pub fn synthetic_score_matrix<R: Rng>(rng: &mut R, m: usize) -> ScoreMatrix {
    let level: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
    ScoreMatrix(
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        level[i] + 0.3 * z
                    })
                    .collect()
            })
            .collect(),
    )
}

fn strange_points(fault: bool) -> Result<SuiteResult> {
    let mut r = suite("strange points bound");
    let mut rng = SeedTree::new(6).child("selftest-audit").rng();
    let budget = AlphaBudget::for_xb(0.1, 9, 9)?;
    for _ in 0..200 {
        let scores = synthetic_score_matrix(&mut rng, 10);
        let audit = if fault {
            strange_points_audit_by(&scores, budget.alpha_prime, |a, b| a < b)?
        } else {
            strange_points_audit_by(&scores, budget.alpha_prime, |a, b| a > b)?
        };
        r.cases += 1;
        r.worst = r.worst.max(audit.strange as f64 - audit.bound);
        r.failures += usize::from(!audit.pass);
    }
    Ok(r)
}
