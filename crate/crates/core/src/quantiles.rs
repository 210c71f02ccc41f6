//! Hard and soft order statistics.
//!
//! The hard quantile picks the `ceil((1 - alpha)(M + 1))`-th smallest of the
//! values with `+inf` appended. The soft operators replace the minimum and
//! the quantile by softmax-weighted averages so that they can be
//! differentiated; they are generic over [`Arith`] and accept only finite
//! inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{logistic, Arith, Eval};

/// Real number or `+inf`.
///
/// The quantile of a short list can land on the appended infinity; in that
/// case every finite score is below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub enum Extended {
    Finite(f64),
    Infinity,
}

impl Extended {
    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinity => None,
        }
    }

    /// `x <= self`
    pub fn admits(self, x: f64) -> bool {
        match self {
            Extended::Finite(v) => x <= v,
            Extended::Infinity => true,
        }
    }

    /// `self >= 0`
    pub fn is_nonnegative(self) -> bool {
        self.admits(0.0)
    }
}

/// Smoothing constants of the soft operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingParams {
    /// Temperature of the sigmoid replacing the indicator.
    pub c_sigma: f64,
    /// Temperature of the softmin.
    pub c_s: f64,
    /// Temperature of the soft quantile.
    pub c_q: f64,
    /// Offset of the element appended to the soft quantile's input.
    pub delta: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl SmoothingParams {
    /// All three temperatures set to `c`, `delta = 1`.
    pub fn uniform(c: f64) -> Self {
        Self {
            c_sigma: c,
            c_s: c,
            c_q: c,
            delta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_sigma", self.c_sigma),
            ("c_s", self.c_s),
            ("c_q", self.c_q),
            ("delta", self.delta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be a finite positive number"));
            }
        }
        Ok(())
    }
}

// Slack absorbing the rounding of (1 - alpha) * (M + 1) when the exact
// product is an integer.
const RANK_SLACK: f64 = 1e-9;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("alpha", format!("{alpha} is not in (0, 1)")))
    }
}

/// `ceil((1 - alpha)(m + 1))`, a rank in `1..=m + 1` for `alpha` in (0, 1).
pub fn upper_rank(alpha: f64, m: usize) -> usize {
    let r = ((1.0 - alpha) * (m as f64 + 1.0) - RANK_SLACK).ceil();
    (r.max(1.0) as usize).min(m + 1)
}

/// `floor(alpha (m + 1))`, computed as `m + 1 - upper_rank` so that the two
/// ranks are always complementary.
pub fn lower_rank(alpha: f64, m: usize) -> usize {
    m + 1 - upper_rank(alpha, m)
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile input"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            context: "quantile input".into(),
        });
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// The `ceil((1 - alpha)(M + 1))`-th smallest of `values` with `+inf` appended.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> Result<Extended> {
    check_alpha(alpha)?;
    let s = sorted(values)?;
    let rank = upper_rank(alpha, s.len());
    Ok(if rank > s.len() {
        Extended::Infinity
    } else {
        Extended::Finite(s[rank - 1])
    })
}

/// The `floor(alpha (M + 1))`-th smallest of `values`.
pub fn lower_quantile(values: &[f64], alpha: f64) -> Result<Extended> {
    check_alpha(alpha)?;
    let s = sorted(values)?;
    let rank = lower_rank(alpha, s.len());
    if rank == 0 {
        return Err(Error::AlphaOutOfRange {
            alpha,
            min_alpha: 1.0 / (s.len() as f64 + 1.0),
            what: format!("a lower quantile of {} values", s.len()),
        });
    }
    Ok(Extended::Finite(s[rank - 1]))
}

/// Pinball loss of `a` against `values` at level `1 - alpha`.
pub fn pinball(a: f64, values: &[f64], alpha: f64) -> f64 {
    values
        .iter()
        .map(|&v| alpha * (a - v).max(0.0) + (1.0 - alpha) * (v - a).max(0.0))
        .sum()
}

fn pinball_at<A: Arith>(ops: &mut A, i: usize, values: &[A::V], alpha: f64) -> A::V {
    let a = values[i];
    let terms: Vec<A::V> = values
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .filter_map(|(_, &v)| {
            let d = ops.value(a) - ops.value(v);
            if d > 0.0 {
                let diff = ops.sub(a, v);
                Some(ops.scale(diff, alpha))
            } else if d < 0.0 {
                let diff = ops.sub(v, a);
                Some(ops.scale(diff, 1.0 - alpha))
            } else {
                None
            }
        })
        .collect();
    ops.sum(&terms)
}

/// Softmax-weighted average approximating the minimum.
pub fn softmin_with<A: Arith>(ops: &mut A, values: &[A::V], c_s: f64) -> A::V {
    let min = values
        .iter()
        .map(|&v| ops.value(v))
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<A::V> = values
        .iter()
        .map(|&v| {
            let shifted = ops.offset(v, -min);
            let scaled = ops.scale(shifted, -1.0 / c_s);
            ops.exp(scaled)
        })
        .collect();
    let num = ops.dot(values, &weights);
    let den = ops.sum(&weights);
    ops.div(num, den)
}

/// Soft empirical quantile: average of the values augmented with
/// `max + delta`, weighted by `exp(-pinball / c_q)`.
pub fn soft_quantile_with<A: Arith>(
    ops: &mut A,
    values: &[A::V],
    alpha: f64,
    c_q: f64,
    delta: f64,
) -> A::V {
    let top = values
        .iter()
        .copied()
        .max_by(|&a, &b| ops.value(a).total_cmp(&ops.value(b)))
        .expect("non-empty input");
    let mut aug = values.to_vec();
    aug.push(ops.offset(top, delta));
    let rho: Vec<A::V> = (0..aug.len()).map(|i| pinball_at(ops, i, &aug, alpha)).collect();
    let rho_min = rho
        .iter()
        .map(|&r| ops.value(r))
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<A::V> = rho
        .iter()
        .map(|&r| {
            let shifted = ops.offset(r, -rho_min);
            let scaled = ops.scale(shifted, -1.0 / c_q);
            ops.exp(scaled)
        })
        .collect();
    let num = ops.dot(&aug, &weights);
    let den = ops.sum(&weights);
    ops.div(num, den)
}

/// Sigmoid `1 / (1 + exp(-u / c))` standing in for the indicator `u >= 0`.
pub fn smooth_indicator_with<A: Arith>(ops: &mut A, u: A::V, c_sigma: f64) -> A::V {
    let scaled = ops.scale(u, 1.0 / c_sigma);
    ops.sigmoid(scaled)
}

fn check_soft_input(values: &[f64], what: &'static str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: what.to_string(),
        });
    }
    Ok(())
}

pub fn softmin(values: &[f64], c_s: f64) -> Result<f64> {
    check_soft_input(values, "softmin input")?;
    Ok(softmin_with(&mut Eval, values, c_s))
}

pub fn soft_quantile(values: &[f64], alpha: f64, c_q: f64, delta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_soft_input(values, "soft quantile input")?;
    Ok(soft_quantile_with(&mut Eval, values, alpha, c_q, delta))
}

pub fn smooth_indicator(u: f64, c_sigma: f64) -> f64 {
    logistic(u / c_sigma)
}
