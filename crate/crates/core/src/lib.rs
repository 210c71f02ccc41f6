//! Cross-validation conformal prediction (XB-CP) with a meta-learned
//! training initialization (meta-XB).
//!
//! A set predictor built here wraps a small softmax MLP trained by a few
//! steps of gradient descent from an initialization `xi`. XB-CP keeps
//! per-task coverage `>= 1 - alpha` for any `xi`, so `xi` can be tuned
//! across tasks to shrink the sets. Tuning goes through a differentiable
//! surrogate of the set size and exact second-order gradients through the
//! unrolled inner training.
//!
//! Modules, bottom up:
//!
//! - [`rng`]: keyed seed tree for reproducible, order-free randomness.
//! - [`numerics`]: reverse-mode tape, the MLP, inner GD, Adam.
//! - [`quantiles`]: empirical quantiles and their smooth counterparts.
//! - [`scores`]: nonconformity scores (log-loss, adaptive, soft adaptive).
//! - [`predictors`]: XB-CP, VB-CP, naive and oracle set predictors.
//! - [`meta`]: soft inefficiency and the meta-training loop.
//! - [`tasks`]: synthetic multinomial and demodulation environments.
//! - [`eval`]: Monte Carlo coverage and size, paired comparisons, the
//!   strange-points audit.
//! - [`cli`], [`selftest`]: the experiment driver behind `metaxb`.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod meta;
pub mod numerics;
pub mod predictors;
pub mod quantiles;
pub mod rng;
pub mod scores;
pub mod selftest;
pub mod tasks;

pub use error::{Error, Result};
