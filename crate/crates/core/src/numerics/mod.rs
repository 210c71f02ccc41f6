//! Automatic differentiation, the neural classifier and its training loop.

mod mlp;
mod optim;
mod tape;
mod train;

pub use mlp::{
    log_loss, loss_gradient, mean_log_loss, mlp_forward, probabilities, softmax, Layout,
    ParamVector, LOG_CLAMP,
};
pub use optim::{adam_update, sgd_update, AdamConfig, AdamState};
pub use tape::{grad, value_and_grad, Arith, Eval, Tape, Var};
pub(crate) use tape::logistic;
pub use train::{gd_steps, gd_train, GdConfig};
