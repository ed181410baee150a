//! Adam training with optional domain-adversarial terms.

mod adam;
mod config;
mod step;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{parse_key_values, DaMode, TrainConfig};
pub use step::{compute_gradients, fit, gradient_norm, train_step, FitOutputs, LossBreakdown, LossLog, LOSS_LOG_HEADER};

#[cfg(test)]
mod tests;
