//! Deeply supervised losses and the SGD training loop.

mod loss;
mod optimizer;
mod train;

pub use loss::{side_loss, side_loss_with_grad, side_target, total_loss, total_loss_with_grads, LossReport};
pub use optimizer::Sgd;
pub use train::{curve_csv, poly_lr, train, CurveRow, TrainConfig, TrainOutcome};
