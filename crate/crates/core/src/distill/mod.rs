//! Student training: scaled cross-entropy plus a margin hinge, a decaying
//! imitation weight, and the AdamW loop over the expert dataset.

mod loss;
mod train;

pub use loss::{ce_loss, lambda_at, rob_loss, record_total_loss, total_loss, LossNodes};
pub use train::{distill_train, distill_train_with, DistillConfig, TrainLog, TrainLogRow, TRAIN_LOG_HEADER};

#[cfg(test)]
mod tests;
