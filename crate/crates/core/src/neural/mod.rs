//! MLP Q-network training with effective-rank tracing.
//!
//! A small rectifier network maps state observations to one Q-value per
//! action; the post-activation second hidden layer is the feature map whose
//! effective rank is tracked. Trainers cover offline fitted Q-iteration
//! (hard and soft backups), fitted Q-evaluation, Monte-Carlo regression,
//! supervised regression to Q*, an online replay-buffer variant, and the
//! singular-value spread penalty.

mod mlp;
mod penalty;
mod train;

pub use mlp::{Adam, BatchCache, Mlp};
pub use penalty::{feature_srank, lp_penalty};
pub use train::{
    fqi_train, fqi_train_online, qstar_fit_error, td_targets, Backup, OnlineConfig, RankTrace,
    TargetContext, TracePoint, TrainConfig, TrainEnv,
};

use crate::gridworld::GridworldError;
use crate::linalg::LinalgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Gridworld(#[from] GridworldError),
    #[error("configuration error: {0}")]
    Config(String),
}
