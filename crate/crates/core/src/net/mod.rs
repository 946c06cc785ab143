//! Clearance regressor: residual MLP, training and checkpoints.

mod checkpoint;
mod layers;
mod model;
mod train;

use thiserror::Error;

use crate::dataset::{DatasetError, NormStats};

pub use checkpoint::{
    checkpoint_size, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MODEL_MAGIC,
    MODEL_VERSION,
};
pub use layers::{BatchNorm, Dense};
pub use model::{LossGrad, MlpConfig, MlpModel, Mode, ResidualBlock, Skip, Unit};
pub use train::{
    clip_global_norm, cyclic_lr, evaluate, train, EvalReport, LocationError, NormalizedData, TrainConfig,
    TrainHistory, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize, last_good: Box<MlpModel> },
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported")]
    VersionMismatch { found: u32 },
    #[error("checkpoint is truncated or corrupt")]
    CorruptChecksum,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trained network together with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearanceModel {
    pub model: MlpModel,
    pub stats: NormStats,
}

impl ClearanceModel {
    /// Predicted clearance in metres at `(x, y, θ)`.
    pub fn predict(&self, x: f64, y: f64, theta: f64) -> f64 {
        let nx = self.stats.normalize_input([x, y, theta]);
        self.stats.denormalize(self.model.forward(nx, Mode::Eval))
    }

    /// Predicted clearance and its gradient with respect to `(x, y, θ)`.
    pub fn predict_with_gradient(&self, x: f64, y: f64, theta: f64) -> (f64, [f64; 3]) {
        let nx = self.stats.normalize_input([x, y, theta]);
        let (nd, g) = self.model.input_gradient(nx);
        let slope = self.stats.denormalize_slope(nd);
        let grad = std::array::from_fn(|k| slope * g[k] / self.stats.sigma_x[k]);
        (self.stats.denormalize(nd), grad)
    }
}
