//! Frame classifier, class priors and the training loop.

mod model;
mod priors;
mod train;

pub use model::{FrameCache, FrameClassifier, Gradients, Layer, ModelConfig};
pub use priors::{estimate_priors, pseudo_likelihood, PriorVector, PRIOR_FLOOR};
pub use train::{
    align, flat_start_alignment, train_epoch, train_model, EpochStats, SgdOptions, TrainConfig, TrainItem,
    TrainUtterance, TrainedModel,
};
