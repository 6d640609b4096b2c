//! Policy-gradient meta-training of the selection model.

mod loss;
mod meta;
mod optimizer;

pub use loss::{episode_loss, EpisodeLoss, Exploration, LossMode};
pub use meta::{
    initial_params, meta_train, sub_seed, train_epoch, write_curve_csv, CheckpointSink, CurveRow, EpochStats,
    TrainConfig, TrainOutcome, TrainState, BEST_CHECKPOINT, CURVE_FILE, LAST_CHECKPOINT,
};
pub use optimizer::{Optimizer, OptimizerKind};
