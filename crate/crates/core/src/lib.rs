//! Group-aware sample selection for static pool-based meta-active learning.

pub mod container;
pub mod episodes;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod prediction;
pub mod representation;
pub mod scorer;
pub mod selection;
pub mod training;

pub use container::Container;
pub use episodes::{ClassPool, Episode, EpisodeConfig, MetaSplit, Stage};
pub use error::{Error, Result};
pub use evaluation::MetricsReport;
pub use numerics::Tensor;
pub use scorer::ScorerParams;
pub use selection::{Sampling, StrategySpec};
pub use training::{TrainConfig, TrainState};
