//! Fixtures shared by the benchmarks.

use poolsel_core::episodes::{generate_synthetic_pools, split_classes, EpisodeConfig, EpisodeSampler, Stage, SyntheticConfig};
use poolsel_core::scorer::ScorerParams;
use poolsel_core::selection::StrategySpec;
use poolsel_core::Episode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A metatrain episode drawn from the default synthetic data.
pub fn episode(cfg: &EpisodeConfig, seed: u64) -> Episode {
    let pools = generate_synthetic_pools(&SyntheticConfig::default(), seed).expect("synthetic pools");
    let split = split_classes(&pools, [0.6, 0.2, 0.2], seed).expect("split");
    let sampler = EpisodeSampler::new(&pools, &split, Stage::MetaTrain).expect("sampler");
    sampler.sample(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).expect("episode")
}

/// Freshly initialised scorer for a strategy on `episode`.
pub fn scorer(spec: &StrategySpec, episode: &Episode, hidden: usize) -> ScorerParams {
    let input = spec.input_dim(episode.dim(), episode.b);
    ScorerParams::init(input, hidden, &mut ChaCha8Rng::seed_from_u64(1)).expect("scorer")
}
