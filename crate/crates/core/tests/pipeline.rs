use std::collections::BTreeMap;

use poolsel_core::episodes::{
    generate_synthetic_pools, load_embedding_pools, split_classes, write_embedding_pools, EpisodeConfig, EpisodeSampler,
    Stage, SyntheticConfig,
};
use poolsel_core::evaluation::run_benchmark;
use poolsel_core::selection::StrategySpec;
use poolsel_core::training::{meta_train, TrainConfig};

fn small_train(strategy: StrategySpec) -> TrainConfig {
    TrainConfig {
        strategy,
        epochs: 3,
        problems_per_epoch: 5,
        train_problems: 30,
        val_problems: 10,
        eval_every: 1,
        hidden: 4,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn pools_survive_a_csv_round_trip() {
    let pools = generate_synthetic_pools(&SyntheticConfig::default(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pools.csv");
    write_embedding_pools(std::fs::File::create(&path).unwrap(), &pools, Some("test")).unwrap();
    assert_eq!(load_embedding_pools(&path).unwrap(), pools);
}

#[test]
fn train_then_benchmark_end_to_end() {
    let pools = generate_synthetic_pools(&SyntheticConfig::default(), 2).unwrap();
    let split = split_classes(&pools, [0.6, 0.2, 0.2], 3).unwrap();
    assert!(split.train.is_disjoint(&split.test) && split.val.is_disjoint(&split.test));
    let ecfg = EpisodeConfig::default();

    let mut checkpoints = BTreeMap::new();
    for spec in StrategySpec::benchmark_rows().into_iter().filter(|s| s.is_trainable()) {
        let outcome = meta_train(&small_train(spec.clone()), &pools, &split, &ecfg, None, None).unwrap();
        assert!(outcome.accessed_classes.is_disjoint(&split.test), "{}", spec.name());
        assert_eq!(outcome.state.curve.len(), 3);
        checkpoints.insert(spec.name(), outcome.state.best_params);
    }

    let sampler = EpisodeSampler::new(&pools, &split, Stage::MetaTest).unwrap();
    let problems = sampler.problem_set(&ecfg, 40, 5).unwrap();
    let bench = run_benchmark(&StrategySpec::benchmark_rows(), &checkpoints, &problems, 6, "d").unwrap();
    assert_eq!(bench.reports.len(), 6);
    let best = bench.reports.iter().find(|r| r.strategy == "best").unwrap();
    assert_eq!(best.multi_class_ratio, 1.0);
    for r in &bench.reports {
        assert_eq!(r.n_problems, 40);
        assert!(r.mean_accuracy <= best.mean_accuracy + 1e-12, "{} beats the oracle", r.strategy);
    }

    let again = run_benchmark(&StrategySpec::benchmark_rows(), &checkpoints, &problems, 6, "d").unwrap();
    assert_eq!(format!("{:?}", again.reports), format!("{:?}", bench.reports));
}
