use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poolsel_bench::{episode, scorer};
use poolsel_core::episodes::EpisodeConfig;
use poolsel_core::numerics::Tape;
use poolsel_core::selection::{select, select_best_oracle, SelectorInput, StrategySpec};
use poolsel_core::training::{episode_loss, LossMode};

fn scorer_pass(c: &mut Criterion) {
    let ep = episode(&EpisodeConfig::default(), 0);
    let spec = StrategySpec::sample_focused();
    let params = scorer(&spec, &ep, 32);
    let input = SelectorInput::new(&ep);
    let mask = vec![false; ep.n()];
    c.bench_function("scorer forward N=15 H=32", |b| {
        b.iter(|| poolsel_core::scorer::score(&params, &input.scaled, &mask).unwrap())
    });
}

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle");
    for b in [2, 3] {
        let ep = episode(&EpisodeConfig { b, ..EpisodeConfig::default() }, 0);
        group.bench_function(format!("N=15 B={b}"), |bench| bench.iter(|| select_best_oracle(&ep, 10_000).unwrap()));
    }
    group.finish();
}

fn selection(c: &mut Criterion) {
    let ep = episode(&EpisodeConfig::default(), 0);
    let mut group = c.benchmark_group("select");
    for spec in [StrategySpec::sample_focused(), StrategySpec::iterative_ordered(), StrategySpec::combinatorial()] {
        let params = scorer(&spec, &ep, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        group.bench_function(spec.name(), |b| b.iter(|| select(&spec, Some(&params), &ep, &mut rng).unwrap()));
    }
    group.finish();
}

fn loss_and_gradient(c: &mut Criterion) {
    let ep = episode(&EpisodeConfig::default(), 0);
    let mut group = c.benchmark_group("episode loss + backward");
    group.sample_size(20);
    for spec in [StrategySpec::sample_focused(), StrategySpec::iterative_ordered(), StrategySpec::combinatorial()] {
        let params = scorer(&spec, &ep, 32);
        group.bench_function(spec.name(), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let vars = params.register(&mut tape);
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let out = episode_loss(&mut tape, &spec, &vars, &ep, LossMode::exhaustive(), &mut rng).unwrap();
                tape.backward(out.loss).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, scorer_pass, oracle, selection, loss_and_gradient);
criterion_main!(benches);
