//! Meta-test protocol: paired evaluation of selection strategies and the
//! multi-class ratio / mean accuracy metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::prediction::{PoolDistances, SubsetOutcome};
use crate::scorer::ScorerParams;
use crate::selection::{select, Sampling, StrategySpec};

/// At least two distinct classes among the revealed labels.
pub fn is_multi_class(labels: &[usize]) -> bool {
    labels.iter().any(|&l| l != labels[0])
}

/// Labels `subset` through the oracle and scores the resulting prediction.
pub fn subset_outcome(dist: &PoolDistances, episode: &Episode, subset: &[usize]) -> SubsetOutcome {
    dist.evaluate(subset, episode.oracle_labels(), &episode.test_labels, episode.k)
}

/// Fraction of problems whose selection covers at least two classes.
pub fn multi_class_ratio(samplings: &[Sampling], episodes: &[Episode]) -> Result<f64> {
    if samplings.len() != episodes.len() || episodes.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need matching non-empty lists, got {} samplings and {} episodes",
            samplings.len(),
            episodes.len()
        )));
    }
    let hits = samplings
        .iter()
        .zip(episodes)
        .filter(|(s, e)| is_multi_class(&e.reveal(&s.indices)))
        .count();
    Ok(hits as f64 / episodes.len() as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Probability that a uniform `b`-subset of a pool with per-class `counts`
/// covers at least two classes.
pub fn expected_random_multi_class(counts: &[usize], b: usize) -> f64 {
    let n: usize = counts.iter().sum();
    let single: f64 = counts.iter().map(|&c| binomial(c, b)).sum();
    1.0 - single / binomial(n, b)
}

/// Outcome of one strategy on one problem.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub indices: Vec<usize>,
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub multi_class: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub multi_class_ratio: f64,
    pub mean_accuracy: f64,
    pub n_problems: usize,
    pub seed: u64,
    pub config_digest: String,
}

/// Runs deterministic selection, oracle labeling and prediction on every
/// problem. The random strategy draws problem `i` from stream `i` of `seed`.
pub fn evaluate_strategy(
    spec: &StrategySpec,
    params: Option<&ScorerParams>,
    problems: &[Episode],
    seed: u64,
    digest: &str,
) -> Result<(MetricsReport, Vec<EpisodeRecord>)> {
    if problems.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one problem".into()));
    }
    let records: Vec<EpisodeRecord> = problems
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let s = select(spec, params, ep, &mut rng)?;
            let dist = PoolDistances::new(&ep.train, &ep.test);
            let o = subset_outcome(&dist, ep, &s.indices);
            Ok(EpisodeRecord {
                episode: i,
                multi_class: is_multi_class(&ep.reveal(&s.indices)),
                indices: s.indices,
                cross_entropy: o.cross_entropy,
                accuracy: o.accuracy,
            })
        })
        .collect::<Result<_>>()?;
    let n = records.len() as f64;
    let report = MetricsReport {
        strategy: spec.name(),
        multi_class_ratio: records.iter().filter(|r| r.multi_class).count() as f64 / n,
        mean_accuracy: records.iter().map(|r| r.accuracy).sum::<f64>() / n,
        n_problems: records.len(),
        seed,
        config_digest: digest.to_string(),
    };
    Ok((report, records))
}

/// Reports and paired per-episode records of every benchmark row.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub reports: Vec<MetricsReport>,
    pub per_episode: Vec<Vec<EpisodeRecord>>,
}

/// Evaluates every row on the same problem set. `checkpoints` maps row
/// names to trained parameters; learned rows without one are rejected
/// before anything runs.
pub fn run_benchmark(
    rows: &[StrategySpec],
    checkpoints: &BTreeMap<String, ScorerParams>,
    problems: &[Episode],
    seed: u64,
    digest: &str,
) -> Result<Benchmark> {
    for spec in rows {
        spec.validate()?;
        if spec.is_trainable() && !checkpoints.contains_key(&spec.name()) {
            return Err(Error::MissingCheckpoint(spec.name()));
        }
    }
    let mut reports = Vec::with_capacity(rows.len());
    let mut per_episode = Vec::with_capacity(rows.len());
    for spec in rows {
        let (report, records) = evaluate_strategy(spec, checkpoints.get(&spec.name()), problems, seed, digest)?;
        reports.push(report);
        per_episode.push(records);
    }
    Ok(Benchmark { reports, per_episode })
}

/// Writes `strategy,multi_class_ratio,mean_accuracy,n_problems,seed` after a
/// `# config=<digest>` comment line.
pub fn write_results_csv<W: Write>(out: &mut W, reports: &[MetricsReport], digest: &str) -> Result<()> {
    writeln!(out, "# config={digest}")?;
    writeln!(out, "strategy,multi_class_ratio,mean_accuracy,n_problems,seed")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.strategy, r.multi_class_ratio, r.mean_accuracy, r.n_problems, r.seed
        )?;
    }
    Ok(())
}

/// Writes one line per (strategy, episode): `strategy,episode,cross_entropy,accuracy,multi_class,indices`
/// with indices joined by `;`.
pub fn write_per_episode_csv<W: Write>(out: &mut W, bench: &Benchmark, digest: &str) -> Result<()> {
    writeln!(out, "# config={digest}")?;
    writeln!(out, "strategy,episode,cross_entropy,accuracy,multi_class,indices")?;
    for (report, records) in bench.reports.iter().zip(&bench.per_episode) {
        for r in records {
            let idx: Vec<String> = r.indices.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                report.strategy,
                r.episode,
                r.cross_entropy,
                r.accuracy,
                u8::from(r.multi_class),
                idx.join(";")
            )?;
        }
    }
    Ok(())
}

/// Fixed-width table for terminals.
pub fn summary(reports: &[MetricsReport]) -> String {
    let mut s = format!("{:<24} {:>12} {:>12} {:>8}\n", "strategy", "multi-class", "accuracy", "problems");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<24} {:>12.4} {:>12.4} {:>8}",
            r.strategy, r.multi_class_ratio, r.mean_accuracy, r.n_problems
        );
    }
    s
}
