use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poolsel_core::container::Container;
use poolsel_core::episodes::{
    generate_synthetic_pools, load_embedding_pools, split_classes, validate_pools, write_embedding_pools, ClassPool,
    Episode, EpisodeConfig, EpisodeSampler, MetaSplit, Stage,
};
use poolsel_core::evaluation::{
    run_benchmark, summary, write_per_episode_csv, write_results_csv, Benchmark, EpisodeRecord,
};
use poolsel_core::numerics::{grad_check, Tape, Var};
use poolsel_core::representation::{embed, pretrain_embedding, EmbeddingParams};
use poolsel_core::scorer::{ScorerParams, ScorerVars};
use poolsel_core::selection::{select_best_oracle, StrategySpec, DEFAULT_ENUMERATION_LIMIT};
use poolsel_core::training::{
    episode_loss, meta_train, CheckpointSink, LossMode, TrainOutcome, TrainState, BEST_CHECKPOINT, LAST_CHECKPOINT,
};

use crate::config::{DataSource, RepresentationMode, RunConfig};

pub const RM_CHECKPOINT: &str = "rm.ckpt";
pub const POOLS_FILE: &str = "pools.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const PER_EPISODE_FILE: &str = "per_episode.csv";
pub const ORACLE_SCAN_FILE: &str = "oracle_scan.csv";

/// Raw pools from the configured source.
pub fn load_pools(cfg: &RunConfig) -> Result<Vec<ClassPool>> {
    let pools = match cfg.data.source {
        DataSource::Synthetic => generate_synthetic_pools(&cfg.data.synthetic, cfg.data_seed())?,
        DataSource::File => {
            let path = cfg.data.path.as_ref().expect("validated in resolve");
            load_embedding_pools(path)?
        }
    };
    validate_pools(&pools)?;
    Ok(pools)
}

pub fn split(cfg: &RunConfig, pools: &[ClassPool]) -> Result<MetaSplit> {
    Ok(split_classes(pools, cfg.data.split, cfg.split_seed())?)
}

/// The frozen representation model selected by the config.
pub fn representation(cfg: &RunConfig, dim: usize) -> Result<EmbeddingParams> {
    match cfg.representation.mode {
        RepresentationMode::Identity => Ok(EmbeddingParams::identity(dim)),
        RepresentationMode::Pretrained => {
            let path = cfg.out.join(RM_CHECKPOINT);
            let c = Container::load(&path).with_context(|| format!("loading {} (run pretrain-rm first)", path.display()))?;
            Ok(c.embedding("rm")?)
        }
    }
}

/// Maps every pool sample through the representation model.
pub fn embed_pools(rm: &EmbeddingParams, pools: &[ClassPool]) -> Result<Vec<ClassPool>> {
    pools
        .iter()
        .map(|p| {
            Ok(ClassPool {
                samples: embed(rm, &p.samples)?,
                ..p.clone()
            })
        })
        .collect()
}

/// Pools in feature space together with their split.
pub fn feature_pools(cfg: &RunConfig) -> Result<(Vec<ClassPool>, MetaSplit)> {
    let raw = load_pools(cfg)?;
    let split = split(cfg, &raw)?;
    let rm = representation(cfg, validate_pools(&raw)?)?;
    Ok((embed_pools(&rm, &raw)?, split))
}

/// The paired metatest problem set shared by every benchmark row.
pub fn metatest_problems(cfg: &RunConfig, pools: &[ClassPool], split: &MetaSplit) -> Result<Vec<Episode>> {
    let sampler = EpisodeSampler::new(pools, split, Stage::MetaTest)?;
    Ok(sampler.problem_set(&cfg.episode, cfg.eval.problems, cfg.test_set_seed())?)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes the synthetic pools as an embedding CSV.
pub fn gen_data(cfg: &RunConfig, output: Option<PathBuf>) -> Result<PathBuf> {
    if cfg.data.source != DataSource::Synthetic {
        bail!("gen-data needs data.source = \"synthetic\"");
    }
    let pools = load_pools(cfg)?;
    let path = output.unwrap_or_else(|| cfg.out.join(POOLS_FILE));
    let mut w = create(&path)?;
    write_embedding_pools(&mut w, &pools, Some(&format!("config={}", cfg.digest())))?;
    w.flush()?;
    let groups: BTreeSet<u32> = pools.iter().map(|p| p.group_id).collect();
    let samples: usize = pools.iter().map(ClassPool::len).sum();
    println!(
        "wrote {}: {} groups, {} classes, {} samples",
        path.display(),
        groups.len(),
        pools.len(),
        samples
    );
    Ok(path)
}

/// Pretrains and saves the representation model.
pub fn pretrain_rm(cfg: &RunConfig) -> Result<PathBuf> {
    let raw = load_pools(cfg)?;
    let split = split(cfg, &raw)?;
    let outcome = pretrain_embedding(&raw, &split, &cfg.episode, &cfg.pretrain_config())?;
    if !outcome.accessed_classes.is_subset(&split.train) {
        bail!("pretraining read classes outside metatrain");
    }
    let mut c = Container::new(cfg.digest());
    c.put_embedding("rm", &outcome.params);
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(RM_CHECKPOINT);
    c.save(&path)?;
    if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
        println!("pretrain loss {first:.4} -> {last:.4} over {} epochs", outcome.losses.len());
    }
    println!("wrote {}", path.display());
    Ok(path)
}

/// Meta-trains the configured strategy into `<out>/<strategy>/`.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<TrainOutcome> {
    let (pools, split) = feature_pools(cfg)?;
    let tcfg = cfg.train_config();
    let dir = cfg.strategy_dir(&tcfg.strategy);
    let digest = cfg.digest();
    let state = if resume {
        let path = dir.join(LAST_CHECKPOINT);
        let c = Container::load(&path).with_context(|| format!("resuming from {}", path.display()))?;
        if c.digest != digest {
            bail!("{} was written by config {}, current config is {digest}", path.display(), c.digest);
        }
        Some(TrainState::from_container(&c)?)
    } else {
        None
    };
    let sink = CheckpointSink { dir: &dir, digest: &digest };
    let outcome = meta_train(&tcfg, &pools, &split, &cfg.episode, state, Some(&sink))?;
    if !outcome.accessed_classes.is_disjoint(&split.test) {
        bail!("training read metatest classes");
    }
    for row in &outcome.state.curve {
        if let Some((acc, multi)) = row.metaval {
            println!(
                "epoch {:>4}  loss {:+.4}  reward {:.4}  metaval accuracy {:.4}  multi-class {:.3}",
                row.epoch, row.stats.mean_loss, row.stats.mean_reward, acc, multi
            );
        }
    }
    println!(
        "best metaval accuracy {:.4} at epoch {}; wrote {}",
        outcome.state.best_val_accuracy,
        outcome.state.best_epoch,
        dir.join(BEST_CHECKPOINT).display()
    );
    Ok(outcome)
}

/// Loads the best checkpoint of every learned row.
pub fn load_checkpoints(cfg: &RunConfig) -> Result<BTreeMap<String, ScorerParams>> {
    let mut out = BTreeMap::new();
    for spec in cfg.eval.strategies.iter().filter(|s| s.is_trainable()) {
        let path = cfg.strategy_dir(spec).join(BEST_CHECKPOINT);
        if !path.exists() {
            bail!(poolsel_core::Error::MissingCheckpoint(format!("{} ({})", spec.name(), path.display())));
        }
        out.insert(spec.name(), Container::load(&path)?.scorer("scorer")?);
    }
    Ok(out)
}

/// Runs the benchmark and writes the results CSV (and optionally the
/// per-episode log).
pub fn eval(cfg: &RunConfig, per_episode: bool) -> Result<Benchmark> {
    let checkpoints = load_checkpoints(cfg)?;
    let (pools, split) = feature_pools(cfg)?;
    let problems = metatest_problems(cfg, &pools, &split)?;
    let digest = cfg.digest();
    let mut bench = run_benchmark(&cfg.eval.strategies, &checkpoints, &problems, cfg.eval_seed(), &digest)?;
    // Report the master seed: it reproduces the whole run.
    for r in &mut bench.reports {
        r.seed = cfg.seed;
    }
    let path = cfg.out.join(RESULTS_FILE);
    let mut w = create(&path)?;
    write_results_csv(&mut w, &bench.reports, &digest)?;
    w.flush()?;
    if per_episode {
        let p = cfg.out.join(PER_EPISODE_FILE);
        let mut w = create(&p)?;
        write_per_episode_csv(&mut w, &bench, &digest)?;
        w.flush()?;
        println!("wrote {}", p.display());
    }
    print!("{}", summary(&bench.reports));
    println!("wrote {}", path.display());
    Ok(bench)
}

/// Exhaustive oracle over the metatest problems.
pub fn oracle_scan(cfg: &RunConfig) -> Result<Vec<EpisodeRecord>> {
    let (pools, split) = feature_pools(cfg)?;
    let problems = metatest_problems(cfg, &pools, &split)?;
    let mut records = Vec::with_capacity(problems.len());
    for (i, ep) in problems.iter().enumerate() {
        let (s, o) = select_best_oracle(ep, DEFAULT_ENUMERATION_LIMIT)?;
        records.push(EpisodeRecord {
            episode: i,
            multi_class: poolsel_core::evaluation::is_multi_class(&ep.reveal(&s.indices)),
            indices: s.indices,
            cross_entropy: o.cross_entropy,
            accuracy: o.accuracy,
        });
    }
    let path = cfg.out.join(ORACLE_SCAN_FILE);
    let mut w = create(&path)?;
    writeln!(w, "# config={}", cfg.digest())?;
    writeln!(w, "episode,cross_entropy,accuracy,multi_class,indices")?;
    for r in &records {
        let idx: Vec<String> = r.indices.iter().map(usize::to_string).collect();
        writeln!(w, "{},{},{},{},{}", r.episode, r.cross_entropy, r.accuracy, u8::from(r.multi_class), idx.join(";"))?;
    }
    w.flush()?;
    let n = records.len() as f64;
    println!(
        "oracle over {} problems: mean cross-entropy {:.4}, accuracy {:.4}, multi-class {:.4}",
        records.len(),
        records.iter().map(|r| r.cross_entropy).sum::<f64>() / n,
        records.iter().map(|r| r.accuracy).sum::<f64>() / n,
        records.iter().filter(|r| r.multi_class).count() as f64 / n
    );
    println!("wrote {}", path.display());
    Ok(records)
}

/// Max relative error of one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub strategy: String,
    pub group: String,
    pub max_rel_error: f64,
}

/// Finite-difference check of the full exhaustive episode loss for every
/// trainable strategy on a small episode with the identity representation.
pub fn grad_check_report(cfg: &RunConfig) -> Result<Vec<GroupError>> {
    let gc = &cfg.grad_check;
    let episode_cfg = EpisodeConfig {
        n: gc.n,
        b: gc.b,
        ..cfg.episode
    };
    let raw = load_pools(cfg)?;
    let split = split(cfg, &raw)?;
    let sampler = EpisodeSampler::new(&raw, &split, Stage::MetaTrain)?;
    let episode = sampler.sample(&episode_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let names = ScorerParams::names();
    let mut out = Vec::new();
    for spec in [
        StrategySpec::sample_focused(),
        StrategySpec::iterative_unordered(),
        StrategySpec::iterative_ordered(),
        StrategySpec::combinatorial(),
    ] {
        let input_dim = spec.input_dim(episode.dim(), episode.b);
        let params = ScorerParams::init(input_dim, gc.hidden, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        let leaves: Vec<_> = params.trainable().into_iter().cloned().collect();
        let report = grad_check(
            |tape: &mut Tape, vars: &[Var]| {
                let sv = ScorerVars::from_leaves(&params, tape, vars);
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                episode_loss(tape, &spec, &sv, &episode, LossMode::exhaustive(), &mut rng).map(|o| o.loss)
            },
            &leaves,
            gc.eps,
        )?;
        for (name, err) in names.iter().zip(&report.per_param) {
            out.push(GroupError {
                strategy: spec.name(),
                group: name.clone(),
                max_rel_error: *err,
            });
        }
    }
    Ok(out)
}

/// Prints the per-group report; errors when any group exceeds the tolerance.
pub fn grad_check_cmd(cfg: &RunConfig) -> Result<()> {
    let report = grad_check_report(cfg)?;
    let tol = cfg.grad_check.tolerance;
    let mut failed = Vec::new();
    for g in &report {
        let ok = g.max_rel_error < tol;
        println!(
            "{:<22} {:<8} {:.3e} {}",
            g.strategy,
            g.group,
            g.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(format!("{}/{}", g.strategy, g.group));
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed at tolerance {tol:e}: {}", failed.join(", "));
    }
    println!("gradient check passed at tolerance {tol:e}");
    Ok(())
}
