use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{episode_loss, EpisodeLoss, Exploration, LossMode};
use super::optimizer::{Optimizer, OptimizerKind};
use crate::container::Container;
use crate::episodes::{ClassPool, Episode, EpisodeConfig, EpisodeSampler, MetaSplit, Stage};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_strategy;
use crate::numerics::{Tape, Tensor};
use crate::scorer::{ScorerParams, DEFAULT_HIDDEN};
use crate::selection::StrategySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: StrategySpec,
    pub epochs: usize,
    pub problems_per_epoch: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub exploration: Exploration,
    /// Draws per episode in monte-carlo mode.
    pub mc_samples: usize,
    /// Leave-one-out mean-reward baseline (monte-carlo only).
    pub baseline: bool,
    pub hidden: usize,
    /// Size of the fixed metatrain problem set epochs draw from; 0 samples
    /// fresh problems every epoch.
    pub train_problems: usize,
    pub val_problems: usize,
    /// Metaval evaluation period in epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: StrategySpec::iterative_ordered(),
            epochs: 200,
            problems_per_epoch: 50,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            exploration: Exploration::ExhaustiveWeighted,
            mc_samples: 16,
            baseline: false,
            hidden: DEFAULT_HIDDEN,
            train_problems: 4000,
            val_problems: 500,
            eval_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if !self.strategy.is_trainable() {
            return Err(Error::InvalidArgument(format!("strategy {} is not trainable", self.strategy)));
        }
        if self.problems_per_epoch == 0 {
            return Err(Error::InvalidArgument("problems_per_epoch must be at least 1".into()));
        }
        if self.exploration == Exploration::MonteCarlo && self.mc_samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
        }
        if self.hidden == 0 || self.val_problems == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument("hidden, val_problems and eval_every must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        Ok(())
    }

    pub fn loss_mode(&self) -> LossMode {
        LossMode {
            exploration: self.exploration,
            samples: self.mc_samples,
            baseline: self.baseline,
        }
    }
}

/// Deterministic sub-seed for an independent purpose.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const INIT_STREAM: u64 = 1;
const TRAIN_SET_STREAM: u64 = 2;
const VAL_SET_STREAM: u64 = 3;
const EPOCH_STREAM: u64 = 4;
const DRAW_STREAM: u64 = 5;
const VAL_EVAL_STREAM: u64 = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub mean_reward: f64,
    pub mean_accuracy: f64,
    pub mean_multi_class: f64,
}

/// Averages the episode losses, backpropagates once and applies one
/// optimizer step. Episodes run in parallel; gradients are reduced in
/// episode order. `draw_seed` seeds the monte-carlo draws (episode `i` uses
/// stream `i`).
pub fn train_epoch(
    spec: &StrategySpec,
    params: &mut ScorerParams,
    episodes: &[Episode],
    optimizer: &mut Optimizer,
    mode: LossMode,
    draw_seed: u64,
) -> Result<EpochStats> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("an epoch needs at least one episode".into()));
    }
    let snapshot: &ScorerParams = params;
    let per_episode: Vec<(Vec<Tensor>, EpisodeLoss, f64)> = episodes
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
            rng.set_stream(i as u64);
            let mut tape = Tape::new();
            let vars = snapshot.register(&mut tape);
            let out = episode_loss(&mut tape, spec, &vars, ep, mode, &mut rng)?;
            let grads = tape.backward(out.loss)?;
            let loss = tape.value(out.loss).item();
            Ok((vars.gradients(&grads), out, loss))
        })
        .collect::<Result<_>>()?;

    let n = episodes.len() as f64;
    let mut total: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut stats = EpochStats::default();
    for (grads, out, loss) in &per_episode {
        for (acc, g) in total.iter_mut().zip(grads) {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        stats.mean_loss += loss;
        stats.mean_reward += out.reward;
        stats.mean_accuracy += out.accuracy;
        stats.mean_multi_class += out.multi_class;
    }
    for t in &mut total {
        t.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    stats.mean_loss /= n;
    stats.mean_reward /= n;
    stats.mean_accuracy /= n;
    stats.mean_multi_class /= n;
    optimizer.step(&mut params.tensors_mut(), &total)?;
    Ok(stats)
}

/// One line of the training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub stats: EpochStats,
    /// `(accuracy, multi-class ratio)` on the metaval set, on evaluation epochs.
    pub metaval: Option<(f64, f64)>,
}

/// Everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Last completed epoch.
    pub epoch: usize,
    pub params: ScorerParams,
    pub optimizer: Optimizer,
    pub best_params: ScorerParams,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub curve: Vec<CurveRow>,
}

impl TrainState {
    pub fn to_container(&self, spec: &StrategySpec, digest: &str) -> Container {
        let mut c = Container::new(digest);
        c.set_meta("strategy", spec.name());
        c.put_scorer("scorer", &self.params);
        c.put_scorer("best", &self.best_params);
        c.put_optimizer("optimizer", &self.optimizer);
        c.push(
            "progress",
            Tensor::row(vec![self.epoch as f64, self.best_epoch as f64, self.best_val_accuracy]),
        );
        let rows: Vec<Vec<f64>> = self
            .curve
            .iter()
            .map(|r| {
                let (a, m) = r.metaval.unwrap_or((f64::NAN, f64::NAN));
                vec![r.epoch as f64, r.stats.mean_loss, r.stats.mean_reward, r.stats.mean_accuracy, r.stats.mean_multi_class, a, m]
            })
            .collect();
        let curve = if rows.is_empty() {
            Tensor::zeros(&[0, 7])
        } else {
            Tensor::from_rows(&rows).expect("rectangular curve")
        };
        c.push("curve", curve);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let progress = c.get("progress")?.data();
        if progress.len() != 3 {
            return Err(Error::Container("progress must hold three values".into()));
        }
        let curve_t = c.get("curve")?;
        let curve = curve_t
            .data()
            .chunks_exact(7)
            .map(|r| CurveRow {
                epoch: r[0] as usize,
                stats: EpochStats {
                    mean_loss: r[1],
                    mean_reward: r[2],
                    mean_accuracy: r[3],
                    mean_multi_class: r[4],
                },
                metaval: if r[5].is_nan() { None } else { Some((r[5], r[6])) },
            })
            .collect();
        Ok(Self {
            epoch: progress[0] as usize,
            params: c.scorer("scorer")?,
            optimizer: c.optimizer("optimizer")?,
            best_params: c.scorer("best")?,
            best_epoch: progress[1] as usize,
            best_val_accuracy: progress[2],
            curve,
        })
    }
}

/// Where meta-training persists its outputs.
pub struct CheckpointSink<'a> {
    pub dir: &'a Path,
    pub digest: &'a str,
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const CURVE_FILE: &str = "curve.csv";

impl CheckpointSink<'_> {
    fn persist(&self, spec: &StrategySpec, state: &TrainState) -> Result<()> {
        fs::create_dir_all(self.dir)?;
        let mut best = Container::new(self.digest);
        best.set_meta("strategy", spec.name());
        best.set_meta("best_epoch", state.best_epoch.to_string());
        best.put_scorer("scorer", &state.best_params);
        best.save(&self.dir.join(BEST_CHECKPOINT))?;
        state.to_container(spec, self.digest).save(&self.dir.join(LAST_CHECKPOINT))?;
        let path = self.dir.join(CURVE_FILE);
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        write_curve_csv(&mut f, &state.curve, self.digest)?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}

/// Writes `epoch,mean_loss,mean_reward,metaval_accuracy,metaval_multiclass`;
/// metaval fields are empty on epochs without an evaluation.
pub fn write_curve_csv<W: Write>(out: &mut W, curve: &[CurveRow], digest: &str) -> Result<()> {
    writeln!(out, "# config={digest}")?;
    writeln!(out, "epoch,mean_loss,mean_reward,metaval_accuracy,metaval_multiclass")?;
    for r in curve {
        let (a, m) = match r.metaval {
            Some((a, m)) => (a.to_string(), m.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{},{},{},{a},{m}", r.epoch, r.stats.mean_loss, r.stats.mean_reward)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Classes read while training and validating.
    pub accessed_classes: BTreeSet<u32>,
    /// Classes read while validating only.
    pub val_classes: BTreeSet<u32>,
}

/// The initial scorer for a configuration and feature dimension.
pub fn initial_params(cfg: &TrainConfig, dim: usize, b: usize) -> Result<ScorerParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, INIT_STREAM));
    ScorerParams::init(cfg.strategy.input_dim(dim, b), cfg.hidden, &mut rng)
}

/// Meta-trains a selection policy on `pools` (already in feature space).
///
/// Each epoch draws `problems_per_epoch` problems from the metatrain
/// universe and takes one optimizer step. The metaval set is fixed and is
/// evaluated before training and every `eval_every` epochs; the
/// best-accuracy parameters are kept (ties keep the earlier epoch). With a
/// sink, checkpoints and the curve are persisted after every evaluation.
pub fn meta_train(
    cfg: &TrainConfig,
    pools: &[ClassPool],
    split: &MetaSplit,
    episode_cfg: &EpisodeConfig,
    resume: Option<TrainState>,
    sink: Option<&CheckpointSink<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    episode_cfg.validate()?;
    let train_sampler = EpisodeSampler::new(pools, split, Stage::MetaTrain)?;
    let val_sampler = EpisodeSampler::new(pools, split, Stage::MetaVal)?;
    let val_set = val_sampler.problem_set(episode_cfg, cfg.val_problems, sub_seed(cfg.seed, VAL_SET_STREAM))?;
    let train_set = if cfg.train_problems > 0 {
        train_sampler.problem_set(episode_cfg, cfg.train_problems, sub_seed(cfg.seed, TRAIN_SET_STREAM))?
    } else {
        Vec::new()
    };
    let dim = val_set[0].dim();
    let val_seed = sub_seed(cfg.seed, VAL_EVAL_STREAM);
    let validate = |p: &ScorerParams| -> Result<(f64, f64)> {
        let (report, _) = evaluate_strategy(&cfg.strategy, Some(p), &val_set, val_seed, "")?;
        Ok((report.mean_accuracy, report.multi_class_ratio))
    };

    let mut state = match resume {
        Some(s) => {
            if s.params.input_dim() != cfg.strategy.input_dim(dim, episode_cfg.b) || s.params.hidden() != cfg.hidden {
                return Err(Error::InvalidArgument("resume state does not match the configuration".into()));
            }
            s
        }
        None => {
            let params = initial_params(cfg, dim, episode_cfg.b)?;
            let (acc, _) = validate(&params)?;
            TrainState {
                epoch: 0,
                optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate),
                best_params: params.clone(),
                params,
                best_epoch: 0,
                best_val_accuracy: acc,
                curve: Vec::new(),
            }
        }
    };
    if let Some(sink) = sink {
        sink.persist(&cfg.strategy, &state)?;
    }

    let mode = cfg.loss_mode();
    for epoch in state.epoch + 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, EPOCH_STREAM));
        rng.set_stream(epoch as u64);
        let episodes: Vec<Episode> = if train_set.is_empty() {
            (0..cfg.problems_per_epoch)
                .map(|_| train_sampler.sample(episode_cfg, &mut rng))
                .collect::<Result<_>>()?
        } else {
            (0..cfg.problems_per_epoch)
                .map(|_| train_set[rng.random_range(0..train_set.len())].clone())
                .collect()
        };
        let draw_seed = sub_seed(sub_seed(cfg.seed, DRAW_STREAM), epoch as u64);
        let stats = train_epoch(&cfg.strategy, &mut state.params, &episodes, &mut state.optimizer, mode, draw_seed)?;
        let evaluate_now = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let metaval = if evaluate_now {
            let (acc, multi) = validate(&state.params)?;
            if acc > state.best_val_accuracy {
                state.best_val_accuracy = acc;
                state.best_epoch = epoch;
                state.best_params = state.params.clone();
            }
            Some((acc, multi))
        } else {
            None
        };
        state.curve.push(CurveRow { epoch, stats, metaval });
        state.epoch = epoch;
        if evaluate_now {
            if let Some(sink) = sink {
                sink.persist(&cfg.strategy, &state)?;
            }
        }
    }

    let val_classes = val_sampler.accessed_classes();
    let mut accessed = train_sampler.accessed_classes();
    accessed.extend(val_classes.iter().copied());
    Ok(TrainOutcome {
        state,
        accessed_classes: accessed,
        val_classes,
    })
}
