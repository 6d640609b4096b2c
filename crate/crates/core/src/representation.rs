//! Representation model surrogate: a frozen affine embedding, per-episode
//! feature scaling and the selected-flag column.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episodes::{ClassPool, Episode, EpisodeConfig, EpisodeSampler, MetaSplit, Stage};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::prediction::{accuracy, LabeledSelection, PROBABILITY_FLOOR};
use crate::training::{Optimizer, OptimizerKind};

/// Row-wise affine map `x -> x W + b` from `F_raw` to `F` features.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    weight: Tensor,
    bias: Tensor,
    frozen: bool,
}

impl EmbeddingParams {
    pub fn identity(dim: usize) -> Self {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        Self {
            weight: w,
            bias: Tensor::zeros(&[1, dim]),
            frozen: false,
        }
    }

    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (_, out) = weight.dims2().ok_or_else(|| Error::ShapeMismatch {
            op: "embedding",
            shapes: format!("weight {:?}", weight.shape()),
        })?;
        if bias.shape() != [1, out] {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                shapes: format!("weight {:?} vs bias {:?}", weight.shape(), bias.shape()),
            });
        }
        Ok(Self {
            weight,
            bias,
            frozen: false,
        })
    }

    /// Uniform Glorot initialisation for a map that cannot start as identity.
    pub fn random(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let data = (0..input_dim * output_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Tensor::new(vec![input_dim, output_dim], data).expect("shape"),
            bias: Tensor::zeros(&[1, output_dim]),
            frozen: false,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Restores a frozen map from stored tensors.
    pub fn frozen_from(weight: Tensor, bias: Tensor) -> Result<Self> {
        let mut p = Self::new(weight, bias)?;
        p.freeze();
        Ok(p)
    }

    /// One optimizer update; refused once frozen.
    pub fn train_step(&mut self, optimizer: &mut Optimizer, grads: &[Tensor; 2]) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        optimizer.step(&mut [&mut self.weight, &mut self.bias], grads)
    }
}

/// Applies the embedding to every row of `x`.
pub fn embed(params: &EmbeddingParams, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (fin, fout) = (params.input_dim(), params.output_dim());
    let w = params.weight.data();
    let b = params.bias.data();
    x.iter()
        .map(|row| {
            if row.len() != fin {
                return Err(Error::ShapeMismatch {
                    op: "embed",
                    shapes: format!("row of {} features vs map input {fin}", row.len()),
                });
            }
            let mut out = b.to_vec();
            for (p, &xv) in row.iter().enumerate() {
                for (o, wv) in out.iter_mut().zip(&w[p * fout..(p + 1) * fout]) {
                    *o += xv * wv;
                }
            }
            Ok(out)
        })
        .collect()
}

/// Embeds the train and test features of an episode.
pub fn embed_episode(params: &EmbeddingParams, episode: &Episode) -> Result<Episode> {
    let mut out = episode.clone();
    out.train = embed(params, &episode.train)?;
    out.test = embed(params, &episode.test)?;
    Ok(out)
}

/// Per-dimension min-max map onto `[-1, 1]`, fitted on one set of rows and
/// reusable for any other vector of the same episode.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl UnitScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Self { min, max }
    }

    /// `2 (x - min) / (max - min) - 1`; constant dimensions map to 0.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let range = self.max[j] - self.min[j];
                if range > 0.0 {
                    2.0 * (v - self.min[j]) / range - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

/// Scales a pool onto `[-1, 1]` per dimension using its own statistics.
pub fn scale_to_unit_range(u: &[Vec<f64>]) -> (Vec<Vec<f64>>, UnitScaler) {
    let scaler = UnitScaler::fit(u);
    (scaler.apply_all(u), scaler)
}

/// Appends the selected flag: the feature dimension `F` for selected rows,
/// 0 otherwise.
pub fn append_selected_flag(u_scaled: &[Vec<f64>], selected: &[bool]) -> Result<Vec<Vec<f64>>> {
    if u_scaled.len() != selected.len() {
        return Err(Error::ShapeMismatch {
            op: "append_selected_flag",
            shapes: format!("{} rows vs {} flags", u_scaled.len(), selected.len()),
        });
    }
    Ok(u_scaled
        .iter()
        .zip(selected)
        .map(|(row, &s)| {
            let mut out = Vec::with_capacity(row.len() + 1);
            out.extend_from_slice(row);
            out.push(if s { row.len() as f64 } else { 0.0 });
            out
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub problems_per_epoch: usize,
    pub learning_rate: f64,
    /// Output feature dimension; `None` keeps the input dimension and starts
    /// from the identity map.
    pub output_dim: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            problems_per_epoch: 50,
            learning_rate: 1e-2,
            output_dim: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: EmbeddingParams,
    /// Mean cross-entropy of every epoch.
    pub losses: Vec<f64>,
    /// Class ids read while pretraining.
    pub accessed_classes: BTreeSet<u32>,
}

/// Cross-entropy of the inverse-distance classifier that labels the whole
/// train pool, recorded on `tape` as a function of the embedding leaves.
fn full_supervision_loss(tape: &mut Tape, weight: Var, bias: Var, episode: &Episode) -> Result<Var> {
    let x = tape.constant(Tensor::from_rows(&episode.train)?);
    let t = tape.constant(Tensor::from_rows(&episode.test)?);
    let e = tape.matmul(x, weight)?;
    let e = tape.add(e, bias)?;
    let q = tape.matmul(t, weight)?;
    let q = tape.add(q, bias)?;

    let e_sq = tape.mul(e, e)?;
    let e_norm = tape.sum_axis(e_sq, 1)?;
    let e_norm = tape.transpose(e_norm)?;
    let q_sq = tape.mul(q, q)?;
    let q_norm = tape.sum_axis(q_sq, 1)?;
    let e_t = tape.transpose(e)?;
    let cross = tape.matmul(q, e_t)?;
    let d2 = tape.scale(cross, -2.0);
    let d2 = tape.add(d2, q_norm)?;
    let d2 = tape.add(d2, e_norm)?;
    // Floor at (1e-9)^2, the same distance floor as the prediction model.
    let d2 = tape.clamp_min(d2, 1e-18);
    let dist = tape.sqrt(d2);
    let inv = tape.recip(dist);

    let (n, k, m) = (episode.n(), episode.k, episode.m());
    let mut onehot = vec![0.0; n * k];
    for (i, &l) in episode.oracle_labels().iter().enumerate() {
        onehot[i * k + l] = 1.0;
    }
    let y = tape.constant(Tensor::new(vec![n, k], onehot)?);
    let mass = tape.matmul(inv, y)?;
    let total = tape.sum_axis(mass, 1)?;
    let total_inv = tape.recip(total);
    let probs = tape.mul(mass, total_inv)?;
    let idx: Vec<usize> = episode.test_labels.iter().enumerate().map(|(i, &l)| i * k + l).collect();
    let picked = tape.gather(probs, &idx)?;
    let picked = tape.clamp_min(picked, PROBABILITY_FLOOR);
    let logp = tape.log(picked);
    let s = tape.sum(logp);
    Ok(tape.scale(s, -1.0 / m as f64))
}

/// Mean accuracy of the inverse-distance classifier given every train label.
pub fn full_supervision_accuracy(params: &EmbeddingParams, episodes: &[Episode]) -> Result<f64> {
    let mut total = 0.0;
    for ep in episodes {
        let e = embed_episode(params, ep)?;
        let sel = LabeledSelection::new(e.train.clone(), e.oracle_labels().to_vec(), e.k)?;
        total += accuracy(&crate::prediction::predict(&sel, &e.test), &e.test_labels);
    }
    Ok(total / episodes.len().max(1) as f64)
}

/// Trains the affine map on metatrain classification episodes, then freezes it.
pub fn pretrain_embedding(
    pools: &[ClassPool],
    split: &MetaSplit,
    episode_cfg: &EpisodeConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    let sampler = EpisodeSampler::new(pools, split, Stage::MetaTrain)?;
    let input_dim = crate::episodes::validate_pools(pools)?;
    let mut params = match cfg.output_dim {
        None => EmbeddingParams::identity(input_dim),
        Some(out) if out == input_dim => EmbeddingParams::identity(input_dim),
        Some(out) => EmbeddingParams::random(input_dim, out, cfg.seed),
    };
    if cfg.problems_per_epoch == 0 {
        return Err(Error::InvalidArgument("problems_per_epoch must be at least 1".into()));
    }
    let mut optimizer = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let w = tape.param(params.weight.clone());
        let b = tape.param(params.bias.clone());
        let mut terms = Vec::with_capacity(cfg.problems_per_epoch);
        for _ in 0..cfg.problems_per_epoch {
            let ep = sampler.sample(episode_cfg, &mut rng)?;
            terms.push(full_supervision_loss(&mut tape, w, b, &ep)?);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        let loss = tape.scale(total, 1.0 / cfg.problems_per_epoch as f64);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "pretraining loss at epoch {epoch} (weights finite: {})",
                params.weight.all_finite()
            )));
        }
        let grads = tape.backward(loss)?;
        let g = [grads.wrt(w).expect("param").clone(), grads.wrt(b).expect("param").clone()];
        params.train_step(&mut optimizer, &g)?;
        losses.push(value);
    }
    params.freeze();
    Ok(PretrainOutcome {
        params,
        losses,
        accessed_classes: sampler.accessed_classes(),
    })
}
