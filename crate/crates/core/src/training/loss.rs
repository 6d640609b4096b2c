use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::evaluation::{is_multi_class, subset_outcome};
use crate::numerics::{Tape, Var};
use crate::prediction::PoolDistances;
use crate::scorer::ScorerVars;
use crate::selection::{draw_path, enumerate_paths, Policy, SelectorInput, StrategySpec};

/// How samplings are explored during meta-training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exploration {
    /// Every sampling, weighted by its probability: the exact expected-reward gradient.
    #[default]
    ExhaustiveWeighted,
    /// Score-function estimate from a fixed number of drawn samplings.
    MonteCarlo,
}

/// Exploration settings for one episode loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossMode {
    pub exploration: Exploration,
    /// Draws per episode in monte-carlo mode.
    pub samples: usize,
    /// Subtract the leave-one-out mean reward of the other draws (monte-carlo only).
    pub baseline: bool,
}

impl LossMode {
    pub fn exhaustive() -> Self {
        Self {
            exploration: Exploration::ExhaustiveWeighted,
            samples: 1,
            baseline: false,
        }
    }

    pub fn monte_carlo(samples: usize) -> Self {
        Self {
            exploration: Exploration::MonteCarlo,
            samples,
            baseline: false,
        }
    }
}

/// Traced loss of one episode plus policy statistics. In exhaustive mode the
/// statistics are expectations under the policy; in monte-carlo mode they
/// are averages over the draws.
#[derive(Clone, Debug)]
pub struct EpisodeLoss {
    pub loss: Var,
    pub reward: f64,
    pub accuracy: f64,
    pub multi_class: f64,
}

/// Policy-gradient loss of one episode.
///
/// Exhaustive mode returns `-sum_j p_j r_j`, the negated expected reward;
/// its gradient is `-sum_j r_j grad p_j`. Monte-carlo mode returns
/// `-(1/S) sum_j (r_j - b_j) log p_j` over `S` draws. Rewards are plain
/// numbers and never receive gradient.
pub fn episode_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    spec: &StrategySpec,
    vars: &ScorerVars,
    episode: &Episode,
    mode: LossMode,
    rng: &mut R,
) -> Result<EpisodeLoss> {
    let input = SelectorInput::new(episode);
    let mut policy = Policy::new(spec, vars, &input)?;
    let dist = PoolDistances::new(&episode.train, &episode.test);
    let out = match mode.exploration {
        Exploration::ExhaustiveWeighted => {
            let paths = enumerate_paths(&mut policy, tape)?;
            let mut terms = Vec::with_capacity(paths.len());
            let (mut reward, mut accuracy, mut multi) = (0.0, 0.0, 0.0);
            for path in &paths {
                let o = subset_outcome(&dist, episode, &path.subset);
                terms.push(tape.scale(path.prob, -o.reward));
                reward += path.prob_value * o.reward;
                accuracy += path.prob_value * o.accuracy;
                if is_multi_class(&episode.reveal(&path.subset)) {
                    multi += path.prob_value;
                }
            }
            EpisodeLoss {
                loss: sum_scalars(tape, &terms)?,
                reward,
                accuracy,
                multi_class: multi,
            }
        }
        Exploration::MonteCarlo => {
            if mode.samples == 0 {
                return Err(Error::InvalidArgument("monte-carlo exploration needs at least one draw".into()));
            }
            let s = mode.samples;
            let mut draws = Vec::with_capacity(s);
            for _ in 0..s {
                let path = draw_path(&mut policy, tape, rng)?;
                let o = subset_outcome(&dist, episode, &path.subset);
                draws.push((path, o));
            }
            let total: f64 = draws.iter().map(|(_, o)| o.reward).sum();
            let mut terms = Vec::with_capacity(s);
            for (path, o) in &draws {
                let b = if mode.baseline && s > 1 {
                    (total - o.reward) / (s - 1) as f64
                } else {
                    0.0
                };
                terms.push(tape.scale(path.log_prob, -(o.reward - b) / s as f64));
            }
            let n = s as f64;
            EpisodeLoss {
                loss: sum_scalars(tape, &terms)?,
                reward: total / n,
                accuracy: draws.iter().map(|(_, o)| o.accuracy).sum::<f64>() / n,
                multi_class: draws.iter().filter(|(p, _)| is_multi_class(&episode.reveal(&p.subset))).count() as f64 / n,
            }
        }
    };
    if !tape.value(out.loss).item().is_finite() {
        return Err(Error::NonFinite(format!(
            "episode loss (group {}, classes {:?}, train {:?}, test {:?})",
            episode.group_id, episode.classes, episode.train, episode.test
        )));
    }
    Ok(out)
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}
