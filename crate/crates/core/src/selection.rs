//! Selection strategies: random, sample-focused, iterative, combinatorial and
//! the exhaustive oracle.
//!
//! Learned strategies are expressed as a [`Policy`]: a tree of step
//! distributions. Sample-focused and iterative policies take `B` steps over
//! the `N` pool samples; the combinatorial policy takes a single step over
//! whole subsets. Meta-test selection follows the most probable branch;
//! meta-training enumerates or samples root-to-leaf paths.

use std::cmp::Ordering as CmpOrdering;
use std::collections::HashMap;
use std::fmt;

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var, MASK_LOGIT};
use crate::prediction::{euclidean, PoolDistances, SubsetOutcome};
use crate::representation::{append_selected_flag, UnitScaler};
use crate::scorer::{score_sequence, ScoreDistribution, ScorerParams, ScorerVars};

pub const DEFAULT_ENUMERATION_LIMIT: usize = 10_000;

/// Reference used to impose an order on the scorer input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// Keep the pool order.
    #[default]
    None,
    /// Ascending distance to the train-pool centroid.
    PoolCentroid,
    /// Ascending distance to the centroid of the samples selected so far
    /// (pool centroid while nothing is selected). Iterative only.
    SelectedCentroid,
}

/// Centroid the combinatorial strategy orders by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CentroidSource {
    #[default]
    Train,
    /// The test-set centroid (literal replication option; reads test features).
    Test,
}

/// Elements the combinatorial strategy scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Enumeration {
    /// The `C(N, B)` unordered subsets.
    #[default]
    Subsets,
    /// All `N^B` ordered tuples; tuples that repeat a sample are masked.
    OrderedTuples,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Random,
    SampleFocused,
    Iterative,
    Combinatorial,
    Best,
}

/// A fully specified selection strategy.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    #[serde(default)]
    pub ordering: Ordering,
    #[serde(default)]
    pub centroid: CentroidSource,
    #[serde(default)]
    pub enumeration: Enumeration,
    #[serde(default = "default_limit")]
    pub enumeration_limit: usize,
}

fn default_limit() -> usize {
    DEFAULT_ENUMERATION_LIMIT
}

impl StrategySpec {
    fn of(kind: StrategyKind, ordering: Ordering) -> Self {
        Self {
            kind,
            ordering,
            centroid: CentroidSource::Train,
            enumeration: Enumeration::Subsets,
            enumeration_limit: DEFAULT_ENUMERATION_LIMIT,
        }
    }

    pub fn random() -> Self {
        Self::of(StrategyKind::Random, Ordering::None)
    }

    pub fn sample_focused() -> Self {
        Self::of(StrategyKind::SampleFocused, Ordering::None)
    }

    pub fn iterative_unordered() -> Self {
        Self::of(StrategyKind::Iterative, Ordering::None)
    }

    pub fn iterative_ordered() -> Self {
        Self::of(StrategyKind::Iterative, Ordering::SelectedCentroid)
    }

    /// Subsets ordered by their mean distance to the pool centroid.
    pub fn combinatorial() -> Self {
        Self::of(StrategyKind::Combinatorial, Ordering::PoolCentroid)
    }

    pub fn best() -> Self {
        Self::of(StrategyKind::Best, Ordering::None)
    }

    /// The six benchmark rows, in table order.
    pub fn benchmark_rows() -> Vec<StrategySpec> {
        vec![
            Self::random(),
            Self::sample_focused(),
            Self::iterative_unordered(),
            Self::iterative_ordered(),
            Self::combinatorial(),
            Self::best(),
        ]
    }

    /// Stable row name.
    pub fn name(&self) -> String {
        match self.kind {
            StrategyKind::Random => "random".into(),
            StrategyKind::Best => "best".into(),
            StrategyKind::SampleFocused => match self.ordering {
                Ordering::None => "sample-focused".into(),
                _ => "sample-focused-ordered".into(),
            },
            StrategyKind::Iterative => match self.ordering {
                Ordering::None => "iterative-unordered".into(),
                Ordering::SelectedCentroid => "iterative-ordered".into(),
                Ordering::PoolCentroid => "iterative-pool-ordered".into(),
            },
            StrategyKind::Combinatorial => {
                let mut name = String::from("combinatorial");
                if self.ordering == Ordering::None {
                    name.push_str("-unordered");
                }
                if self.centroid == CentroidSource::Test {
                    name.push_str("-test-centroid");
                }
                if self.enumeration == Enumeration::OrderedTuples {
                    name.push_str("-tuples");
                }
                name
            }
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(
            self.kind,
            StrategyKind::SampleFocused | StrategyKind::Iterative | StrategyKind::Combinatorial
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.ordering == Ordering::SelectedCentroid && self.kind != StrategyKind::Iterative {
            return Err(Error::InvalidArgument(format!(
                "selected-centroid ordering is only valid for the iterative strategy, not {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Scorer input dimension for feature dimension `dim` and budget `b`.
    pub fn input_dim(&self, dim: usize, b: usize) -> usize {
        match self.kind {
            StrategyKind::Iterative => dim + 1,
            StrategyKind::Combinatorial => b * dim,
            _ => dim,
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A selected subset of the train pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampling {
    /// Distinct pool indices in ascending order.
    pub indices: Vec<usize>,
    /// Log-probability under the policy that produced it, when known.
    pub log_prob: Option<f64>,
}

impl Sampling {
    pub fn new(mut indices: Vec<usize>, log_prob: Option<f64>) -> Self {
        indices.sort_unstable();
        Self { indices, log_prob }
    }

    pub fn check(&self, n: usize, b: usize) -> Result<()> {
        let distinct = self.indices.windows(2).all(|w| w[0] < w[1]);
        if self.indices.len() != b || !distinct || self.indices.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "sampling {:?} is not {b} distinct indices below {n}",
                self.indices
            )));
        }
        Ok(())
    }
}

/// Permutation sorting rows by ascending Euclidean distance to `reference`,
/// ties by original index.
pub fn order_by_distance(u: &[Vec<f64>], reference: &[f64]) -> Vec<usize> {
    let d: Vec<f64> = u.iter().map(|x| euclidean(x, reference)).collect();
    let mut perm: Vec<usize> = (0..u.len()).collect();
    perm.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    perm
}

fn centroid(rows: &[&[f64]]) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut c = vec![0.0; dim];
    for r in rows {
        for (a, v) in c.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    let n = rows.len().max(1) as f64;
    c.iter_mut().for_each(|a| *a /= n);
    c
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (pos, &i) in perm.iter().enumerate() {
        inv[i] = pos;
    }
    inv
}

/// Selector-side view of an episode: train features scaled onto `[-1, 1]`
/// with train-pool statistics, and the reference centroids.
#[derive(Clone, Debug)]
pub struct SelectorInput {
    pub scaled: Vec<Vec<f64>>,
    pub pool_centroid: Vec<f64>,
    pub test_centroid: Vec<f64>,
    pub b: usize,
}

impl SelectorInput {
    pub fn new(episode: &Episode) -> Self {
        let scaler = UnitScaler::fit(&episode.train);
        let scaled = scaler.apply_all(&episode.train);
        let pool_centroid = centroid(&scaled.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let test_centroid = scaler.apply(&centroid(&episode.test.iter().map(Vec::as_slice).collect::<Vec<_>>()));
        Self {
            scaled,
            pool_centroid,
            test_centroid,
            b: episode.b,
        }
    }

    pub fn n(&self) -> usize {
        self.scaled.len()
    }

    pub fn dim(&self) -> usize {
        self.scaled.first().map_or(0, Vec::len)
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn check_limit(count: u128, limit: usize, what: &str) -> Result<()> {
    if count > limit as u128 {
        return Err(Error::EnumerationLimit {
            count,
            limit,
            hint: format!("reduce the budget or pool size ({what})"),
        });
    }
    Ok(())
}

/// One combinatorial sequence element.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinationElement {
    /// Pool indices in stacking order.
    pub members: Vec<usize>,
    /// Stacked scaled features, `B * F` values.
    pub input: Vec<f64>,
    /// Repeats a sample (ordered-tuple enumeration only); always masked.
    pub degenerate: bool,
}

impl CombinationElement {
    pub fn subset(&self) -> Vec<usize> {
        let mut s = self.members.clone();
        s.sort_unstable();
        s
    }
}

/// Builds the combinatorial sequence: every element's members stacked in
/// order of distance to `reference` (ordered tuples keep their own order),
/// and the sequence sorted by mean member distance with ties broken by the
/// sorted member list. The result does not depend on the order of `candidates`.
pub fn combination_sequence(
    candidates: Vec<Vec<usize>>,
    scaled: &[Vec<f64>],
    reference: Option<&[f64]>,
    reorder_members: bool,
) -> Vec<CombinationElement> {
    let dist: Vec<f64> = match reference {
        Some(r) => scaled.iter().map(|x| euclidean(x, r)).collect(),
        None => vec![0.0; scaled.len()],
    };
    let mut elements: Vec<(f64, Vec<usize>, CombinationElement)> = candidates
        .into_iter()
        .map(|mut members| {
            if reorder_members && reference.is_some() {
                members.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            }
            let input = members.iter().flat_map(|&i| scaled[i].iter().copied()).collect();
            let mean = members.iter().map(|&i| dist[i]).sum::<f64>() / members.len() as f64;
            let mut key = members.clone();
            key.sort_unstable();
            let degenerate = key.windows(2).any(|w| w[0] == w[1]);
            let mut canon = members.clone();
            if reorder_members {
                canon = key.clone();
            }
            (mean, canon, CombinationElement { members, input, degenerate })
        })
        .collect();
    if reference.is_some() {
        elements.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    } else {
        elements.sort_by(|a, b| a.1.cmp(&b.1));
    }
    elements.into_iter().map(|(_, _, e)| e).collect()
}

/// Candidate member lists in canonical (lexicographic) order.
fn combination_candidates(n: usize, b: usize, enumeration: Enumeration, limit: usize) -> Result<Vec<Vec<usize>>> {
    match enumeration {
        Enumeration::Subsets => {
            check_limit(binomial(n, b), limit, "C(N, B) subsets")?;
            Ok((0..n).combinations(b).collect())
        }
        Enumeration::OrderedTuples => {
            check_limit((n as u128).pow(b as u32), limit, "N^B tuples")?;
            Ok((0..b).map(|_| 0..n).multi_cartesian_product().collect())
        }
    }
}

/// Step distribution at one node of a policy tree.
#[derive(Clone, Debug)]
pub struct StepScores {
    /// Distribution on the tape, in sequence order (`L x 1`).
    pub alpha: Var,
    /// `position[c]` is the row of `alpha` holding choice `c`.
    pub position: Vec<usize>,
    /// Values indexed by choice.
    pub distribution: ScoreDistribution,
}

enum PolicyKind {
    SampleFocused { perm: Vec<usize>, logits: Option<Var> },
    Iterative,
    Combinatorial { elements: Vec<CombinationElement>, canonical: Vec<Vec<usize>> },
}

/// A learned strategy bound to one episode and one tape.
pub struct Policy<'a> {
    spec: &'a StrategySpec,
    vars: &'a ScorerVars,
    input: &'a SelectorInput,
    kind: PolicyKind,
    cache: HashMap<Vec<usize>, StepScores>,
}

impl<'a> Policy<'a> {
    pub fn new(spec: &'a StrategySpec, vars: &'a ScorerVars, input: &'a SelectorInput) -> Result<Self> {
        spec.validate()?;
        let kind = match spec.kind {
            StrategyKind::SampleFocused => {
                let perm = match spec.ordering {
                    Ordering::None => (0..input.n()).collect(),
                    _ => order_by_distance(&input.scaled, &input.pool_centroid),
                };
                PolicyKind::SampleFocused { perm, logits: None }
            }
            StrategyKind::Iterative => PolicyKind::Iterative,
            StrategyKind::Combinatorial => {
                let canonical = combination_candidates(input.n(), input.b, spec.enumeration, spec.enumeration_limit)?;
                let reference = match (spec.ordering, spec.centroid) {
                    (Ordering::None, _) => None,
                    (_, CentroidSource::Train) => Some(input.pool_centroid.as_slice()),
                    (_, CentroidSource::Test) => Some(input.test_centroid.as_slice()),
                };
                let reorder = spec.enumeration == Enumeration::Subsets;
                let elements = combination_sequence(canonical.clone(), &input.scaled, reference, reorder);
                PolicyKind::Combinatorial { elements, canonical }
            }
            StrategyKind::Random | StrategyKind::Best => {
                return Err(Error::InvalidArgument(format!("{} has no learned policy", spec.name())));
            }
        };
        Ok(Self {
            spec,
            vars,
            input,
            kind,
            cache: HashMap::new(),
        })
    }

    /// Number of steps from root to leaf.
    pub fn depth(&self) -> usize {
        match self.kind {
            PolicyKind::Combinatorial { .. } => 1,
            _ => self.input.b,
        }
    }

    /// Number of root-to-leaf paths with non-zero structural probability.
    pub fn path_count(&self) -> u128 {
        match &self.kind {
            PolicyKind::Combinatorial { elements, .. } => elements.iter().filter(|e| !e.degenerate).count() as u128,
            _ => {
                let n = self.input.n() as u128;
                (0..self.input.b as u128).map(|i| n - i).product()
            }
        }
    }

    /// Sorted pool indices selected by a root-to-leaf path.
    pub fn subset(&self, path: &[usize]) -> Vec<usize> {
        match &self.kind {
            PolicyKind::Combinatorial { canonical, .. } => {
                let mut s = canonical[path[0]].clone();
                s.sort_unstable();
                s
            }
            _ => {
                let mut s = path.to_vec();
                s.sort_unstable();
                s
            }
        }
    }

    /// The step distribution after `prefix`, recorded on `tape` once per prefix.
    pub fn step(&mut self, tape: &mut Tape, prefix: &[usize]) -> Result<StepScores> {
        if let Some(s) = self.cache.get(prefix) {
            return Ok(s.clone());
        }
        let scores = self.compute_step(tape, prefix)?;
        self.cache.insert(prefix.to_vec(), scores.clone());
        Ok(scores)
    }

    fn compute_step(&mut self, tape: &mut Tape, prefix: &[usize]) -> Result<StepScores> {
        let n = self.input.n();
        let mut selected = vec![false; n];
        for &i in prefix {
            selected[i] = true;
        }
        match &mut self.kind {
            PolicyKind::SampleFocused { perm, logits } => {
                let inv = invert(perm);
                let seq_mask: Vec<bool> = perm.iter().map(|&i| selected[i]).collect();
                let alpha = match *logits {
                    None => {
                        let inputs: Vec<Vec<f64>> = perm.iter().map(|&i| self.input.scaled[i].clone()).collect();
                        let traced = score_sequence(tape, self.vars, &inputs, &seq_mask)?;
                        *logits = Some(traced.logits);
                        traced.alpha
                    }
                    Some(l) => {
                        // Sampling without replacement: renormalise over the remaining samples.
                        let masked = tape.mask_fill(l, &seq_mask, MASK_LOGIT)?;
                        tape.softmax(masked, 0)?
                    }
                };
                Ok(step_scores(tape, alpha, inv, selected))
            }
            PolicyKind::Iterative => {
                let flagged = append_selected_flag(&self.input.scaled, &selected)?;
                let perm = match self.spec.ordering {
                    Ordering::None => (0..n).collect(),
                    Ordering::PoolCentroid => order_by_distance(&self.input.scaled, &self.input.pool_centroid),
                    Ordering::SelectedCentroid => {
                        if prefix.is_empty() {
                            order_by_distance(&self.input.scaled, &self.input.pool_centroid)
                        } else {
                            let rows: Vec<&[f64]> = prefix.iter().map(|&i| self.input.scaled[i].as_slice()).collect();
                            order_by_distance(&self.input.scaled, &centroid(&rows))
                        }
                    }
                };
                let inputs: Vec<Vec<f64>> = perm.iter().map(|&i| flagged[i].clone()).collect();
                let seq_mask: Vec<bool> = perm.iter().map(|&i| selected[i]).collect();
                let traced = score_sequence(tape, self.vars, &inputs, &seq_mask)?;
                Ok(step_scores(tape, traced.alpha, invert(&perm), selected))
            }
            PolicyKind::Combinatorial { elements, canonical } => {
                // Position of every canonical candidate in the scored sequence.
                let reorder = self.spec.enumeration == Enumeration::Subsets;
                let key = |m: &[usize]| {
                    let mut k = m.to_vec();
                    if reorder {
                        k.sort_unstable();
                    }
                    k
                };
                let index: HashMap<Vec<usize>, usize> =
                    elements.iter().enumerate().map(|(p, e)| (key(&e.members), p)).collect();
                let position: Vec<usize> = canonical.iter().map(|c| index[&key(c)]).collect();
                let inputs: Vec<Vec<f64>> = elements.iter().map(|e| e.input.clone()).collect();
                let seq_mask: Vec<bool> = elements.iter().map(|e| e.degenerate).collect();
                let traced = score_sequence(tape, self.vars, &inputs, &seq_mask)?;
                let mask: Vec<bool> = position.iter().map(|&p| seq_mask[p]).collect();
                Ok(step_scores(tape, traced.alpha, position, mask))
            }
        }
    }
}

fn step_scores(tape: &Tape, alpha: Var, position: Vec<usize>, mask: Vec<bool>) -> StepScores {
    let values = tape.value(alpha).data();
    let alpha_by_choice = position.iter().map(|&p| values[p]).collect();
    StepScores {
        alpha,
        position,
        distribution: ScoreDistribution {
            alpha: alpha_by_choice,
            mask,
        },
    }
}

/// A root-to-leaf path with its probability traced on the tape.
#[derive(Clone, Debug)]
pub struct WeightedPath {
    pub path: Vec<usize>,
    pub subset: Vec<usize>,
    /// Product of the step probabilities along the path.
    pub prob: Var,
    pub prob_value: f64,
}

/// Expands the whole policy tree, skipping structurally excluded choices.
pub fn enumerate_paths(policy: &mut Policy<'_>, tape: &mut Tape) -> Result<Vec<WeightedPath>> {
    check_limit(policy.path_count(), policy.spec.enumeration_limit, "exhaustive path expansion")?;
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<usize>, Option<Var>)> = vec![(Vec::new(), None)];
    let depth = policy.depth();
    while let Some((prefix, prob)) = stack.pop() {
        if prefix.len() == depth {
            let prob = prob.expect("depth >= 1");
            out.push(WeightedPath {
                subset: policy.subset(&prefix),
                prob_value: tape.value(prob).item(),
                path: prefix,
                prob,
            });
            continue;
        }
        let step = policy.step(tape, &prefix)?;
        // Reverse push keeps the output in lexicographic path order.
        for c in (0..step.position.len()).rev() {
            if step.distribution.mask[c] {
                continue;
            }
            let p = tape.gather(step.alpha, &[step.position[c]])?;
            let p = match prob {
                None => p,
                Some(q) => tape.mul(q, p)?,
            };
            let mut next = prefix.clone();
            next.push(c);
            stack.push((next, Some(p)));
        }
    }
    Ok(out)
}

/// A sampled root-to-leaf path with its log-probability traced on the tape.
#[derive(Clone, Debug)]
pub struct DrawnPath {
    pub path: Vec<usize>,
    pub subset: Vec<usize>,
    pub log_prob: Var,
    pub log_prob_value: f64,
}

fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples one path step by step from the policy.
pub fn draw_path<R: Rng + ?Sized>(policy: &mut Policy<'_>, tape: &mut Tape, rng: &mut R) -> Result<DrawnPath> {
    let mut path = Vec::with_capacity(policy.depth());
    let mut log_prob: Option<Var> = None;
    for _ in 0..policy.depth() {
        let step = policy.step(tape, &path)?;
        let c = draw_index(&step.distribution.alpha, rng);
        let p = tape.gather(step.alpha, &[step.position[c]])?;
        let lp = tape.log(p);
        log_prob = Some(match log_prob {
            None => lp,
            Some(acc) => tape.add(acc, lp)?,
        });
        path.push(c);
    }
    let log_prob = log_prob.expect("depth >= 1");
    Ok(DrawnPath {
        subset: policy.subset(&path),
        log_prob_value: tape.value(log_prob).item(),
        path,
        log_prob,
    })
}

/// Indices of the `b` largest entries, ties to the lowest index.
pub fn top_b(alpha: &[f64], b: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..alpha.len()).collect();
    idx.sort_by(|&a, &c| alpha[c].partial_cmp(&alpha[a]).unwrap_or(CmpOrdering::Equal).then(a.cmp(&c)));
    idx.truncate(b);
    idx.sort_unstable();
    idx
}

/// Uniform draw over all `C(N, B)` subsets.
pub fn select_random<R: Rng + ?Sized>(episode: &Episode, rng: &mut R) -> Sampling {
    let idx = rand::seq::index::sample(rng, episode.n(), episode.b).into_vec();
    Sampling::new(idx, None)
}

/// Sample-focused meta-test selection: the top-`B` entries of one scorer pass.
pub fn select_sample_focused(
    spec: &StrategySpec,
    params: &ScorerParams,
    episode: &Episode,
) -> Result<(ScoreDistribution, Sampling)> {
    let input = SelectorInput::new(episode);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut policy = Policy::new(spec, &vars, &input)?;
    let step = policy.step(&mut tape, &[])?;
    let picked = top_b(&step.distribution.alpha, episode.b);
    Ok((step.distribution, Sampling::new(picked, None)))
}

/// Iterative meta-test selection: the most probable sample at every step.
pub fn select_iterative(
    spec: &StrategySpec,
    params: &ScorerParams,
    episode: &Episode,
) -> Result<(Vec<ScoreDistribution>, Sampling)> {
    let input = SelectorInput::new(episode);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut policy = Policy::new(spec, &vars, &input)?;
    let mut path = Vec::new();
    let mut steps = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..episode.b {
        let step = policy.step(&mut tape, &path)?;
        let c = step.distribution.argmax();
        log_prob += step.distribution.alpha[c].ln();
        path.push(c);
        steps.push(step.distribution);
    }
    Ok((steps, Sampling::new(path, Some(log_prob))))
}

/// Combinatorial meta-test selection: the most probable subset. The
/// returned distribution is indexed by canonical subset order.
pub fn select_combinatorial(
    spec: &StrategySpec,
    params: &ScorerParams,
    episode: &Episode,
) -> Result<(ScoreDistribution, Sampling)> {
    let input = SelectorInput::new(episode);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut policy = Policy::new(spec, &vars, &input)?;
    let step = policy.step(&mut tape, &[])?;
    let c = step.distribution.argmax();
    let subset = policy.subset(&[c]);
    let lp = step.distribution.alpha[c].ln();
    Ok((step.distribution, Sampling::new(subset, Some(lp))))
}

/// Exhaustive oracle: the subset whose labeled prediction has the lowest
/// cross-entropy on the test set; ties to the lexicographically smallest subset.
pub fn select_best_oracle(episode: &Episode, limit: usize) -> Result<(Sampling, SubsetOutcome)> {
    check_limit(binomial(episode.n(), episode.b), limit, "oracle subsets")?;
    let dist = PoolDistances::new(&episode.train, &episode.test);
    let labels = episode.oracle_labels();
    let mut best: Option<(Vec<usize>, SubsetOutcome)> = None;
    for subset in (0..episode.n()).combinations(episode.b) {
        let outcome = dist.evaluate(&subset, labels, &episode.test_labels, episode.k);
        if best.as_ref().is_none_or(|(_, b)| outcome.cross_entropy < b.cross_entropy) {
            best = Some((subset, outcome));
        }
    }
    let (subset, outcome) = best.expect("at least one subset");
    Ok((Sampling::new(subset, None), outcome))
}

/// Meta-test selection for any strategy. `params` is required for learned
/// strategies; `rng` is only used by the random strategy.
pub fn select<R: Rng + ?Sized>(
    spec: &StrategySpec,
    params: Option<&ScorerParams>,
    episode: &Episode,
    rng: &mut R,
) -> Result<Sampling> {
    let need = || params.ok_or_else(|| Error::MissingCheckpoint(spec.name()));
    let sampling = match spec.kind {
        StrategyKind::Random => select_random(episode, rng),
        StrategyKind::Best => select_best_oracle(episode, spec.enumeration_limit)?.0,
        StrategyKind::SampleFocused => select_sample_focused(spec, need()?, episode)?.1,
        StrategyKind::Iterative => select_iterative(spec, need()?, episode)?.1,
        StrategyKind::Combinatorial => select_combinatorial(spec, need()?, episode)?.1,
    };
    sampling.check(episode.n(), episode.b)?;
    Ok(sampling)
}
