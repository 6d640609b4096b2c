//! Inverse-distance class probabilities, cross-entropy, accuracy and reward.

use crate::error::{Error, Result};

/// Distances below this are clamped before inversion.
pub const DISTANCE_FLOOR: f64 = 1e-9;
/// Smallest probability fed to the logarithm in [`cross_entropy`].
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// The labeled subset returned by the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSelection {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl LabeledSelection {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "selection needs matching, non-empty features and labels ({} vs {})",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {l} outside [0, {k})")));
        }
        Ok(Self { features, labels, k })
    }
}

/// `m x k` row-stochastic matrix of class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    k: usize,
    probs: Vec<f64>,
}

impl PredictionMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.probs.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    /// Highest-probability class of row `i`, ties to the lowest index.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = j;
            }
        }
        best
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
fn inverse_distance(d: f64) -> f64 {
    1.0 / d.max(DISTANCE_FLOOR)
}

/// Shared core of the inverse-distance rule: `inv(s, i)` is the inverse
/// distance between selected sample `s` and test point `i`.
fn predict_with<F: Fn(usize, usize) -> f64>(labels: &[usize], k: usize, m: usize, inv: F) -> PredictionMatrix {
    let mut probs = vec![0.0; m * k];
    for i in 0..m {
        let row = &mut probs[i * k..(i + 1) * k];
        for (s, &l) in labels.iter().enumerate() {
            row[l] += inv(s, i);
        }
        let total: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= total;
        }
    }
    PredictionMatrix { k, probs }
}

/// Class probability of every test point: the share of inverse Euclidean
/// distance mass contributed by selected samples of that class. Classes
/// without a selected sample get probability 0.
pub fn predict(selection: &LabeledSelection, test: &[Vec<f64>]) -> PredictionMatrix {
    predict_with(&selection.labels, selection.k, test.len(), |s, i| {
        inverse_distance(euclidean(&selection.features[s], &test[i]))
    })
}

/// Mean negative log-probability of the true class, floored at
/// [`PROBABILITY_FLOOR`].
pub fn cross_entropy(pred: &PredictionMatrix, labels: &[usize]) -> f64 {
    debug_assert_eq!(pred.rows(), labels.len());
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -pred.row(i)[y].max(PROBABILITY_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(pred: &PredictionMatrix, labels: &[usize]) -> f64 {
    debug_assert_eq!(pred.rows(), labels.len());
    let hits = labels.iter().enumerate().filter(|(i, &y)| pred.argmax(*i) == y).count();
    hits as f64 / labels.len() as f64
}

/// `exp(-d)`: 1 for a perfect prediction, decaying with the error.
pub fn reward(d: f64) -> f64 {
    (-d).exp()
}

/// Outcome of labeling one subset of an episode's train pool.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsetOutcome {
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub reward: f64,
}

/// Precomputed inverse distances between an episode's train pool and its
/// test set, for scoring many subsets of the same pool.
#[derive(Clone, Debug)]
pub struct PoolDistances {
    m: usize,
    inv: Vec<f64>,
}

impl PoolDistances {
    pub fn new(train: &[Vec<f64>], test: &[Vec<f64>]) -> Self {
        let m = test.len();
        let inv = train
            .iter()
            .flat_map(|x| test.iter().map(move |t| inverse_distance(euclidean(x, t))))
            .collect();
        Self { m, inv }
    }

    pub fn predict(&self, subset: &[usize], labels: &[usize], k: usize) -> PredictionMatrix {
        predict_with(labels, k, self.m, |s, i| self.inv[subset[s] * self.m + i])
    }

    /// Labels `subset` with `pool_labels` and scores the prediction against `test_labels`.
    pub fn evaluate(&self, subset: &[usize], pool_labels: &[usize], test_labels: &[usize], k: usize) -> SubsetOutcome {
        let labels: Vec<usize> = subset.iter().map(|&i| pool_labels[i]).collect();
        let pred = self.predict(subset, &labels, k);
        let ce = cross_entropy(&pred, test_labels);
        SubsetOutcome {
            cross_entropy: ce,
            accuracy: accuracy(&pred, test_labels),
            reward: reward(ce),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances_one_and_three() {
        let sel = LabeledSelection::new(vec![vec![1.0, 0.0], vec![-3.0, 0.0]], vec![0, 1], 2).unwrap();
        let p = predict(&sel, &[vec![0.0, 0.0]]);
        assert!((p.row(0)[0] - 0.75).abs() < 1e-12);
        assert!((p.row(0)[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_class_selection_predicts_that_class() {
        let sel = LabeledSelection::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![1, 1], 2).unwrap();
        let test = vec![vec![5.0, 5.0], vec![-2.0, 0.5], vec![0.0, 0.0]];
        let p = predict(&sel, &test);
        for i in 0..3 {
            assert_eq!(p.row(i), &[0.0, 1.0]);
        }
        // Balanced labels: half of the rows are right.
        let labels = [0, 1, 0, 1];
        let test4 = vec![vec![1.0, 2.0]; 4];
        assert_eq!(accuracy(&predict(&sel, &test4), &labels), 0.5);
    }

    #[test]
    fn equidistant_is_even() {
        let sel = LabeledSelection::new(vec![vec![-2.0, 1.0], vec![2.0, 1.0]], vec![0, 1], 2).unwrap();
        let p = predict(&sel, &[vec![0.0, 7.0]]);
        assert_eq!(p.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn coincident_point_dominates() {
        let sel = LabeledSelection::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0, 1], 2).unwrap();
        let p = predict(&sel, &[vec![0.0, 0.0]]);
        assert!(p.row(0)[0] > 1.0 - 1e-8);
    }

    #[test]
    fn cross_entropy_cases() {
        let one_hot = PredictionMatrix { k: 2, probs: vec![1.0, 0.0, 0.0, 1.0] };
        assert_eq!(cross_entropy(&one_hot, &[0, 1]), 0.0);
        let uniform = PredictionMatrix { k: 2, probs: vec![0.5; 4] };
        assert!((cross_entropy(&uniform, &[0, 1]) - std::f64::consts::LN_2).abs() < 1e-15);
        let wrong = PredictionMatrix { k: 2, probs: vec![1.0, 0.0] };
        let ce = cross_entropy(&wrong, &[1]);
        assert!(ce.is_finite());
        assert!((ce + PROBABILITY_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ties_go_to_lowest_class() {
        let tie = PredictionMatrix { k: 2, probs: vec![0.5, 0.5] };
        assert_eq!(tie.argmax(0), 0);
        assert_eq!(accuracy(&tie, &[0]), 1.0);
    }

    #[test]
    fn reward_values() {
        assert_eq!(reward(0.0), 1.0);
        assert!((reward(std::f64::consts::LN_2) - 0.5).abs() < 1e-15);
        assert!(reward(0.3) > reward(0.4));
    }

    #[test]
    fn pool_distances_match_direct_prediction() {
        let train = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, -1.0]];
        let test = vec![vec![0.5, 0.5], vec![2.0, 2.0]];
        let labels = [0, 1, 1];
        let pd = PoolDistances::new(&train, &test);
        let subset = [0, 2];
        let sel = LabeledSelection::new(vec![train[0].clone(), train[2].clone()], vec![0, 1], 2).unwrap();
        let direct = predict(&sel, &test);
        let cached = pd.predict(&subset, &[labels[0], labels[2]], 2);
        assert_eq!(direct, cached);
    }
}
