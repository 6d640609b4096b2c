use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poolsel_core::episodes::Episode;
use poolsel_core::error::Result;
use poolsel_core::numerics::{grad_check, Tape, Tensor, Var};
use poolsel_core::prediction::{predict, LabeledSelection};
use poolsel_core::representation::{append_selected_flag, scale_to_unit_range};
use poolsel_core::scorer::ScorerParams;
use poolsel_core::selection::{
    enumerate_paths, order_by_distance, select_best_oracle, select_random, top_b, Policy, SelectorInput, StrategySpec,
};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, cols), rows)
}

/// Builds a random composition of differentiable ops over a 2x3 parameter.
fn composite(tape: &mut Tape, vars: &[Var], ops: &[u8]) -> Result<Var> {
    let mut x = vars[0];
    let w = tape.constant(Tensor::new(vec![3, 2], vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7])?);
    let c = tape.constant(Tensor::new(vec![2, 3], vec![0.9, -1.1, 0.4, 0.2, 0.6, -0.3])?);
    for &op in ops {
        x = match op % 7 {
            0 => tape.sigmoid(x),
            1 => tape.tanh(x),
            2 => {
                let s = tape.scale(x, 0.3);
                tape.exp(s)
            }
            3 => tape.mul(x, c)?,
            4 => {
                let y = tape.matmul(x, w)?;
                let t = tape.transpose(w)?;
                tape.matmul(y, t)?
            }
            5 => tape.softmax(x, 1)?,
            _ => tape.add(x, vars[0])?,
        };
    }
    let sq = tape.mul(x, x)?;
    Ok(tape.sum(sq))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_graphs_match_finite_differences(
        values in prop::collection::vec(-1.0..1.0f64, 6),
        ops in prop::collection::vec(0u8..7, 1..6),
    ) {
        let p = Tensor::new(vec![2, 3], values).unwrap();
        let report = grad_check(|t: &mut Tape, v: &[Var]| composite(t, v, &ops), &[p], 1e-5).unwrap();
        prop_assert!(report.max_rel_error < 1e-5, "{:?} -> {}", ops, report.max_rel_error);
    }

    #[test]
    fn backward_is_deterministic(values in prop::collection::vec(-1.0..1.0f64, 6), ops in prop::collection::vec(0u8..7, 1..6)) {
        let run = || {
            let mut tape = Tape::new();
            let v = tape.param(Tensor::new(vec![2, 3], values.clone()).unwrap());
            let out = composite(&mut tape, &[v], &ops).unwrap();
            let g = tape.backward(out).unwrap();
            g.wrt(v).unwrap().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn softmax_rows_sum_to_one(m in matrix(3, 5), mask in prop::collection::vec(any::<bool>(), 5)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&m).unwrap());
        let s = tape.softmax(x, 1).unwrap();
        for r in 0..3 {
            prop_assert!((tape.value(s).row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut masked = mask.clone();
        masked[0] = false;
        let col = tape.constant(Tensor::column(m[0].clone()));
        let f = tape.mask_fill(col, &masked, -1e9).unwrap();
        let a = tape.softmax(f, 0).unwrap();
        let alpha = tape.value(a).data();
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (i, &mk) in masked.iter().enumerate() {
            if mk {
                prop_assert_eq!(alpha[i], 0.0);
            }
        }
    }

    #[test]
    fn predictions_are_normalised_and_permutation_invariant(
        feats in matrix(4, 3),
        labels in prop::collection::vec(0usize..3, 4),
        test in matrix(5, 3),
        scale in 0.1..10.0f64,
    ) {
        let sel = LabeledSelection::new(feats.clone(), labels.clone(), 3).unwrap();
        let p = predict(&sel, &test);
        for i in 0..test.len() {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let rev = LabeledSelection::new(feats.iter().rev().cloned().collect(), labels.iter().rev().copied().collect(), 3).unwrap();
        let q = predict(&rev, &test);
        let scaled = |rows: &[Vec<f64>]| rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect::<Vec<Vec<f64>>>();
        let s = predict(&LabeledSelection::new(scaled(&feats), labels.clone(), 3).unwrap(), &scaled(&test));
        for i in 0..test.len() {
            for j in 0..3 {
                prop_assert!((p.row(i)[j] - q.row(i)[j]).abs() < 1e-12);
                prop_assert!((p.row(i)[j] - s.row(i)[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_scaling_is_idempotent_and_bounded(u in matrix(6, 3)) {
        let (once, _) = scale_to_unit_range(&u);
        let (twice, _) = scale_to_unit_range(&once);
        for (a, b) in once.iter().flatten().zip(twice.iter().flatten()) {
            prop_assert!((-1.0..=1.0).contains(a));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flag_keeps_feature_columns(u in matrix(5, 3), sel in prop::collection::vec(any::<bool>(), 5)) {
        let out = append_selected_flag(&u, &sel).unwrap();
        for ((row, orig), s) in out.iter().zip(&u).zip(&sel) {
            prop_assert_eq!(&row[..3], orig.as_slice());
            prop_assert_eq!(row[3], if *s { 3.0 } else { 0.0 });
        }
    }

    #[test]
    fn ordering_sorts_by_distance(u in matrix(7, 2), r in prop::collection::vec(-3.0..3.0f64, 2)) {
        let perm = order_by_distance(&u, &r);
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..7).collect::<Vec<_>>());
        let d = |i: usize| u[i].iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        for w in perm.windows(2) {
            prop_assert!(d(w[0]) < d(w[1]) || (d(w[0]) == d(w[1]) && w[0] < w[1]));
        }
    }

    #[test]
    fn top_b_takes_the_largest(alpha in prop::collection::vec(0.0..1.0f64, 6), b in 1usize..6) {
        let picked = top_b(&alpha, b);
        prop_assert_eq!(picked.len(), b);
        let min_in = picked.iter().map(|&i| alpha[i]).fold(f64::MAX, f64::min);
        for i in (0..6).filter(|i| !picked.contains(i)) {
            prop_assert!(alpha[i] <= min_in);
        }
    }

    #[test]
    fn oracle_is_permutation_invariant(train in matrix(7, 2), test in matrix(4, 2), seed in any::<u64>()) {
        let labels = vec![0, 1, 0, 1, 1, 0, 1];
        let ep = Episode::from_parts(2, 2, train.clone(), labels.clone(), test.clone(), vec![0, 1, 0, 1]).unwrap();
        let mut perm: Vec<usize> = (0..7).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted = Episode::from_parts(
            2, 2,
            perm.iter().map(|&i| train[i].clone()).collect(),
            perm.iter().map(|&i| labels[i]).collect(),
            test, vec![0, 1, 0, 1],
        ).unwrap();
        let (a, oa) = select_best_oracle(&ep, 10_000).unwrap();
        let (b, ob) = select_best_oracle(&permuted, 10_000).unwrap();
        let mut mapped: Vec<usize> = b.indices.iter().map(|&i| perm[i]).collect();
        mapped.sort_unstable();
        prop_assert!((oa.cross_entropy - ob.cross_entropy).abs() < 1e-12);
        prop_assert_eq!(mapped, a.indices);
    }

    #[test]
    fn random_samplings_are_valid(n in 2usize..16, b_frac in 0.0..1.0f64, seed in any::<u64>()) {
        let b = 1 + ((n - 1) as f64 * b_frac) as usize;
        let train: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let ep = Episode::from_parts(2, b, train, labels, vec![vec![0.0], vec![1.0]], vec![0, 1]).unwrap();
        let s = select_random(&ep, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(s.check(n, b).is_ok());
    }

    #[test]
    fn policy_trees_are_normalised(n in 1usize..7, b_frac in 0.0..1.0f64, seed in any::<u64>(), kind in 0usize..3) {
        let b = (1 + ((n - 1) as f64 * b_frac) as usize).min(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let train: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let ep = Episode::from_parts(2, b, train, labels, vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0, 1]).unwrap();
        let spec = [StrategySpec::iterative_ordered(), StrategySpec::sample_focused(), StrategySpec::combinatorial()][kind].clone();
        let p = ScorerParams::init(spec.input_dim(2, b), 3, &mut rng).unwrap();
        let input = SelectorInput::new(&ep);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let mut policy = Policy::new(&spec, &vars, &input).unwrap();
        let paths = enumerate_paths(&mut policy, &mut tape).unwrap();
        let total: f64 = paths.iter().map(|p| p.prob_value).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for path in &paths {
            prop_assert_eq!(path.subset.len(), b);
        }
    }
}
