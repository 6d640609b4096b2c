//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poolsel_cli::commands::{feature_pools, metatest_problems, RESULTS_FILE};
use poolsel_cli::RunConfig;
use poolsel_core::episodes::Episode;
use poolsel_core::evaluation::{evaluate_strategy, expected_random_multi_class, run_benchmark, Benchmark};
use poolsel_core::numerics::Tape;
use poolsel_core::prediction::{predict, LabeledSelection};
use poolsel_core::scorer::ScorerParams;
use poolsel_core::selection::{enumerate_paths, Policy, SelectorInput, StrategySpec};
use poolsel_core::training::{episode_loss, meta_train, LossMode, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    println!(
        "criterion {id} [{}] {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
    o.pass
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn prediction_fidelity() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();

    let sel = LabeledSelection::new(vec![vec![1.0, 0.0], vec![-3.0, 0.0]], vec![0, 1], 2).unwrap();
    let p = predict(&sel, &[vec![0.0, 0.0]]);
    if !(close(p.row(0)[0], 0.75, 1e-9) && close(p.row(0)[1], 0.25, 1e-9)) {
        failures.push(format!("two-point case gave {:?}", p.row(0)));
    }
    let sel = LabeledSelection::new(vec![vec![0.0, 0.0], vec![2.0, 1.0]], vec![1, 1], 2).unwrap();
    let p = predict(&sel, &[vec![5.0, -1.0], vec![0.3, 0.3]]);
    if (0..2).any(|i| !(close(p.row(i)[0], 0.0, 1e-9) && close(p.row(i)[1], 1.0, 1e-9))) {
        failures.push("single-class case".into());
    }
    let sel = LabeledSelection::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], vec![0, 1], 2).unwrap();
    let p = predict(&sel, &[vec![0.0, 3.0]]);
    if !(close(p.row(0)[0], 0.5, 1e-9) && close(p.row(0)[1], 0.5, 1e-9)) {
        failures.push("equidistant case".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_norm: f64 = 0.0;
    let mut worst_perm: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..5);
        let b = rng.random_range(1..6);
        let dim = rng.random_range(1..5);
        let point = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let feats: Vec<Vec<f64>> = (0..b).map(|_| point(&mut rng)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let test: Vec<Vec<f64>> = (0..6).map(|_| point(&mut rng)).collect();
        let p = predict(&LabeledSelection::new(feats.clone(), labels.clone(), k).unwrap(), &test);
        let mut order: Vec<usize> = (0..b).collect();
        order.shuffle(&mut rng);
        let q = predict(
            &LabeledSelection::new(
                order.iter().map(|&i| feats[i].clone()).collect(),
                order.iter().map(|&i| labels[i]).collect(),
                k,
            )
            .unwrap(),
            &test,
        );
        for i in 0..test.len() {
            worst_norm = worst_norm.max((p.row(i).iter().sum::<f64>() - 1.0).abs());
            for j in 0..k {
                worst_perm = worst_perm.max((p.row(i)[j] - q.row(i)[j]).abs());
            }
        }
    }
    if worst_norm > 1e-9 {
        failures.push(format!("row sum off by {worst_norm:e}"));
    }
    if worst_perm > 1e-9 {
        failures.push(format!("permutation changed probabilities by {worst_perm:e}"));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(1) {
        failures.push(format!("took {elapsed:?}"));
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("3 fixtures exact; 1000 random instances: max row-sum error {worst_norm:.1e}, max permutation delta {worst_perm:.1e}")
        } else {
            failures.join("; ")
        },
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_poolsel"))
        .args(["grad-check", "--seed", "3"])
        .output()
        .expect("run poolsel");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let worst = stdout
        .lines()
        .filter_map(|l| l.split_whitespace().nth(2)?.parse::<f64>().ok())
        .fold(0.0, f64::max);
    let groups = stdout.lines().filter(|l| l.ends_with(" ok") || l.ends_with("FAIL")).count();
    let fast = start.elapsed() < Duration::from_secs(30);
    Outcome {
        pass: out.status.success() && fast && groups == 4 * 19,
        detail: format!(
            "exit {}, {groups} parameter groups over 4 strategies, max relative error {worst:.2e} (N=4, B=2, H=4)",
            out.status
        ),
    }
}

/// Flattened per-group gradients of one loss evaluation.
fn loss_gradients(spec: &StrategySpec, p: &ScorerParams, ep: &Episode, mode: LossMode, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let out = episode_loss(&mut tape, spec, &vars, ep, mode, rng).unwrap();
    let g = tape.backward(out.loss).unwrap();
    let mut groups: Vec<Vec<f64>> = vars.gradients(&g).iter().map(|t| t.data().to_vec()).collect();
    groups.pop();
    groups
}

fn estimator_consistency() -> Outcome {
    let train = vec![vec![0.0, 0.0], vec![0.4, 0.2], vec![3.0, 3.0]];
    let test = vec![vec![0.1, 0.1], vec![2.9, 3.2], vec![0.3, -0.1], vec![3.1, 2.8]];
    let ep = Episode::from_parts(2, 2, train, vec![0, 0, 1], test, vec![0, 1, 0, 1]).unwrap();
    let spec = StrategySpec::iterative_ordered();
    let p = ScorerParams::init(3, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let exact = loss_gradients(&spec, &p, &ep, LossMode::exhaustive(), &mut ChaCha8Rng::seed_from_u64(0));
    let draws = 50_000;
    let mut mean: Vec<Vec<f64>> = exact.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..draws {
        let g = loss_gradients(&spec, &p, &ep, LossMode::monte_carlo(1), &mut rng);
        for (m, gi) in mean.iter_mut().zip(&g) {
            for (a, v) in m.iter_mut().zip(gi) {
                *a += v / draws as f64;
            }
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let names = ScorerParams::names();
    let mut worst = (0.0, String::new());
    for ((e, m), name) in exact.iter().zip(&mean).zip(&names) {
        let diff: Vec<f64> = e.iter().zip(m).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(e).max(1e-12);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    Outcome {
        pass: worst.0 < 0.05,
        detail: format!(
            "{draws} single-draw gradients vs exhaustive on N=3, B=2 iterative: worst group {} at {:.2}% relative error",
            worst.1,
            worst.0 * 100.0
        ),
    }
}

fn tree_normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 1..=6usize {
        for b in 1..=n.min(3) {
            let mut rng = ChaCha8Rng::seed_from_u64((n * 10 + b) as u64);
            let train: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let ep = Episode::from_parts(2, b, train, labels, vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0, 1]).unwrap();
            for spec in [StrategySpec::iterative_ordered(), StrategySpec::iterative_unordered()] {
                let p = ScorerParams::init(3, 5, &mut rng).unwrap();
                let input = SelectorInput::new(&ep);
                let mut tape = Tape::new();
                let vars = p.register(&mut tape);
                let mut policy = Policy::new(&spec, &vars, &input).unwrap();
                let total: f64 = enumerate_paths(&mut policy, &mut tape).unwrap().iter().map(|p| p.prob_value).sum();
                worst = worst.max((total - 1.0).abs());
                cases += 1;
            }
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("{cases} (N, B, ordering) trees, max |sum - 1| = {worst:.1e}"),
    }
}

fn random_analytics() -> Outcome {
    let cfg = RunConfig::default().resolve(Some(5), None).unwrap();
    let (pools, split) = feature_pools(&cfg).unwrap();
    let cfg = RunConfig {
        eval: poolsel_cli::config::EvalConfig {
            problems: 2000,
            ..cfg.eval.clone()
        },
        ..cfg
    };
    let problems = metatest_problems(&cfg, &pools, &split).unwrap();
    let (report, _) = evaluate_strategy(&StrategySpec::random(), None, &problems, 9, "").unwrap();
    let expected = problems
        .iter()
        .map(|e| expected_random_multi_class(&e.train_class_counts(), e.b))
        .sum::<f64>()
        / problems.len() as f64;
    Outcome {
        pass: close(report.multi_class_ratio, expected, 0.03),
        detail: format!(
            "observed {:.4} vs closed form {:.4} over {} episodes",
            report.multi_class_ratio,
            expected,
            problems.len()
        ),
    }
}

struct DeskRun {
    bench: Benchmark,
    train_times: Vec<(String, Duration)>,
}

fn desk_run() -> DeskRun {
    let cfg = RunConfig::default().resolve(Some(0), None).unwrap();
    let (pools, split) = feature_pools(&cfg).unwrap();
    let mut checkpoints = BTreeMap::new();
    let mut train_times = Vec::new();
    for spec in StrategySpec::benchmark_rows().into_iter().filter(StrategySpec::is_trainable) {
        let tcfg = TrainConfig {
            strategy: spec.clone(),
            ..cfg.train_config()
        };
        let start = Instant::now();
        let out = meta_train(&tcfg, &pools, &split, &cfg.episode, None, None).unwrap();
        train_times.push((spec.name(), start.elapsed()));
        assert!(out.accessed_classes.is_disjoint(&split.test));
        checkpoints.insert(spec.name(), out.state.best_params);
    }
    let problems = metatest_problems(&cfg, &pools, &split).unwrap();
    let bench = run_benchmark(&StrategySpec::benchmark_rows(), &checkpoints, &problems, cfg.eval_seed(), "").unwrap();
    for r in &bench.reports {
        println!(
            "    {:<22} multi-class {:.4}  accuracy {:.4}",
            r.strategy, r.multi_class_ratio, r.mean_accuracy
        );
    }
    DeskRun { bench, train_times }
}

fn row<'a>(bench: &'a Benchmark, name: &str) -> &'a poolsel_core::evaluation::MetricsReport {
    bench.reports.iter().find(|r| r.strategy == name).expect("benchmark row")
}

fn oracle_dominance(run: &DeskRun) -> Outcome {
    let b = &run.bench;
    let best = b.reports.iter().position(|r| r.strategy == "best").unwrap();
    let mut violations = 0;
    let mut comparisons = 0;
    for (i, records) in b.per_episode.iter().enumerate() {
        if i == best {
            continue;
        }
        for (o, r) in b.per_episode[best].iter().zip(records) {
            comparisons += 1;
            if o.cross_entropy > r.cross_entropy {
                violations += 1;
            }
        }
    }
    let top = b.reports.iter().map(|r| r.mean_accuracy).fold(f64::MIN, f64::max);
    let n = b.per_episode[best].len();
    Outcome {
        pass: violations == 0 && n == 500 && b.reports[best].mean_accuracy == top,
        detail: format!(
            "{violations} cross-entropy violations in {comparisons} paired comparisons over {n} episodes; oracle accuracy {:.4} is the top row: {}",
            b.reports[best].mean_accuracy,
            b.reports[best].mean_accuracy == top
        ),
    }
}

fn desk_ranking(run: &DeskRun) -> Outcome {
    let b = &run.bench;
    let random = row(b, "random");
    let ordered = row(b, "iterative-ordered");
    let unordered = row(b, "iterative-unordered");
    let oracle = row(b, "best");
    let acc_gain = ordered.mean_accuracy - random.mean_accuracy;
    let multi_gain = ordered.multi_class_ratio - random.multi_class_ratio;
    let learned_below_oracle = b
        .reports
        .iter()
        .filter(|r| r.strategy != "random" && r.strategy != "best")
        .all(|r| r.mean_accuracy <= oracle.mean_accuracy);
    let slowest = run.train_times.iter().map(|(_, t)| *t).max().unwrap_or_default();
    let pass = acc_gain >= 0.05
        && multi_gain >= 0.10
        && ordered.mean_accuracy >= unordered.mean_accuracy
        && learned_below_oracle
        && slowest <= Duration::from_secs(600);
    Outcome {
        pass,
        detail: format!(
            "iterative-ordered vs random: accuracy {acc_gain:+.4}, multi-class {multi_gain:+.4}; ordered {:.4} vs unordered {:.4}; learned <= oracle: {learned_below_oracle}; slowest training {:.0}s",
            ordered.mean_accuracy,
            unordered.mean_accuracy,
            slowest.as_secs_f64()
        ),
    }
}

fn run_binary(out: &Path, config: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_poolsel"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--seed", "21"])
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("run poolsel");
    assert!(status.success(), "poolsel {args:?} failed");
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
[train]
epochs = 6
problems_per_epoch = 10
train_problems = 100
val_problems = 40
eval_every = 3
hidden = 8
exploration = "monte-carlo"
mc_samples = 4
[eval]
problems = 100
strategies = [{ kind = "random" }, { kind = "iterative", ordering = "selected-centroid" }, { kind = "best" }]
"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        run_binary(&out, &config, &["train"]);
        run_binary(&out, &config, &["eval"]);
        outputs.push(std::fs::read(out.join(RESULTS_FILE)).unwrap());
    }
    let same = outputs[0] == outputs[1];
    Outcome {
        pass: same && !outputs[0].is_empty(),
        detail: format!("two train+eval runs with seed 21: results CSV byte-identical = {same} ({} bytes)", outputs[0].len()),
    }
}

fn main() {
    println!("desk-scale benchmark (4 learned strategies, 200 epochs x 50 problems each):");
    let run = desk_run();
    let results = [
        check(1, "prediction fidelity", prediction_fidelity),
        check(2, "gradient integrity", gradient_integrity),
        check(3, "estimator consistency", estimator_consistency),
        check(4, "sampling-tree normalization", tree_normalization),
        check(5, "oracle dominance", || oracle_dominance(&run)),
        check(6, "random-baseline analytics", random_analytics),
        check(7, "desk-scale ranking", || desk_ranking(&run)),
        check(8, "determinism", determinism),
    ];
    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
