use std::path::Path;
use std::process::{Command, Output};

use poolsel_cli::commands::{load_pools, POOLS_FILE, RESULTS_FILE};
use poolsel_cli::RunConfig;
use poolsel_core::container::Container;
use poolsel_core::episodes::load_embedding_pools;
use poolsel_core::training::{initial_params, BEST_CHECKPOINT, CURVE_FILE, LAST_CHECKPOINT};

const SMALL: &str = r#"
[train]
epochs = 2
problems_per_epoch = 4
train_problems = 20
val_problems = 10
eval_every = 1
hidden = 4
[eval]
problems = 20
"#;

fn poolsel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolsel"))
        .args(["--out", dir.to_str().unwrap()])
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_data_is_reproducible_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = poolsel(dir.path(), &["--seed", "5", "gen-data", "--output", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let cfg = RunConfig::default().resolve(Some(5), None).unwrap();
    assert_eq!(load_embedding_pools(&a).unwrap(), load_pools(&cfg).unwrap());
}

#[test]
fn gen_data_defaults_into_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = poolsel(dir.path(), &["gen-data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join(POOLS_FILE).exists());
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[train]\nepoch = 3\n");
    let o = poolsel(dir.path(), &["--config", &config, "show-config"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
}

#[test]
fn show_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = poolsel(dir.path(), &["--seed", "3", "show-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let parsed = RunConfig::from_toml(&text).unwrap();
    assert_eq!(parsed.seed, 3);
    let digest = parsed.resolve(None, None).unwrap().digest();
    assert!(text.starts_with(&format!("# config={digest}")));
}

#[test]
fn eval_without_checkpoint_names_the_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let o = poolsel(dir.path(), &["--config", &config, "eval"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("missing checkpoint") && err.contains("sample-focused"), "{err}");
    assert!(!dir.path().join(RESULTS_FILE).exists());
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = poolsel(dir.path(), &["grad-check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("passed"));
}

#[test]
fn zero_epochs_saves_the_initial_scorer() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SMALL}\n[train.strategy]\nkind = \"combinatorial\"\nordering = \"pool-centroid\"\n").replace("epochs = 2", "epochs = 0"));
    let o = poolsel(dir.path(), &["--config", &config, "train"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let cfg = RunConfig::load(Path::new(&config)).unwrap().resolve(None, Some(dir.path().into())).unwrap();
    let run = dir.path().join("combinatorial");
    let best = Container::load(&run.join(BEST_CHECKPOINT)).unwrap();
    let expected = initial_params(&cfg.train_config(), 2, cfg.episode.b).unwrap();
    assert_eq!(best.scorer("scorer").unwrap(), expected);
    assert_eq!(best.digest, cfg.digest());

    let curve = std::fs::read_to_string(run.join(CURVE_FILE)).unwrap();
    assert_eq!(curve.lines().count(), 2, "{curve}");
}

#[test]
fn train_and_eval_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let args = |cmd: &'static str| -> Vec<&str> { vec!["--config", &config, cmd] };
    for name in ["sample-focused", "iterative-unordered", "iterative-ordered", "combinatorial"] {
        let mut a = args("train");
        a.extend(["--strategy", name]);
        let o = poolsel(dir.path(), &a);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert!(dir.path().join(name).join(LAST_CHECKPOINT).exists());
    }

    let mut a = args("eval");
    a.push("--per-episode");
    let o = poolsel(dir.path(), &a);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert!(lines[0].starts_with("# config="));
    assert_eq!(lines[1], "strategy,multi_class_ratio,mean_accuracy,n_problems,seed");
    assert_eq!(lines.len(), 8);
    assert!(lines.iter().any(|l| l.starts_with("best,1,")), "{results}");

    // Resuming a finished run leaves it unchanged.
    let run = dir.path().join("iterative-ordered");
    let before = std::fs::read(run.join(BEST_CHECKPOINT)).unwrap();
    let mut a = args("train");
    a.push("--resume");
    let o = poolsel(dir.path(), &a);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(run.join(BEST_CHECKPOINT)).unwrap(), before);

    // A different config cannot resume it.
    let mut a = args("train");
    a.extend(["--resume", "--seed", "9"]);
    let o = poolsel(dir.path(), &a);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("written by config"), "{}", stderr(&o));
}
