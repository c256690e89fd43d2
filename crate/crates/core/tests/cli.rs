use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use apex_dqfd::harness::{read_metrics, METRICS_HEADER};

fn apex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apex-dqfd")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_RUN: &str = r#"
# short deterministic run on a small grid
env = "sparse_grid:4x4"
deterministic = true
learner_steps = 300
metrics_every = 50

[network]
hidden = [16]

[actors]
episode_cap = 100

[eval]
every = 100
episodes = 2
"#;

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL_RUN).unwrap();
    p
}

#[test]
fn gen_demos_is_reproducible_and_inspectable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    for out in [&a, &b] {
        let o = apex(&["gen-demos", "--env", "sparse_grid:5x5", "--episodes", "3", "--seed", "9", "--policy", "oracle_noise:0.1", "--out", path(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("apex-dqfd-demos version=1 env=sparse_grid:5x5 n_episodes=3"));

    let o = apex(&["inspect-demos", path(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let shown = String::from_utf8_lossy(&o.stdout);
    assert!(shown.contains("episodes: 3"), "{shown}");
}

#[test]
fn gen_demos_rejects_unknown_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = apex(&["gen-demos", "--env", "moon_base:3", "--out", path(&dir.path().join("d.txt"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("moon_base"), "{}", stderr(&o));
}

#[test]
fn inspect_rejects_future_version() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("d.txt");
    assert!(apex(&["gen-demos", "--env", "delayed_chain:6", "--out", path(&good)]).status.success());
    let text = fs::read_to_string(&good).unwrap().replacen("version=1", "version=2", 1);
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, text).unwrap();
    let o = apex(&["inspect-demos", path(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn zero_step_budget_writes_an_untrained_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = apex(&["train", "--config", path(&cfg), "--steps", "0", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    for row in read_metrics(&out.join("metrics.csv")).unwrap() {
        assert_eq!(row.step, 0);
    }
    assert!(out.join("checkpoint.json").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn deterministic_train_reruns_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut csv = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        let o = apex(&["train", "--config", path(&cfg), "--seed", "4", "--deterministic", "--ablate", "no_tc", "--out", path(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        csv.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
    let rows = read_metrics(&dir.path().join("r1/metrics.csv")).unwrap();
    assert_eq!(rows.last().unwrap().step, 300);
    assert!(rows.iter().all(|r| r.wall_ms == 0));
    let resolved = dir.path().join("r1/config.toml");
    assert!(fs::read_to_string(&resolved).unwrap().contains("no_tc"));

    // the written config alone reproduces the run
    let out = dir.path().join("r3");
    let o = apex(&["train", "--config", path(&resolved), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv[0], fs::read(out.join("metrics.csv")).unwrap());
}

#[test]
fn train_rejects_unknown_ablation() {
    let o = apex(&["train", "--ablate", "no_brakes"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_brakes"), "{}", stderr(&o));
}

#[test]
fn eval_reads_a_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    assert!(apex(&["train", "--config", path(&cfg), "--steps", "50", "--out", path(&out)]).status.success());
    let report = dir.path().join("eval.json");
    let o = apex(&[
        "eval",
        "--checkpoint",
        path(&out.join("checkpoint.json")),
        "--episodes",
        "3",
        "--reference",
        "1",
        "--random",
        "0",
        "--out",
        path(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["episodes"], 3);
}

#[test]
fn analyze_operator_passes_on_a_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("analyze.toml");
    fs::write(
        &cfg,
        r#"
envs = ["delayed_chain:20", "sparse_grid:4x4", "windy_grid:4x4:0.1"]
gammas = [0.9, 0.99]

[contraction]
random_mdps = 5
trials = 50

[lipschitz]
samples = 10000
"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let o = apex(&["analyze-operator", "--config", path(&cfg), "--out", path(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["all_pass"], true);
    assert_eq!(json["skipped"][0], "windy_grid:4x4:0.1");
}

#[test]
fn shipped_configs_load() {
    use apex_dqfd::harness::{AnalyzeConfig, ExperimentConfig};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let desk = ExperimentConfig::load(&dir.join("desk.toml")).unwrap();
    assert_eq!(desk, ExperimentConfig::desk());
    let full = ExperimentConfig::load(&dir.join("full.toml")).unwrap().resolve().unwrap();
    assert_eq!(full.learner.batch_size, 256);
    assert_eq!(full.actors.num_actors, 128);
    assert_eq!(AnalyzeConfig::load(&dir.join("analyze.toml")).unwrap().envs.len(), 6);
}
