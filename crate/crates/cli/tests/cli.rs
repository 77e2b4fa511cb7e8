//! Contract tests for the `duet` binary: exit codes, output files, and the round-trip
//! property that everything the tool writes is parseable by the library's own loaders.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use duet::checkpoint::{Checkpoint, Restored};
use duet::metrics::read_jsonl;
use duet::oracle::{encoder_optimum, TabularPolicy};
use duet::worlds::World;

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("duet-cli-{}-{tag}", std::process::id()));
    fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn duet_bin(args: &[&str], envs: &[(&str, &str)]) -> (i32, String, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_duet"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn train_with_zero_rounds_writes_empty_metrics_and_initial_checkpoint() {
    let dir = scratch("zero-rounds");
    let config = write_config(
        &dir,
        "config.json",
        &format!(
            r#"{{ "world": "demo-discrete", "schedule": {{ "max-rounds": 0 }},
                 "output-dir": {:?}, "run-id": "zero" }}"#,
            dir.to_str().unwrap()
        ),
    );
    let (code, _, stderr) = duet_bin(&["train", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code, 0, "{stderr}");
    let metrics = fs::read_to_string(dir.join("zero/metrics.jsonl")).unwrap();
    assert!(metrics.is_empty(), "no evaluations happen in zero rounds");
    // the checkpoint must hold the untouched initial parameters
    let ckpt = Checkpoint::from_json(&fs::read_to_string(dir.join("zero/checkpoint.json")).unwrap())
        .unwrap();
    let bundle = match ckpt.restore().unwrap() {
        Restored::Neural(b) => b,
        _ => panic!("training checkpoints are neural"),
    };
    use duet::trainer::{RawSchedule, TrainState};
    let sch = RawSchedule::default().validated().unwrap();
    let fresh = TrainState::new(&World::demo_discrete(), &sch);
    assert_eq!(
        bundle.gen_x.params[0].data, fresh.bundle.gen_x.params[0].data,
        "zero-round run must checkpoint exactly the seed-0 initialization"
    );
}

#[test]
fn train_rejects_bad_configs_naming_the_field() {
    let dir = scratch("bad-config");
    for (body, field) in [
        (r#"{ "world": "demo-discrete", "schedule": { "m": -1 } }"#, "`m`"),
        (r#"{ "world": "demo-discrete", "schedule": { "M": 0 } }"#, "`M`"),
        (r#"{ "world": "demo-discrete", "schedule": { "lr-disc": -0.1 } }"#, "`lr-disc`"),
        (r#"{ "world": "demo-discrete", "schedule": { "bogus": 1 } }"#, "bogus"),
        (r#"{ "world": 17 }"#, "world"),
    ] {
        let config = write_config(&dir, "config.json", body);
        let (code, _, stderr) = duet_bin(&["train", "--config", config.to_str().unwrap()], &[]);
        assert_eq!(code, 2, "{body} -> {stderr}");
        assert!(stderr.contains(field), "message must name {field}: {stderr}");
    }
}

#[test]
fn missing_files_exit_with_io_code() {
    let (code, _, _) = duet_bin(&["train", "--config", "/nonexistent/config.json"], &[]);
    assert_eq!(code, 3);
    let (code, _, _) = duet_bin(&["oracle", "--world", "/nonexistent/world.json"], &[]);
    assert_eq!(code, 3);
    let (code, _, _) =
        duet_bin(&["eval", "--checkpoint", "/nonexistent/c.json", "--world", "demo-discrete"], &[]);
    assert_eq!(code, 3);
}

#[test]
fn output_root_env_var_is_the_default_output_dir() {
    let dir = scratch("env-root");
    let config = write_config(
        &dir,
        "config.json",
        r#"{ "world": "demo-discrete", "schedule": { "max-rounds": 0 }, "run-id": "enved" }"#,
    );
    let (code, _, stderr) = duet_bin(
        &["train", "--config", config.to_str().unwrap()],
        &[("DUET_OUTPUT_ROOT", dir.to_str().unwrap())],
    );
    assert_eq!(code, 0, "{stderr}");
    assert!(dir.join("enved/checkpoint.json").exists());
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("enved/resolved-config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["output-dir"], dir.to_str().unwrap());
    // defaults are materialized
    assert_eq!(resolved["schedule"]["M"], 128);
    assert_eq!(resolved["schedule"]["loss-variant"]["kind"], "non-saturating");
    assert_eq!(resolved["world"]["type"], "discrete");
}

#[test]
fn oracle_prints_the_demo_tables() {
    let (code, stdout, _) = duet_bin(&["oracle", "--world", "demo-discrete"], &[]);
    assert_eq!(code, 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let enc = &doc["encoder-optimum"];
    assert!((enc[0][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((enc[0][1].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((enc[1][0].as_f64().unwrap() - 1.0 / 17.0).abs() < 1e-12);
    assert!((enc[1][1].as_f64().unwrap() - 16.0 / 17.0).abs() < 1e-12);
    let gen = &doc["generator-optimum"];
    assert!((gen[0][0].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!(doc["max-residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn oracle_reduces_to_the_source_posterior_when_the_prior_matches() {
    let dir = scratch("matching-prior");
    // same joint as the demo fixture but with the prior equal to the source marginal
    let path = write_config(
        &dir,
        "world.json",
        r#"{ "type": "discrete", "x-arity": 2, "z-arity": 2,
             "joint-source": [[0.4, 0.1], [0.1, 0.4]],
             "target-label-prior": [0.5, 0.5] }"#,
    );
    let (code, stdout, _) = duet_bin(&["oracle", "--world", path.to_str().unwrap()], &[]);
    assert_eq!(code, 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    // source posterior rows: p(z|x) = joint / input marginal = [0.8, 0.2] and [0.2, 0.8]
    let enc = &doc["encoder-optimum"];
    for (x, expect) in [(0, [0.8, 0.2]), (1, [0.2, 0.8])] {
        for z in 0..2 {
            assert!((enc[x][z].as_f64().unwrap() - expect[z]).abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_requires_a_finite_world() {
    let (code, _, stderr) = duet_bin(&["oracle", "--world", "demo-gaussian"], &[]);
    assert_eq!(code, 2);
    assert!(stderr.contains("finite world"), "{stderr}");
}

#[test]
fn eval_round_trips_a_training_checkpoint() {
    let dir = scratch("eval-roundtrip");
    let config = write_config(
        &dir,
        "config.json",
        &format!(
            r#"{{ "world": "demo-gaussian",
                 "schedule": {{ "M": 16, "max-rounds": 20, "eval-every": 10 }},
                 "output-dir": {:?}, "run-id": "g" }}"#,
            dir.to_str().unwrap()
        ),
    );
    let (code, _, stderr) = duet_bin(&["train", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code, 0, "{stderr}");
    let ckpt = dir.join("g/checkpoint.json");
    let (code, stdout, stderr) =
        duet_bin(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--world", "demo-gaussian"], &[]);
    assert_eq!(code, 0, "{stderr}");
    let record: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(record["encoder-rmse"].as_f64().unwrap().is_finite());
    assert!(record.get("encoder-tv").is_none());

    // the metric stream written by the run parses with the library loader
    let rows = read_jsonl(std::io::BufReader::new(fs::File::open(dir.join("g/metrics.jsonl")).unwrap()))
        .unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].round, 10);

    // scoring the same checkpoint against a world of different shape is a mismatch
    let (code, _, stderr) =
        duet_bin(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--world", "demo-discrete"], &[]);
    assert_eq!(code, 5, "{stderr}");
}

#[test]
fn eval_rejects_truncated_checkpoints() {
    let dir = scratch("truncated");
    let world = match World::demo_discrete() {
        World::Discrete(w) => w,
        _ => unreachable!(),
    };
    let enc = encoder_optimum(&world).unwrap();
    let full = Checkpoint::of_tables(&enc, &enc).to_json();
    let path = dir.join("cut.json");
    fs::write(&path, &full[..full.len() / 2]).unwrap();
    let (code, _, stderr) =
        duet_bin(&["eval", "--checkpoint", path.to_str().unwrap(), "--world", "demo-discrete"], &[]);
    assert_eq!(code, 5, "{stderr}");
}

#[test]
fn eval_scores_an_optimal_tabular_checkpoint_at_zero_distance() {
    let dir = scratch("tabular-eval");
    let out = dir.join("run");
    let (code, _, stderr) = duet_bin(
        &["tabular", "--world", "demo-discrete", "--steps", "0", "--init", "at-optimum",
          "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "{stderr}");
    let tables = out.join("tables.json");
    let (code, stdout, stderr) =
        duet_bin(&["eval", "--checkpoint", tables.to_str().unwrap(), "--world", "demo-discrete"], &[]);
    assert_eq!(code, 0, "{stderr}");
    let record: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(record["encoder-tv"].as_f64().unwrap(), 0.0);
    assert!(record["label-shift-margin"].as_f64().unwrap() > 0.0);
}

#[test]
fn tabular_with_zero_steps_reports_the_initialization_distance() {
    let dir = scratch("tabular-zero");
    let out = dir.join("run");
    let (code, stdout, stderr) = duet_bin(
        &["tabular", "--world", "demo-discrete", "--steps", "0", "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "{stderr}");
    let doc: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    // uniform start: the gap to the closed form is exactly the largest table entry's
    // distance from ½
    let world = match World::demo_discrete() {
        World::Discrete(w) => w,
        _ => unreachable!(),
    };
    let enc_star = encoder_optimum(&world).unwrap();
    let expected = TabularPolicy::uniform(2, 2).max_abs_diff(&enc_star);
    assert!((doc["encoder-max-abs-err"].as_f64().unwrap() - expected).abs() < 1e-15);
    assert_eq!(fs::read_to_string(out.join("trajectory.jsonl")).unwrap(), "");

    // the tables file is a loadable checkpoint (round-trip property)
    let ckpt = Checkpoint::from_json(&fs::read_to_string(out.join("tables.json")).unwrap()).unwrap();
    assert!(matches!(ckpt.restore().unwrap(), Restored::Tabular { .. }));
}

#[test]
fn tabular_writes_a_parseable_trajectory() {
    let dir = scratch("tabular-traj");
    let out = dir.join("run");
    let (code, _, stderr) = duet_bin(
        &["tabular", "--world", "demo-discrete", "--steps", "50", "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "{stderr}");
    let text = fs::read_to_string(out.join("trajectory.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 50);
    assert_eq!(rows[0]["step"], 0);
    let first = rows[0]["encoder-max-abs-err"].as_f64().unwrap();
    let last = rows[49]["encoder-max-abs-err"].as_f64().unwrap();
    assert!(last < first, "dynamics make progress: {first} -> {last}");
}

#[test]
fn tabular_reports_divergence_with_the_last_finite_row() {
    let dir = scratch("tabular-diverge");
    let out = dir.join("run");
    let (code, stdout, stderr) = duet_bin(
        &["tabular", "--world", "demo-discrete", "--steps", "5000", "--lr", "1e9",
          "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 1, "lr 1e9 must blow up: {stderr}");
    assert!(stderr.contains("diverged"), "{stderr}");
    let doc: serde_json::Value = serde_json::from_str(&stdout).expect("report is JSON");
    assert!(doc.get("diverged-at-step").is_some());
    assert!(doc.get("last-finite-row").is_some());
}

#[test]
fn tabular_exits_four_on_inconsistent_worlds() {
    let dir = scratch("tabular-inconsistent");
    let path = write_config(
        &dir,
        "world.json",
        r#"{ "type": "discrete", "x-arity": 2, "z-arity": 2,
             "joint-source": [[0.4, 0.1], [0.1, 0.4]],
             "target-label-prior": [0.2, 0.8],
             "target-input-marginal": [0.5, 0.5] }"#,
    );
    let (code, stdout, _) = duet_bin(&["tabular", "--world", path.to_str().unwrap()], &[]);
    assert_eq!(code, 4);
    let doc: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(doc["max-residual"].as_f64().unwrap() > 0.3);
}
