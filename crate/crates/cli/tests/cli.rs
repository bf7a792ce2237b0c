use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latentnas"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small model so the tests stay quick.
fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.json");
    let cfg = serde_json::json!({
        "train": {
            "epochs": 3,
            "batch_size": 8,
            "optimizer": "adam",
            "learning_rate": 0.002,
            "eval_every": 3,
            "model": {"hidden": 12, "latent": 4, "predictor_hidden": 12, "max_nodes": 8}
        },
        "eval": {"prior_points": 20, "prior_decodes": 2, "n_latent": 2, "n_decode": 2},
        "search": {"restarts": 3, "iterations": 5}
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn gen_data(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&["gen-data", "--n", &n.to_string(), "--internal-nodes", "3", "--seed", &seed.to_string(), "--out", p(&out)]);
    out.join("dataset.jsonl")
}

#[test]
fn gen_data_is_reproducible_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_data(dir.path(), "a", 60, 7);
    let b = gen_data(dir.path(), "b", 60, 7);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 60);
    for line in text.lines() {
        let rec = latentnas::arch::Record::from_json_line(line).unwrap();
        assert!(rec.arch.is_valid(8));
        assert!(rec.perf.is_some() && rec.comp.is_some() && rec.split.is_some());
    }
    assert!(dir.path().join("a/config.json").exists());
}

#[test]
fn gen_data_rejects_tiny_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--n", "5", "--out", p(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 10"));
}

#[test]
fn gen_data_reports_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run(&["gen-data", "--n", "10", "--out", p(&blocker.join("sub"))]);
    assert!(!out.status.success());
}

#[test]
fn train_eval_search_sweep_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = gen_data(dir.path(), "data", 50, 3);

    let t1 = dir.path().join("t1");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&t1), "--serial", "--seed", "4"]);
    let log = fs::read_to_string(t1.join("trainlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("epoch,rec_loss,kl,pred_loss,total,seconds"));
    assert!(t1.join("checkpoint.json").exists() && t1.join("config.json").exists());
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(t1.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["train"]["epochs"], 3);
    assert_eq!(echo["train"]["seed"], 4);
    assert_eq!(echo["serial"], true);

    let t2 = dir.path().join("t2");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&t2), "--serial", "--seed", "4"]);
    assert_eq!(log, fs::read_to_string(t2.join("trainlog.csv")).unwrap());
    assert_eq!(fs::read(t1.join("checkpoint.json")).unwrap(), fs::read(t2.join("checkpoint.json")).unwrap());

    let ck = t1.join("checkpoint.json");
    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    ok(&["eval", "--config", p(&cfg), "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&e1), "--seed", "1"]);
    ok(&["eval", "--config", p(&cfg), "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&e2), "--seed", "1"]);
    let report = fs::read_to_string(e1.join("eval.json")).unwrap();
    assert_eq!(report, fs::read_to_string(e2.join("eval.json")).unwrap());
    let r: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(r["validity"], 1.0);
    for key in ["reconstruction_accuracy", "reconstruction_accuracy_test", "validity", "uniqueness", "novelty"] {
        let f = r[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f), "{key} = {f}");
    }
    for key in ["rmse_perf_train", "rmse_perf_test", "rmse_comp_train", "rmse_comp_test"] {
        assert!(r[key].as_f64().unwrap().is_finite());
    }
    assert_eq!(r["protocol"]["n_latent"], 2);

    let s1 = dir.path().join("s1");
    let s2 = dir.path().join("s2");
    ok(&["search", "--config", p(&cfg), "--checkpoint", p(&ck), "--score-with-oracle", "--out", p(&s1), "--serial"]);
    ok(&["search", "--config", p(&cfg), "--checkpoint", p(&ck), "--score-with-oracle", "--out", p(&s2), "--serial"]);
    let result = fs::read_to_string(s1.join("search.json")).unwrap();
    assert_eq!(result, fs::read_to_string(s2.join("search.json")).unwrap());
    let res: serde_json::Value = serde_json::from_str(&result).unwrap();
    let hits = res["hits"].as_array().unwrap();
    assert!(!hits.is_empty() && hits.len() <= 3);
    for h in hits {
        let arch: latentnas::arch::Architecture = serde_json::from_value(h["architecture"].clone()).unwrap();
        assert!(arch.is_valid(8));
        assert!(h["oracle"]["perf"].is_f64());
        assert_eq!(h["trajectory"].as_array().unwrap().len(), 6);
    }
    let traj = fs::read_to_string(s1.join("trajectories.csv")).unwrap();
    assert!(traj.starts_with("restart,step,f\n"));
    assert_eq!(traj.lines().count(), 1 + 3 * 6);

    let w1 = dir.path().join("w1");
    let w2 = dir.path().join("w2");
    ok(&["sweep", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&w1)]);
    ok(&["sweep", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&w2)]);
    let grid = fs::read_to_string(w1.join("sweep.csv")).unwrap();
    assert_eq!(grid, fs::read_to_string(w2.join("sweep.csv")).unwrap());
    assert_eq!(grid.lines().next(), Some("a,b,f_perf"));
    assert_eq!(grid.lines().count(), 1 + 41 * 41);
}

#[test]
fn fingerprint_mismatch_only_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = gen_data(dir.path(), "d1", 20, 1);
    let other = gen_data(dir.path(), "d2", 20, 2);
    let t = dir.path().join("t");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&t), "--serial"]);
    let out = run(&["eval", "--config", p(&cfg), "--checkpoint", p(&t.join("checkpoint.json")), "--data", p(&other), "--out", p(&dir.path().join("e"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("missing.json");
    let out = dir.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--data", p(&nowhere), "--out", p(&out)],
        vec!["train", "--out", p(&out)],
        vec!["search", "--checkpoint", p(&nowhere), "--out", p(&out)],
        vec!["eval", "--checkpoint", p(&nowhere), "--data", p(&nowhere), "--out", p(&out)],
        vec!["sweep", "--checkpoint", p(&nowhere), "--data", p(&nowhere), "--out", p(&out)],
        vec!["gen-data", "--config", p(&nowhere), "--out", p(&out)],
    ];
    for args in cases {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), "d", 20, 5);
    let cfg = dir.path().join("hot.json");
    let hot = serde_json::json!({
        "train": {"epochs": 5, "learning_rate": 1e300, "clip_norm": 1e300, "optimizer": "sgd", "eval_every": 0,
                  "model": {"hidden": 8, "latent": 2, "predictor_hidden": 8, "max_nodes": 8}}
    });
    fs::write(&cfg, hot.to_string()).unwrap();
    let out = run(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn degenerate_sweep_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = gen_data(dir.path(), "d", 20, 6);
    let t = dir.path().join("t");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&t), "--serial"]);
    // every record is the same graph: zero latent variance
    let first = fs::read_to_string(&data).unwrap().lines().next().unwrap().to_string();
    let same = dir.path().join("same.jsonl");
    fs::write(&same, format!("{first}\n").repeat(5)).unwrap();
    let out = run(&["sweep", "--checkpoint", p(&t.join("checkpoint.json")), "--data", p(&same), "--out", p(&dir.path().join("w"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
