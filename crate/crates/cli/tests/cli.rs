use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn clea(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clea"))
        .args(args)
        .env("CLEA_OUTPUT", root)
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> serde_json::Value {
    let out = clea(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn err(root: &Path, args: &[&str]) -> (i32, serde_json::Value) {
    let out = clea(root, args);
    let code = out.status.code().unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    let v = serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr not json ({e}): {stderr}"));
    (code, v)
}

fn small_db(root: &Path, name: &str, seed: &str) -> PathBuf {
    ok(root, &["gen-db", "--modality", "visual", "--n", "300", "--seed", seed, "--out", name]);
    root.join(name)
}

#[test]
fn gen_db_is_deterministic_in_the_seed() {
    let tmp = TempDir::new().unwrap();
    let a = small_db(tmp.path(), "a", "5");
    let b = small_db(tmp.path(), "b", "5");
    let c = small_db(tmp.path(), "c", "6");
    let read = |d: &Path| std::fs::read(d.join("db.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert!(a.join("aux.jsonl").exists());
    let config = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(config.starts_with("# "));
    assert!(config.contains("seed = 5"));
}

#[test]
fn refuses_to_overwrite_artifacts() {
    let tmp = TempDir::new().unwrap();
    small_db(tmp.path(), "db", "0");
    let (code, v) = err(tmp.path(), &["gen-db", "--n", "300", "--out", "db"]);
    assert_eq!(code, 2);
    assert_eq!(v["error"], "data");
    assert!(v["path"].as_str().unwrap().ends_with("db"));
}

#[test]
fn usage_errors_exit_one_with_json() {
    let tmp = TempDir::new().unwrap();
    let (code, v) = err(tmp.path(), &["gen-db", "--set", "plan.bogus=1"]);
    assert_eq!(code, 1);
    assert_eq!(v["error"], "usage");
    let (code, v) = err(tmp.path(), &["no-such-command"]);
    assert_eq!(code, 1);
    assert_eq!(v["error"], "usage");
    let (code, _) = err(tmp.path(), &["gen-db", "--modality", "olfactory"]);
    assert_eq!(code, 1);
    assert!(clea(tmp.path(), &["--help"]).status.success());
}

#[test]
fn set_overrides_reach_the_written_config() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("run.toml");
    std::fs::write(&file, "seed = 9\n[plan]\neval_users = 11\n").unwrap();
    let f = file.to_str().unwrap();
    ok(tmp.path(), &["--config", f, "--set", "plan.hyper.alpha=0.25", "gen-db", "--n", "300", "--out", "d"]);
    let written: toml::Table = std::fs::read_to_string(tmp.path().join("d/config.toml")).unwrap().parse().unwrap();
    assert_eq!(written["seed"].as_integer(), Some(9));
    assert_eq!(written["plan"]["eval_users"].as_integer(), Some(11));
    assert_eq!(written["plan"]["hyper"]["alpha"].as_float(), Some(0.25));
}

#[test]
fn missing_checkpoint_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let db = small_db(tmp.path(), "db", "0");
    let sim = tmp.path().join("sim");
    std::fs::create_dir_all(&sim).unwrap();
    std::fs::write(sim.join("rankings.jsonl"), "").unwrap();
    let nowhere = tmp.path().join("nowhere");
    let (code, v) = err(
        tmp.path(),
        &[
            "evaluate",
            "--db",
            db.to_str().unwrap(),
            "--rankings",
            sim.to_str().unwrap(),
            "--spaces",
            nowhere.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 2);
    assert!(v["path"].as_str().unwrap().contains("nowhere"), "{v}");
}

#[test]
fn artifact_pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let db = small_db(root, "db", "1");
    let dbs = db.to_str().unwrap();
    let sim = ok(root, &["simulate", "--db", dbs, "--users", "8", "--pages", "3", "--page-size", "30", "--eval-users", "6", "--out", "sim"]);
    assert!(sim["rankings"].as_u64().unwrap() > 0);
    let sims = root.join("sim");
    let sims = sims.to_str().unwrap();
    let few = "plan.hyper.epochs=5";
    ok(root, &["--set", few, "train", "--db", dbs, "--sessions", sims, "--objective", "clea", "--dim", "4", "--out", "clea"]);
    ok(root, &["--set", few, "train", "--db", dbs, "--objective", "random", "--dim", "4", "--out", "random"]);
    let loss = std::fs::read_to_string(root.join("clea/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 6);

    // Training without sessions is refused for session objectives.
    let (code, _) = err(root, &["train", "--db", dbs, "--objective", "clea", "--dim", "4", "--out", "x"]);
    assert_eq!(code, 1);

    let spaces = format!("{},{}", root.join("clea").display(), root.join("random").display());
    ok(
        root,
        &[
            "--set",
            "plan.alignment_users=2",
            "evaluate",
            "--criteria",
            "completeness,explainability",
            "--db",
            dbs,
            "--rankings",
            sims,
            "--spaces",
            &spaces,
            "--out",
            "eval",
        ],
    );
    let criteria = std::fs::read_to_string(root.join("eval/criteria.csv")).unwrap();
    assert!(criteria.lines().count() >= 3, "{criteria}");

    let out = clea(root, &["neighbors", "--space", root.join("clea").to_str().unwrap(), "--db", dbs, "--id", "3", "--k", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,id,cosine");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| !l.split(',').nth(1).unwrap().eq("3")));

    let report = root.join("eval/report.json");
    let v = ok(root, &["plot-data", "--report", report.to_str().unwrap(), "--out", "plots"]);
    assert!(!v["files"].as_array().unwrap().is_empty());

    ok(root, &["--set", "plan.hyper.epochs=3", "sweep", "--db", dbs, "--sessions", sims, "--objective", "clea", "--dim", "2", "--param", "alpha", "--values", "0.1,1", "--out", "sweep"]);
    let sweep = std::fs::read_to_string(root.join("sweep/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.lines().next().unwrap().contains("validation_triplet_accuracy"));
}

#[test]
fn simulation_mode_evaluate_writes_a_report() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    ok(
        root,
        &[
            "--set",
            "plan.objectives=[\"random\",\"clea\"]",
            "--set",
            "plan.generator.n=300",
            "--set",
            "plan.train_users=6",
            "--set",
            "plan.eval_users=6",
            "--set",
            "plan.hyper.epochs=3",
            "--set",
            "plan.dims=[2]",
            "--set",
            "plan.primary_dim=2",
            "evaluate",
            "--criteria",
            "completeness",
            "--modality",
            "auditory",
            "--seeds",
            "1",
            "--out",
            "sim-eval",
        ],
    );
    let dir = root.join("sim-eval");
    assert!(dir.join("report.json").exists());
    assert!(dir.join("criteria.csv").exists());
}
