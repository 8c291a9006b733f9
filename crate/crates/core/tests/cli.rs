use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_regretforge"));
    c.env("REGRETFORGE_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_train(out: &Path, algo: &str, seed: &str, iters: &str) -> Output {
    run(&[
        "train", "--algo", algo, "--iters", iters, "--seed", seed, "--K", "2", "--N", "4", "--M", "2",
        "--primitive-subset", "scaled", "--eval-every", "5", "--eval-episodes", "2", "--eval-tasks", "login:1",
        "--out", out.to_str().unwrap(),
    ])
}

#[test]
fn train_smoke_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = small_train(&out, "flexible_b", "7", "10");
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.json", "completion.json", "metrics.jsonl", "eval.jsonl", "eval/iter_000005_agent_a.csv", "eval/iter_000010_agent_p.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for f in ["agent_a.rfck", "agent_p.rfck", "adversary.rfck"] {
        assert!(out.join("checkpoints/final").join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 10);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["algo"], "flexible_b");
    assert_eq!(manifest["config"]["seed"], 7);
    assert_eq!(manifest["config"]["max_pages"], 2);
    assert_eq!(manifest["config"]["primitive_subset"].as_array().unwrap().len(), 12);
    let csv = std::fs::read_to_string(out.join("eval/iter_000010_agent_a.csv")).unwrap();
    assert!(csv.starts_with("task,difficulty,success_rate,episodes,seed\nlogin,1,"));
}

#[test]
fn dr_writes_no_adversary_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_train(dir.path(), "dr", "1", "5");
    assert!(o.status.success(), "{}", stderr(&o));
    let final_dir = dir.path().join("checkpoints/final");
    assert!(final_dir.join("agent_a.rfck").is_file());
    assert!(!final_dir.join("adversary.rfck").exists());
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_train(&a, "paired_b", "3", "8").status.success());
    assert!(small_train(&b, "paired_b", "3", "8").status.success());
    let ma = std::fs::read(a.join("metrics.jsonl")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.jsonl")).unwrap());
    assert_eq!(std::fs::read(a.join("eval.jsonl")).unwrap(), std::fs::read(b.join("eval.jsonl")).unwrap());
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--M", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("episodes"), "{}", stderr(&o));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "iterations = 5\nnot_a_key = 1\n").unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not_a_key"), "{}", stderr(&o));

    let o = bin().args(["train", "--out", dir.path().to_str().unwrap()]).env("REGRETFORGE_ITERATIONS", "many").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_env_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "algo = \"cl\"\niterations = 50\nseed = 1\nmax_pages = 2\nsteps = 4\nepisodes = 2\neval_every = 0\n").unwrap();
    let out = dir.path().join("run");
    let o = bin()
        .args(["train", "--config", cfg.to_str().unwrap(), "--iters", "3", "--out", out.to_str().unwrap()])
        .env("REGRETFORGE_SEED", "9")
        .env("REGRETFORGE_ITERATIONS", "4")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["algo"], "cl");
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(m["config"]["iterations"], 3);
    assert_eq!(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn eval_oracle_gives_all_ones() {
    let o = run(&["eval", "--oracle", "--episodes", "3", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("task,")).collect();
    assert_eq!(rows.len(), 20);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), 1.0, "{r}");
    }
}

#[test]
fn eval_checkpoint_and_task_filter() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_train(dir.path(), "dr", "2", "2").status.success());
    let ck = dir.path().join("checkpoints/final");
    let out = dir.path().join("ev");
    let o = run(&["eval", "--checkpoint", ck.to_str().unwrap(), "--tasks", "login:1", "--episodes", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for tag in ["a", "p"] {
        let csv = std::fs::read_to_string(out.join(format!("eval_agent_{tag}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("login,1,"));
    }
    let single = ck.join("agent_p.rfck");
    let o = run(&["eval", "--checkpoint", single.to_str().unwrap(), "--tasks", "login", "--tasks", "address:2", "--episodes", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().filter(|l| l.starts_with("login,") || l.starts_with("address,")).count(), 5);
}

#[test]
fn eval_missing_checkpoint_exits_2() {
    let o = run(&["eval", "--checkpoint", "/nonexistent/ck.rfck"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--checkpoint", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn render_task_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("login4");
    let o = run(&["render", "--task", "login:4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("page_0.html").is_file());
    assert!(!out.join("page_1.html").exists());
    assert!(std::fs::read_to_string(out.join("spec.gmds")).unwrap().starts_with("GMDS/1\n"));
    assert!(std::fs::read_to_string(out.join("website.gmwb")).unwrap().starts_with("GMWB/1"));

    for source in ["dr", "cl", "adversary"] {
        let (a, b) = (dir.path().join(format!("{source}_a")), dir.path().join(format!("{source}_b")));
        for d in [&a, &b] {
            let o = run(&["render", "--sample", source, "--seed", "1", "--out", d.to_str().unwrap()]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        assert_eq!(std::fs::read(a.join("website.gmwb")).unwrap(), std::fs::read(b.join("website.gmwb")).unwrap());
        assert_eq!(std::fs::read(a.join("spec.gmds")).unwrap(), std::fs::read(b.join("spec.gmds")).unwrap());
    }
}

#[test]
fn render_invalid_spec_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.gmds");
    std::fs::write(&spec, "GMDS/1\nk 1\nprovenance dr\nactions username@0 nosuchthing@0\n").unwrap();
    let o = run(&["render", "--spec", spec.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("4:"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("g.json");
    let o = run(&["gradcheck", "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("op/tanh") && text.contains("adversary/loss") && text.contains("max rel err"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert!(json.as_array().unwrap().iter().all(|c| c["report"]["max_rel_err"].as_f64().unwrap() < 1e-4));

    let o = run(&["gradcheck", "--corrupt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL"));
}
