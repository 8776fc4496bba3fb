use std::fs;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use serde_json::Value;

fn mcle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcle"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("MCLE_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mcle(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, per_class: usize) {
    ok(&[
        "synth",
        "--classes",
        "5",
        "--per-class",
        &per_class.to_string(),
        "--dim",
        "16",
        "--prior-noise",
        "0.5",
        "--seed",
        "7",
        "--out",
        dir.to_str().unwrap(),
    ]);
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 100);
    synth(&b, 100);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let split = fs::read_to_string(a.join("split.csv")).unwrap();
    assert_eq!(split.lines().filter(|l| !l.trim().is_empty()).count(), 500);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let res = mcle(&["synth", "--prior-noise", "-1", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(mcle(&["frobnicate"]).status.code(), Some(2));

    synth(&out, 20);
    let d = out.to_str().unwrap();
    let r = tmp.path().join("r.json");
    let r = r.to_str().unwrap();
    for bad in [
        vec!["run", "--data", d, "--class", "c0", "--strategy", "greedy", "--out", r],
        vec!["run", "--data", d, "--class", "c0", "--rho-prime", "1.5", "--out", r],
        vec!["run", "--data", d, "--out", r],
        vec!["run", "--data", d, "--class", "c0"],
    ] {
        assert_eq!(mcle(&bad).status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn data_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let r = tmp.path().join("r.json");
    let res = mcle(&["run", "--data", missing.to_str().unwrap(), "--class", "c0", "--out", r.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let res = mcle(&["serve", "--data", missing.to_str().unwrap(), "--port", "0"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));

    let d = tmp.path().join("d");
    synth(&d, 20);
    let res = mcle(&["run", "--data", d.to_str().unwrap(), "--class", "zzz", "--out", r.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn run_writes_full_curve() {
    let tmp = tempfile::tempdir().unwrap();
    // 375 training samples, enough for 300 iterations
    let d = tmp.path().join("d");
    synth(&d, 150);
    let r = tmp.path().join("r.json");
    let stdout = ok(&[
        "run", "--data", d.to_str().unwrap(), "--class", "c0", "--strategy", "mcle", "--prior", "constant",
        "--iters", "300", "--seed", "1", "--out", r.to_str().unwrap(),
    ]);
    assert!(stdout.contains("c0 mcle"));
    let run = read_json(&r);
    let iterations = run["iterations"].as_array().unwrap();
    assert_eq!(iterations.len(), 301);
    assert!(iterations.iter().all(|it| it["test_ap"].is_number()));
    let csv = fs::read_to_string(r.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 302);
    assert!(csv.starts_with("t,test_ap\n"));
    assert!(r.with_extension("almd").is_file());
    assert_eq!(run["final_model_path"], r.with_extension("almd").display().to_string());
}

#[test]
fn run_stops_at_pool_exhaustion() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth(&d, 20);
    let r = tmp.path().join("r.json");
    ok(&["run", "--data", d.to_str().unwrap(), "--class", "c2", "--strategy", "fzero", "--iters", "300", "--out", r.to_str().unwrap()]);
    let run = read_json(&r);
    // 50 training samples
    assert_eq!(run["iterations"].as_array().unwrap().len(), 51);
    assert_eq!(run["config"]["strategy"]["kind"], "fzero_only");
}

#[test]
fn zero_iterations_is_prior_only() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth(&d, 20);
    let r = tmp.path().join("r.json");
    ok(&["run", "--data", d.to_str().unwrap(), "--class", "c0", "--iters", "0", "--out", r.to_str().unwrap()]);
    let run = read_json(&r);
    let iterations = run["iterations"].as_array().unwrap();
    assert_eq!(iterations.len(), 1);
    assert_eq!(iterations[0]["t"], 0);
    assert!(iterations[0]["queried"].as_array().unwrap().is_empty());
    assert!(iterations[0]["test_ap"].is_number());
}

#[test]
fn config_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth(&d, 20);
    let cfg = tmp.path().join("cfg.json");
    let r1 = tmp.path().join("r1.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "data_dir": d, "class": "c1", "strategy": "random", "prior": "linear_decay",
            "max_iters": 12, "seed": 4, "out": r1,
        })
        .to_string(),
    )
    .unwrap();
    ok(&["run", "--config", cfg.to_str().unwrap()]);
    let a = read_json(&r1);
    assert_eq!(a["config"]["seed"], 4);
    assert_eq!(a["iterations"].as_array().unwrap().len(), 13);

    // identical flags reproduce the run; a flag overrides the file
    let r2 = tmp.path().join("r2.json");
    ok(&["run", "--config", cfg.to_str().unwrap(), "--out", r2.to_str().unwrap()]);
    assert_eq!(read_json(&r2)["iterations"], a["iterations"]);
    let r3 = tmp.path().join("r3.json");
    ok(&["run", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", r3.to_str().unwrap()]);
    assert_eq!(read_json(&r3)["config"]["seed"], 5);

    fs::write(&cfg, r#"{"colour": "red"}"#).unwrap();
    assert_eq!(mcle(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn all_unknown_runs_every_class() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth(&d, 20);
    let out = tmp.path().join("runs");
    ok(&["run", "--data", d.to_str().unwrap(), "--all-unknown", "--iters", "10", "--out", out.to_str().unwrap()]);
    for c in 0..5 {
        assert!(out.join(format!("c{c}.json")).is_file());
        assert!(out.join(format!("c{c}.csv")).is_file());
    }
    let grid = fs::read_to_string(out.join("mean_ap.csv")).unwrap();
    assert!(grid.starts_with("t,c0,c1,c2,c3,c4,mean\n"));
    assert_eq!(grid.lines().count(), 8);
}

#[test]
fn sweep_summary_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth(&d, 30);
    let sweep = |out: &Path| {
        ok(&[
            "sweep", "--data", d.to_str().unwrap(), "--strategies", "mcle,random,fzero", "--classes", "c0,c3",
            "--seeds", "3", "--iters", "55", "--out", out.to_str().unwrap(),
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let stdout = sweep(&a);
    sweep(&b);
    assert!(stdout.contains("18 runs"));
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary, fs::read_to_string(b.join("summary.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("curves.csv")).unwrap(),
        fs::read(b.join("curves.csv")).unwrap()
    );
    // header, 3 strategies x 7 grid points, one win-rate row
    assert_eq!(summary.lines().count(), 1 + 21 + 1);
    assert!(summary.lines().any(|l| l.starts_with("mean_ap,fzero,50,")));
    let win = summary.lines().find(|l| l.starts_with("win_rate,mcle>=random,50,")).unwrap();
    let rate: f64 = win.rsplit(',').next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    // 18 runs x 56 logged iterations
    let curves = fs::read_to_string(a.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 18 * 56);
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[cfg(unix)]
#[test]
fn serve_answers_and_checkpoints_on_sigterm() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth(&d, 20);
    let ck = tmp.path().join("ck");
    let port = free_port().to_string();
    let mut child = Command::new(env!("CARGO_BIN_EXE_mcle"))
        .args(["serve", "--port", &port, "--checkpoint-dir", ck.to_str().unwrap()])
        .env("MCLE_DATA_DIR", &d)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}");
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let out = mcle(&["session", "--url", &url, "health"]);
        if out.status.success() {
            assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
            break;
        }
        assert!(Instant::now() < deadline, "service never came up");
        sleep(Duration::from_millis(100));
    }

    let created: Value = serde_json::from_str(&ok(&["session", "--url", &url, "create", "--class", "c0"])).unwrap();
    let id = created["session_id"].as_str().unwrap().to_string();
    let q: Value = serde_json::from_str(&ok(&["session", "--url", &url, "query", &id])).unwrap();
    let sample = q["sample_id"].to_string();
    let labelled: Value = serde_json::from_str(&ok(&["session", "--url", &url, "label", &id, &sample, "-1"])).unwrap();
    assert_eq!(labelled["t"], 1);
    let bad = mcle(&["session", "--url", &url, "label", &id, &sample, "-1"]);
    assert_eq!(bad.status.code(), Some(1));

    let status = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(30);
    let exit = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "service ignored SIGTERM");
        sleep(Duration::from_millis(50));
    };
    assert!(exit.success());
    let checkpoint = read_json(&ck.join(&id).join("checkpoint.json"));
    assert_eq!(checkpoint["labels"].as_array().unwrap().len(), 1);
}
