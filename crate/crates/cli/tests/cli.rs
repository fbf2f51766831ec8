use std::path::Path;
use std::process::{Command, Output};

fn emm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emm"))
        .args(args)
        .env("EMM_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = emm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn synth(dir: &Path, name: &str, seed: &str) -> String {
    let out = p(dir, name);
    ok(&[
        "synth",
        "--tags",
        "6",
        "--features",
        "30",
        "--examples",
        "60",
        "--seed",
        seed,
        "--out",
        &out,
    ]);
    out
}

#[test]
fn help_for_every_subcommand() {
    for sub in ["synth", "train", "predict", "eval", "inspect"] {
        let out = ok(&[sub, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("Usage"), "{sub}");
    }
    let text = String::from_utf8(ok(&["train", "--help"]).stdout).unwrap();
    for flag in [
        "--nu1",
        "--nu2",
        "--mode",
        "--em-iters",
        "--estep-iters",
        "--tol",
        "--seed",
        "--chi",
        "--eta",
        "--config",
    ] {
        assert!(text.contains(flag), "train --help lacks {flag}");
    }
    ok(&["--help"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(emm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(emm(&["train"]).status.code(), Some(1));
    let missing = p(dir.path(), "missing.jsonl");
    let model = p(dir.path(), "m.ckpt");
    assert_eq!(
        emm(&["train", "--corpus", &missing, "--out", &model]).status.code(),
        Some(2)
    );

    let corpus = synth(dir.path(), "c.jsonl", "3");
    assert_eq!(
        emm(&["train", "--corpus", &corpus, "--out", &model, "--mode", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        emm(&["--threads", "0", "inspect", "--model", &model]).status.code(),
        Some(1)
    );
    assert_eq!(
        emm(&["train", "--corpus", &corpus, "--out", &model, "--chi", "1"])
            .status
            .code(),
        Some(1)
    );

    let garbage = p(dir.path(), "bad.jsonl");
    std::fs::write(&garbage, "{not json\n").unwrap();
    let out = emm(&["train", "--corpus", &garbage, "--out", &model]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn workflow_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.jsonl", "7");
    assert!(dir.path().join("c.jsonl.truth.json").exists());
    let model = p(dir.path(), "m.ckpt");
    ok(&[
        "train",
        "--corpus",
        &corpus,
        "--mode",
        "mle",
        "--em-iters",
        "5",
        "--out",
        &model,
    ]);
    assert!(dir.path().join("m.ckpt").exists());
    let trace = std::fs::read_to_string(dir.path().join("m.ckpt.trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 5);

    let captions = p(dir.path(), "captions.jsonl");
    ok(&["predict", "--corpus", &corpus, "--model", &model, "--out", &captions]);
    let first: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&captions).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["ranked_tags"].as_array().unwrap().len(), 6);

    let regions = p(dir.path(), "regions.jsonl");
    ok(&[
        "predict",
        "--corpus",
        &corpus,
        "--model",
        &model,
        "--out",
        &regions,
        "--regions",
        "--use-labels",
    ]);
    let text = std::fs::read_to_string(&regions).unwrap();
    assert_eq!(text.lines().count(), 60);
    let rec: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for row in rec["phi"].as_array().unwrap() {
        let s: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    let out = ok(&["eval", "--corpus", &corpus, "--model", &model, "--k", "1,3,9"]);
    let rows: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2]["k"], 6);

    let text = String::from_utf8(ok(&["inspect", "--model", &model]).stdout).unwrap();
    assert!(text.contains("tags 6") && text.contains("features 30") && text.contains("mode mle"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.jsonl", "5");
    let cfg = p(dir.path(), "run.cfg");
    std::fs::write(&cfg, "# settings\nmode = max-margin\nem_max_iters = 2\nnu2 = 5\n").unwrap();
    let model = p(dir.path(), "m.ckpt");
    ok(&["train", "--corpus", &corpus, "--config", &cfg, "--out", &model]);
    let text = String::from_utf8(ok(&["inspect", "--model", &model]).stdout).unwrap();
    assert!(text.contains("mode max-margin"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("m.ckpt.trace.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    ok(&[
        "train", "--corpus", &corpus, "--config", &cfg, "--mode", "mle", "--out", &model,
    ]);
    let text = String::from_utf8(ok(&["inspect", "--model", &model]).stdout).unwrap();
    assert!(text.contains("mode mle"));

    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(
        emm(&["train", "--corpus", &corpus, "--config", &cfg, "--out", &model])
            .status
            .code(),
        Some(1)
    );
}
