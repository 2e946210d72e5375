use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gaitrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitrecon"))
        .args(args)
        .env_remove("GAITRECON_OUTPUT")
        .env("RUST_LOG", "off")
        .output()
        .expect("spawn gaitrecon")
}

/// Runs to success and returns the last stdout line.
fn ok(args: &[&str]) -> String {
    let out = gaitrecon(args);
    assert!(
        out.status.success(),
        "gaitrecon {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap().lines().last().unwrap_or_default().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, subjects: usize, cycles: usize) -> PathBuf {
    let out = dir.join("corpus");
    let manifest = ok(&[
        "synth",
        "--subjects",
        &subjects.to_string(),
        "--cycles",
        &cycles.to_string(),
        "--period",
        "12",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    let manifest = PathBuf::from(manifest);
    assert!(manifest.exists());
    manifest
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn gei_forest_and_classify() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 3, 4);

    let geis = dir.path().join("geis");
    ok(&["gei", "--in", p(&manifest), "--out", p(&geis)]);
    let index = read_json(&geis.join("gei.json"));
    let entries = index.as_array().unwrap();
    assert_eq!(entries.len(), 12);
    for e in entries {
        assert!(geis.join(e["path"].as_str().unwrap()).exists());
    }

    let forest = dir.path().join("forest.bin");
    ok(&["train-forest", "--in", p(&manifest), "--trees", "15", "--out", p(&forest)]);
    let out = gaitrecon(&["classify", "--forest", p(&forest), "--in", p(&manifest), "--top", "2"]);
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 12);
    let mut hits = 0;
    for l in &lines {
        let ranked = l["ranked"].as_array().unwrap();
        assert_eq!(ranked.len(), 2);
        if ranked[0][0] == l["subject_id"] {
            hits += 1;
        }
    }
    // gallery cycles are memorized; held-out cycles of distinct walkers
    // should mostly follow
    assert!(hits >= 10, "only {hits} of 12 cycles ranked first");
}

#[test]
fn occlude_then_detect_recovers_mask() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2, 2);
    let occluded = PathBuf::from(ok(&[
        "occlude",
        "--in",
        p(&manifest),
        "--band",
        "0.2:0.3",
        "--seed",
        "5",
        "--out",
        p(&dir.path().join("occluded")),
    ]));
    let found = dir.path().join("detected.json");
    ok(&["detect", "--in", p(&occluded), "--out", p(&found)]);
    let detected = read_json(&found);
    let truth = read_json(&occluded);
    let seqs = detected["sequences"].as_array().unwrap();
    assert_eq!(seqs.len(), 2);
    for s in seqs {
        let n = s["occluded_indices"].as_array().unwrap().len();
        assert!((4..=8).contains(&n), "{n} frames flagged of 24");
    }
    assert!(truth.is_object());
}

#[test]
fn train_reconstruct_evaluate_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = synth(d, 3, 3);
    let models = d.join("models");
    let (ae, m1, m2, fusion) =
        (models.join("autoencoder.ckpt"), models.join("lstm_forward.ckpt"), models.join("lstm_backward.ckpt"), models.join("fusion.ckpt"));
    ok(&["train-ae", "--in", p(&manifest), "--frame-stride", "12", "--epochs", "1", "--out", p(&ae)]);
    for (direction, path) in [("forward", &m1), ("backward", &m2)] {
        ok(&[
            "train-lstm", "--in", p(&manifest), "--ae", p(&ae), "--direction", direction, "--hidden", "4", "--epochs", "1",
            "--out", p(path),
        ]);
    }
    ok(&[
        "train-fusion", "--in", p(&manifest), "--ae", p(&ae), "--m1", p(&m1), "--m2", p(&m2), "--width", "2", "--blocks",
        "1", "--epochs", "1", "--max-triples", "4", "--occlusions-per-sequence", "1", "--out", p(&fusion),
    ]);

    let occluded = PathBuf::from(ok(&[
        "occlude", "--in", p(&manifest), "--band", "0.1:0.2", "--out", p(&d.join("occluded")),
    ]));
    let rebuilt = PathBuf::from(ok(&[
        "reconstruct", "--in", p(&occluded), "--ae", p(&ae), "--m1", p(&m1), "--m2", p(&m2), "--fusion", p(&fusion),
        "--out", p(&d.join("rebuilt")),
    ]));
    assert!(rebuilt.exists());
    let plans = read_json(&d.join("rebuilt").join("plan.json"));
    assert_eq!(plans.as_array().unwrap().len(), 3);

    let results = PathBuf::from(ok(&[
        "evaluate", "--corpus", p(&manifest), "--models", p(&models), "--bands", "0.05:0.10,0.20:0.30", "--trees", "5",
        "--out", p(&d.join("eval")),
    ]));
    let report = read_json(&results);
    assert_eq!(report["bands"].as_array().unwrap().len(), 2);
    assert_eq!(report["dice_mode"], "soft");

    let table = PathBuf::from(ok(&["report", "--results", p(&results), "--out", p(&d.join("again"))]));
    assert_eq!(std::fs::read(&table).unwrap(), std::fs::read(d.join("eval").join("report.md")).unwrap());
    assert!(d.join("again").join("cmc.png").exists());
    assert!(d.join("again").join("dice.png").exists());
}

#[test]
fn pipeline_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.json");
    std::fs::write(&file, r#"{"version": 1, "seed": 7, "autoencoder": {"train": {"epochs": 3}}, "output": "from-file"}"#)
        .unwrap();
    let dump = |extra: &[&str], env: Option<&str>| -> serde_json::Value {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gaitrecon"));
        cmd.args(["pipeline", "--preset", "toy", "--config", p(&file), "--dump-config"]).args(extra);
        match env {
            Some(v) => cmd.env("GAITRECON_OUTPUT", v),
            None => cmd.env_remove("GAITRECON_OUTPUT"),
        };
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    };

    let c = dump(&[], None);
    assert_eq!(c["seed"], 7);
    assert_eq!(c["autoencoder"]["train"]["epochs"], 3);
    // untouched keys keep the preset value
    assert_eq!(c["predictor"]["shape"]["hidden"], 64);
    assert_eq!(c["output"], "from-file");
    // stage seeds follow the run seed
    assert_eq!(c["autoencoder"]["train"]["seed"], 8);

    let c = dump(&[], Some("from-env"));
    assert_eq!(c["output"], "from-env");

    let c = dump(&["--seed", "9", "--output", "from-flag", "--hidden", "12"], Some("from-env"));
    assert_eq!(c["seed"], 9);
    assert_eq!(c["output"], "from-flag");
    assert_eq!(c["predictor"]["shape"]["hidden"], 12);
}

#[test]
fn failures_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = gaitrecon(&["gei", "--in", p(&dir.path().join("missing.json")), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version": 1, "no_such_key": 1}"#).unwrap();
    let out = gaitrecon(&["pipeline", "--config", p(&bad), "--dump-config"]);
    assert!(!out.status.success());

    let out = gaitrecon(&["occlude", "--in", "x", "--band", "0.5:0.2", "--out", "y"]);
    assert!(!out.status.success());
}

#[test]
fn pipeline_failure_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = gaitrecon(&[
        "pipeline",
        "--preset",
        "toy",
        "--corpus",
        p(&dir.path().join("absent.json")),
        "--output",
        p(&out_dir),
    ]);
    assert!(!out.status.success());
    let status = read_json(&out_dir.join("status.json"));
    assert_eq!(status["stage"], "corpus");
}
