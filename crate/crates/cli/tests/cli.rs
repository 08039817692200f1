use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &[&str] = &[
    "data.n_patients=24",
    "data.grid_h=3",
    "data.grid_w=3",
    "data.genes=10",
    "data.feature_dim=16",
    "fer.hidden=8",
    "fer.attention_dim=4",
    "cmae.width=6",
    "survival.head_hidden=4",
    "train.epochs=2",
    "train.batch=8",
    "eval.folds=3",
];

fn hetsurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetsurv")).args(args).output().expect("binary runs")
}

fn with_small(mut args: Vec<String>, extra: &[&str]) -> Vec<String> {
    for kv in SMALL.iter().chain(extra) {
        args.push("--set".into());
        args.push(kv.to_string());
    }
    args
}

fn run(args: Vec<String>) -> Output {
    hetsurv(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = run(with_small(vec!["generate".into(), "--out".into(), p(&out)], extra));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn train(dir: &Path, cohort: &Path, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join("run");
    let o = run(with_small(vec!["train".into(), "--cohort".into(), p(cohort), "--out".into(), p(&out)], extra));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

/// Rewrites each patient line of a cohort file through `f`.
fn edit_cohort(src: &Path, dst: &Path, keep: usize, f: impl Fn(&mut serde_json::Value)) {
    let text = fs::read_to_string(src).unwrap();
    let mut lines = text.lines();
    let mut header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    let mut out = Vec::new();
    for l in lines.take(keep) {
        let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
        f(&mut v);
        out.push(serde_json::to_string(&v).unwrap());
    }
    header["patients"] = out.len().into();
    fs::write(dst, format!("{header}\n{}\n", out.join("\n"))).unwrap();
}

#[test]
fn generate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = generate(dir.path(), "a.jsonl", &["data.n_patients=10"]);
    let o = run(with_small(
        vec!["generate".into(), "--seed".into(), "7".into(), "--out".into(), p(&dir.path().join("b.jsonl"))],
        &["data.n_patients=10"],
    ));
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());
    let c = dir.path().join("c.jsonl");
    run(with_small(vec!["generate".into(), "--seed".into(), "1".into(), "--out".into(), p(&c)], &["data.n_patients=10"]));
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn invalid_censor_rate_creates_nothing() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c.jsonl");
    let o = run(vec!["generate".into(), "--out".into(), p(&out), "--set".into(), "data.censor_rate=1.5".into()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("censor_rate"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_key_and_bad_flag_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir.path().join("c.jsonl"));
    assert_eq!(code(&hetsurv(&["generate", "--out", &out, "--set", "data.nope=1"])), 1);
    assert_eq!(code(&hetsurv(&["generate", "--out", &out, "--set", "no-equals"])), 1);
    assert_eq!(code(&hetsurv(&["generate", "--bogus"])), 1);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochs = \"many\"\n").unwrap();
    assert_eq!(code(&hetsurv(&["generate", "--out", &out, "--config", &p(&cfg)])), 1);
}

#[test]
fn event_rate_matches_censoring() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c.jsonl");
    let o = run(with_small(vec!["generate".into(), "--out".into(), p(&out)], &["data.n_patients=1000"]));
    assert_eq!(code(&o), 0);
    let printed: f64 = stdout(&o).split("event rate ").nth(1).unwrap()[..5].parse().unwrap();
    let text = fs::read_to_string(&out).unwrap();
    let events = text.matches("\"event\":1").count();
    assert_eq!(text.lines().count(), 1001);
    assert!((printed - events as f64 / 1000.0).abs() < 1e-3);
    // Binomial sd at p = 0.7, n = 1000 is 0.0145; 0.03 is about two sd.
    assert!((printed - 0.7).abs() <= 0.03, "event rate {printed}");
}

#[test]
fn zero_epochs_writes_init_checkpoint_and_header_only_trace() {
    let dir = TempDir::new().unwrap();
    let cohort = generate(dir.path(), "c.jsonl", &[]);
    let run_dir = train(dir.path(), &cohort, &["train.epochs=0"]);
    let (header, rows) = csv_rows(&run_dir.join("loss_trace.csv"));
    assert_eq!(header, ["epoch", "I_MER", "I_CMAE", "I_Cox_P", "I_Cox_G", "I_Cox_C", "I_total"]);
    assert!(rows.is_empty());

    let ck: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("checkpoint.json")).unwrap()).unwrap();
    let again = dir.path().join("again");
    let o = run(with_small(
        vec!["train".into(), "--cohort".into(), p(&cohort), "--out".into(), p(&again)],
        &["train.epochs=0"],
    ));
    assert_eq!(code(&o), 0);
    let ck2: serde_json::Value = serde_json::from_str(&fs::read_to_string(again.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck, ck2);
    assert!(run_dir.join("manifest.json").exists());
}

#[test]
fn trace_columns_sum_to_total() {
    let dir = TempDir::new().unwrap();
    let cohort = generate(dir.path(), "c.jsonl", &[]);
    let run_dir = train(dir.path(), &cohort, &["train.epochs=3", "survival.alpha=2.5", "survival.beta=0.5"]);
    let (_, rows) = csv_rows(&run_dir.join("loss_trace.csv"));
    assert_eq!(rows.len(), 3);
    for (i, r) in rows.iter().enumerate() {
        let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(v[0], (i + 1) as f64);
        let total = v[1] + 2.5 * v[2] + 0.5 * (v[3] + v[4] + v[5]);
        assert!((total - v[6]).abs() <= 1e-9 * v[6].abs().max(1.0), "row {i}: {total} vs {}", v[6]);
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_event_cohort_fails_before_training() {
    let dir = TempDir::new().unwrap();
    let cohort = generate(dir.path(), "c.jsonl", &[]);
    let censored = dir.path().join("censored.jsonl");
    edit_cohort(&cohort, &censored, usize::MAX, |v| v["event"] = 0.into());
    let out = dir.path().join("run");
    let o = run(with_small(vec!["train".into(), "--cohort".into(), p(&censored), "--out".into(), p(&out)], &[]));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("no events"));
    assert!(!out.join("checkpoint.json").exists());
}

#[test]
fn cross_validation_emits_seven_blocks_reproducibly() {
    let dir = TempDir::new().unwrap();
    let cohort = generate(dir.path(), "c.jsonl", &[]);
    let metrics = |name: &str| {
        let out = dir.path().join(name);
        let o = run(with_small(vec!["evaluate".into(), "--cohort".into(), p(&cohort), "--out".into(), p(&out)], &[]));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (out.clone(), fs::read_to_string(out.join("metrics.json")).unwrap())
    };
    let (out, a) = metrics("ev1");
    let (_, b) = metrics("ev2");
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    let schemes: Vec<&str> = v["schemes"].as_array().unwrap().iter().map(|s| s["scheme"].as_str().unwrap()).collect();
    assert_eq!(schemes, ["P", "G", "C", "P&G", "P&C", "G&C", "P&G&C"]);
    for code in ["P", "G", "C", "PG", "PC", "GC", "PGC"] {
        let (header, rows) = csv_rows(&out.join(format!("km_{code}.csv")));
        assert_eq!(header, ["time", "survival", "group"]);
        assert!(!rows.is_empty());
    }
}

#[test]
fn checkpoint_evaluation_counts_excluded_patients() {
    let dir = TempDir::new().unwrap();
    let cohort = generate(dir.path(), "c.jsonl", &[]);
    let run_dir = train(dir.path(), &cohort, &[]);
    let partial = dir.path().join("partial.jsonl");
    edit_cohort(&cohort, &partial, usize::MAX, |v| {
        let idx: usize = v["id"].as_str().unwrap()[8..].parse().unwrap();
        if idx.is_multiple_of(4) {
            v.as_object_mut().unwrap().remove("clinical");
        }
    });
    let out = dir.path().join("ev");
    let o = hetsurv(&[
        "evaluate",
        "--cohort",
        &p(&partial),
        "--checkpoint",
        &p(&run_dir.join("checkpoint.json")),
        "--out",
        &p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for s in v["schemes"].as_array().unwrap() {
        let needs_c = s["scheme"].as_str().unwrap().contains('C');
        assert_eq!(s["n_excluded"], if needs_c { 6 } else { 0 }, "{s}");
        assert_eq!(s["n"], if needs_c { 18 } else { 24 });
    }
}

#[test]
fn mismatched_checkpoint_names_both_shapes() {
    let dir = TempDir::new().unwrap();
    let cohort = generate(dir.path(), "c.jsonl", &[]);
    let run_dir = train(dir.path(), &cohort, &["train.epochs=0"]);
    let o = run(with_small(
        vec![
            "evaluate".into(),
            "--cohort".into(),
            p(&cohort),
            "--checkpoint".into(),
            p(&run_dir.join("checkpoint.json")),
            "--out".into(),
            p(&dir.path().join("ev")),
        ],
        &["cmae.width=7"],
    ));
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("[3, 3, 8, 6]") && err.contains("[3, 3, 8, 7]"), "{err}");
    assert!(!dir.path().join("ev").join("metrics.json").exists());
}

#[test]
fn predict_rows_follow_sign_convention() {
    let dir = TempDir::new().unwrap();
    let cohort = generate(dir.path(), "c.jsonl", &[]);
    let run_dir = train(dir.path(), &cohort, &[]);
    let ckpt = p(&run_dir.join("checkpoint.json"));
    let out = dir.path().join("pred.csv");
    let o = hetsurv(&["predict", "--cohort", &p(&cohort), "--checkpoint", &ckpt, "--out", &p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, ["patient_id", "scheme", "s_final", "risk"]);
    assert_eq!(rows.len(), 24);
    for r in &rows {
        assert_eq!(r[1], "P&G&C");
        let s: f64 = r[2].parse().unwrap();
        let risk: f64 = r[3].parse().unwrap();
        assert_eq!(risk, -s);
    }

    let one = dir.path().join("one.jsonl");
    edit_cohort(&cohort, &one, 1, |_| {});
    let out1 = dir.path().join("one.csv");
    let o = hetsurv(&["predict", "--cohort", &p(&one), "--checkpoint", &ckpt, "--out", &p(&out1), "--scheme", "G"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&out1).1.len(), 1);
}

#[test]
fn predict_skips_patients_missing_a_modality() {
    let dir = TempDir::new().unwrap();
    let cohort = generate(dir.path(), "c.jsonl", &[]);
    let run_dir = train(dir.path(), &cohort, &["train.epochs=0"]);
    let ckpt = p(&run_dir.join("checkpoint.json"));
    let partial = dir.path().join("partial.jsonl");
    edit_cohort(&cohort, &partial, 3, |v| {
        if v["id"] == "patient-0001" {
            v.as_object_mut().unwrap().remove("clinical");
        }
    });
    let out = dir.path().join("pred.csv");
    let o = hetsurv(&["predict", "--cohort", &p(&partial), "--checkpoint", &ckpt, "--out", &p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ids: Vec<String> = csv_rows(&out).1.into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(ids, ["patient-0000", "patient-0002"]);
    assert!(stderr(&o).contains("patient-0001"));
    assert!(stdout(&o).contains("1 skipped"));

    // Only the C-less patient and a scheme needing C: nothing to score.
    let lonely = dir.path().join("lonely.jsonl");
    edit_cohort(&partial, &lonely, 3, |v| {
        v.as_object_mut().unwrap().remove("clinical");
    });
    let o = hetsurv(&["predict", "--cohort", &p(&lonely), "--checkpoint", &ckpt, "--out", &p(&out), "--scheme", "C"]);
    assert_eq!(code(&o), 2);
}
