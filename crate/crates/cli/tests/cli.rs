use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scoredlm"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SIM: &[&str] = &[
    "simulate",
    "--seed",
    "5",
    "--athletes",
    "24",
    "--periods",
    "6",
    "--games-per-period",
    "6",
    "--players-per-game",
    "5",
    "--out",
    "sim.csv",
    "--truth",
    "truth.json",
];

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), SIM);
    fs::write(dir.path().join("cfg.json"), r#"{"centering": "none"}"#).unwrap();
    dir
}

/// Splits `sim.csv` into files holding the years before and from `year`.
fn split(dir: &Path, year: i32, early: &str, late: &str) {
    let text = fs::read_to_string(dir.join("sim.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let (mut a, mut b) = (vec![header], vec![header]);
    for line in lines {
        let y: i32 = line[..4].parse().unwrap();
        if y < year { a.push(line) } else { b.push(line) }
    }
    fs::write(dir.join(early), a.join("\n") + "\n").unwrap();
    fs::write(dir.join(late), b.join("\n") + "\n").unwrap();
}

fn pipeline(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    ok(dir, &["fit", "--data", "sim.csv", "--config", "cfg.json", "--out", "model.json", "--report", "report.json", "--trace", "trace.csv"]);
    ok(dir, &["evaluate", "--model", "model.json", "--data", "sim.csv", "--out", "metrics.json", "--qq", "qq.csv"]);
    ok(dir, &["predict", "--model", "model.json", "--data", "sim.csv", "--out", "pred.csv"]);
    ok(dir, &["rate", "--model", "model.json", "--smoothed", "--out", "ratings.csv"]);
    ok(dir, &["transform-inspect", "--model", "model.json", "--out", "curve.csv"]);
    let names = ["sim.csv", "truth.json", "model.json", "report.json", "trace.csv", "metrics.json", "qq.csv", "pred.csv", "ratings.csv", "curve.csv"];
    names.iter().map(|n| (PathBuf::from(n), fs::read(dir.join(n)).unwrap())).collect()
}

#[test]
fn seeded_pipeline_is_byte_identical() {
    let a = setup();
    let b = setup();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(!x.is_empty(), "{name:?} is empty");
        assert!(x == y, "{name:?} differs between runs");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&first[5].1).unwrap();
    assert!(metrics["residuals"].as_u64().unwrap() > 0);
    let truth: serde_json::Value = serde_json::from_slice(&first[1].1).unwrap();
    assert!(truth.to_string().contains("ChaCha8"));
}

#[test]
fn ratings_are_sorted_by_mean() {
    let dir = setup();
    ok(dir.path(), &["fit", "--data", "sim.csv", "--config", "cfg.json", "--out", "model.json"]);
    let out = ok(dir.path(), &["rate", "--model", "model.json", "--smoothed"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "rank,athlete_id,mean,sd,scale,lower,upper");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 24);
    let means: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]));
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (k + 1).to_string());
        let (lower, mean, upper): (f64, f64, f64) = (r[5].parse().unwrap(), r[2].parse().unwrap(), r[6].parse().unwrap());
        assert!(lower < mean && mean < upper);
    }

    let out = ok(dir.path(), &["rate", "--model", "model.json", "--orientation", "lower_is_better"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let means: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn updates_compose() {
    let dir = setup();
    let d = dir.path();
    split(d, 2003, "early.csv", "rest.csv");
    fs::copy(d.join("rest.csv"), d.join("sim.csv")).unwrap();
    split(d, 2005, "mid.csv", "late.csv");
    ok(d, &["fit", "--data", "early.csv", "--config", "cfg.json", "--train-fraction", "1", "--out", "m0.json"]);
    ok(d, &["update", "--model", "m0.json", "--data", "rest.csv", "--out", "once.json"]);
    ok(d, &["update", "--model", "m0.json", "--data", "mid.csv", "--out", "m1.json"]);
    ok(d, &["update", "--model", "m1.json", "--data", "late.csv", "--out", "twice.json"]);
    assert_eq!(fs::read(d.join("once.json")).unwrap(), fs::read(d.join("twice.json")).unwrap());

    // updating never touches the fitted parameters
    let m0: serde_json::Value = serde_json::from_slice(&fs::read(d.join("m0.json")).unwrap()).unwrap();
    let once: serde_json::Value = serde_json::from_slice(&fs::read(d.join("once.json")).unwrap()).unwrap();
    assert_eq!(m0["w"], once["w"]);
    assert_eq!(m0["transform"], once["transform"]);
    assert_eq!(once["smoothed"].as_array().unwrap().len(), 6);
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["fit", "--data", "sim.csv", "--config", "cfg.json", "--out", "model.json"]);

    let code = |args: &[&str]| run(d, args).status.code();
    // stale data
    assert_eq!(code(&["update", "--model", "model.json", "--data", "sim.csv", "--out", "x.json"]), Some(2));
    // mode mismatch
    let out = run(d, &["update", "--model", "model.json", "--data", "sim.csv", "--mode", "head_to_head", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mode mismatch"));
    // malformed scores
    fs::write(d.join("bad.csv"), "date,game_id,athlete_id,score\n2001-01-01,g,A,1:02:03\n2001-01-01,g,B,4\n").unwrap();
    let out = run(d, &["fit", "--data", "bad.csv", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    // wrong header
    fs::write(d.join("hdr.csv"), "when,game,who,score\n").unwrap();
    assert_eq!(code(&["fit", "--data", "hdr.csv", "--out", "x.json"]), Some(2));
    // corrupt model
    fs::write(d.join("broken.json"), "{\"format_version\": 1").unwrap();
    assert_eq!(code(&["rate", "--model", "broken.json"]), Some(2));
    // bad config value
    assert_eq!(code(&["fit", "--data", "sim.csv", "--train-fraction", "1.5", "--out", "x.json"]), Some(2));
    assert!(!d.join("x.json").exists());
}

#[test]
fn nonconvergence_is_a_warning_exit() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("tight.json"), r#"{"centering": "none", "optimizer": {"max_iter": 3}}"#).unwrap();
    let out = run(d, &["fit", "--data", "sim.csv", "--config", "tight.json", "--out", "model.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // the model is still written
    assert!(d.join("model.json").exists());
}

#[test]
fn unreadable_config_is_a_data_error() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("typo.json"), r#"{"degre": 2}"#).unwrap();
    fs::write(d.join("junk.json"), "not json").unwrap();
    let code = |args: &[&str]| run(d, args).status.code();
    assert_eq!(code(&["fit", "--data", "sim.csv", "--config", "junk.json", "--out", "x.json"]), Some(2));
    assert_eq!(code(&["fit", "--data", "sim.csv", "--config", "typo.json", "--out", "x.json"]), Some(2));
    assert!(!d.join("x.json").exists());
}
