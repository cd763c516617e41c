use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use txanom::dataio::{parse_transactions, write_transactions};
use txanom::runner::parse_reports;

fn txanom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txanom"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth_file(dir: &Path, normal: usize, anomalous: usize) -> String {
    let path = dir.join("tx.csv");
    let o = txanom(&[
        "synth",
        "--normal",
        &normal.to_string(),
        "--anomalous",
        &anomalous.to_string(),
        "--start",
        "2021-01-01T00:00:00Z",
        "--end",
        "2024-01-01T00:00:00Z",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn synth_default_preset_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.csv");
    let o = txanom(&["synth", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let records = parse_transactions(fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(records.len(), 24_400);
    assert_eq!(records.iter().filter(|r| r.label == 1).count(), 4_400);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(txanom(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(txanom(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(txanom(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let o = txanom(&["evaluate", "--checkpoint", "/nonexistent/model.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model.d_g = -3\n").unwrap();
    let o = txanom(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.d_g"));
}

#[test]
fn help_lists_config_keys_and_defaults() {
    let o = txanom(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for line in ["train.learning_rate           0.001", "model.window                  10", "forest.n_estimators           200"] {
        assert!(text.contains(line), "missing {line:?}");
    }
    assert_eq!(txanom(&["--version"]).status.code(), Some(0));
}

#[test]
fn single_class_test_split_reports_null_auc() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_file(dir.path(), 600, 130);
    let mut records = parse_transactions(fs::File::open(&data).unwrap()).unwrap();
    let boundary = txanom::dataio::default_split_boundary();
    for r in records.iter_mut().filter(|r| r.timestamp.unwrap() >= boundary) {
        r.label = 0;
    }
    write_transactions(fs::File::create(&data).unwrap(), &records).unwrap();

    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, "forest.n_estimators = 5\n").unwrap();
    let ckpt = dir.path().join("rf.ckpt");
    let report = dir.path().join("rf.json");
    let (cfg, ckpt_s, report_s) = (cfg.to_str().unwrap(), ckpt.to_str().unwrap(), report.to_str().unwrap());
    let o = txanom(&["train", "--model", "random_forest", "--config", cfg, "--data", &data, "--out", ckpt_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = txanom(&["evaluate", "--checkpoint", ckpt_s, "--config", cfg, "--data", &data, "--out", report_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("n/a"));

    let json = fs::read_to_string(&report).unwrap();
    assert!(json.contains("\"auc_roc\":null"), "{json}");
    let parsed = parse_reports(&json).unwrap();
    assert_eq!(parsed[0].metrics.auc_roc, None);
    assert_eq!(parsed[0].counts.pos, 0);

    let o = txanom(&["report", report_s, "--averaging", "binary"]);
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    assert!(table.starts_with("Model"));
    assert!(table.lines().nth(2).unwrap().starts_with("RandomForest"));
    assert!(table.trim_end().ends_with("n/a"));
}

#[test]
fn report_rejects_unknown_averaging() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    fs::write(&path, "{}").unwrap();
    assert_eq!(txanom(&["report", path.to_str().unwrap(), "--averaging", "macro"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let o = txanom(&["gradcheck", "--arch", "gcn_gru", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("gcn_gru seed 0: PASS"), "{text}");
    assert!(!text.contains("FAIL"));

    let o = txanom(&["gradcheck", "--arch", "gru_only", "--seeds", "1", "--corrupt"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("gru_only seed 0: FAIL"), "{text}");
}
