use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hica_core::config::RunConfig;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn hica(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hica"))
        .args(args)
        .env("HICA_LOG_LEVEL", "error")
        .output()
        .expect("launch")
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut RunConfig)) -> PathBuf {
    let mut c = RunConfig::default();
    c.charlm.corpus = root().join(&c.charlm.corpus);
    c.skinner.seeds = 2;
    c.skinner.phase1.episodes = 40;
    edit(&mut c);
    let path = dir.join("run.toml");
    std::fs::write(&path, c.to_toml_string().unwrap()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_ticks_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| c.charlm.ticks = 0);
    let out = dir.path().join("out");
    let o = hica(&["charlm", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv, "tick,L1_ar_acc,L1_ae_acc,L2_ar_acc,L2_ae_acc,L3_ar_acc,L3_ae_acc\n");
    assert!(out.join("charlm.ckpt").exists());
}

#[test]
fn short_charlm_run_has_six_accuracy_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.charlm.ticks = 3000;
        c.charlm.log_interval = 1000;
    });
    let out = dir.path().join("out");
    let o = hica(&["charlm", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 7));
    assert!(lines[3].starts_with("3000,"));
}

#[test]
fn bad_dim_names_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| c.graph.nodes[1].d_in = 7);
    let o = hica(&["charlm", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("L2"), "{}", stderr(&o));
}

#[test]
fn missing_corpus_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| c.charlm.corpus = "/no/such/corpus.txt".into());
    let o = hica(&["charlm", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("corpus"), "{}", stderr(&o));
}

#[test]
fn skinner_writes_one_summary_row_per_seed_and_records_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |_| {});
    let full = dir.path().join("full");
    let o = hica(&["skinner", "--config", cfg.to_str().unwrap(), "--out", full.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(full.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("1")));

    let ablated = dir.path().join("ablated");
    let ckpt = full.join("instincts.ckpt");
    let o = hica(&[
        "skinner",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        ablated.to_str().unwrap(),
        "--no-preplay",
        "--phase2-only",
        ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trials = std::fs::read_to_string(ablated.join("trials.csv")).unwrap();
    let header = trials.lines().next().unwrap();
    let full_header = std::fs::read_to_string(full.join("trials.csv")).unwrap();
    assert_eq!(header, full_header.lines().next().unwrap());
    assert!(trials.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")));
    assert!(!ablated.join("instincts.ckpt").exists());
}

#[test]
fn phase2_only_resume_matches_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |_| {});
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(hica(&["skinner", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    let ckpt = a.join("instincts.ckpt");
    let o = hica(&[
        "skinner",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--phase2-only",
        ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |p: &Path| std::fs::read_to_string(p.join("trials.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn phase2_only_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let o = hica(&["skinner", "--phase2-only", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"), "{}", stderr(&o));
}

#[test]
fn gradcheck_exit_codes() {
    let ok = hica(&["gradcheck"]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("worst relative error"));
    assert_eq!(hica(&["gradcheck", "--corrupt-gradient"]).status.code(), Some(1));
}

#[test]
fn replay_demo_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = hica(&["replay-demo", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("replay.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |_| {});
    let out = dir.path().join("s");
    let o = hica(&["skinner", "--config", cfg.to_str().unwrap(), "--seed", "40", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let seeds: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["40", "41"]);
}
