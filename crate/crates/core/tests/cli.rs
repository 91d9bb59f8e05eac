use std::path::Path;
use std::process::{Command, Output};

fn run(config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coded-flows"));
    cmd.env_remove("CODED_FLOWS_CONFIG");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().expect("spawn coded-flows")
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("scenario.conf");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn inter_sweep_prints_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cap=30\n");
    let out = run(Some(&cfg), &["genie-inter", "--sweep", "lambda1=0.05:0.15:0.05"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("lambda1,"));
    assert!(lines[1].starts_with("0.05,"));
    assert!(lines[3].starts_with("0.15,"));
}

#[test]
fn config_is_read_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "M1=2\nM2=1\np1=0.2\np2=0.1\n");
    let out = Command::new(env!("CARGO_BIN_EXE_coded-flows"))
        .env("CODED_FLOWS_CONFIG", &cfg)
        .args(["hd-batch", "--objective", "time"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let p1 = header.iter().position(|h| *h == "p1").unwrap();
    assert_eq!(row[p1], "0.2");
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p1=0.3\nwindow=4\n");
    let out = run(Some(&cfg), &["genie-inter"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = run(None, &["genie-inter", "--sweep", "lambda1=0.3:0.1:0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(Some(&dir.path().join("missing.conf")), &["genie-inter"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unstable_point_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lambda1=0.5\nlambda2=0.3\n");
    let out = run(Some(&cfg), &["genie-inter"]);
    assert_eq!(out.status.code(), Some(4));
    let cfg = write_config(dir.path(), "lambda1=0.5\nlambda2=0.3\nslots=20000\n");
    let out = run(Some(&cfg), &["simulate", "--model", "genie-inter"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "M1=2\nM2=2\n");
    let path = dir.path().join("t.csv");
    let a = run(Some(&cfg), &["hd-batch", "--baseline", "arq"]);
    let b = run(Some(&cfg), &["hd-batch", "--baseline", "arq", "--out", path.to_str().unwrap()]);
    assert!(a.status.success() && b.status.success());
    assert!(b.stdout.is_empty());
    assert_eq!(std::fs::read(&path).unwrap(), a.stdout);
}
