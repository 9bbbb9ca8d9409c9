//! The `leno` binary: verbs, overrides, exit codes and hash stamping.

use std::fs;
use std::path::Path;
use std::process::Command;

fn leno() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leno"))
}

fn write_cfg(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p
}

const SMALL_RANK: &str = "rank.cells = 64\nrank.n_ref = 64\nrank.ranks = 4, 8, 16\n";

fn first_line(p: &Path) -> String {
    fs::read_to_string(p).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn verify_rank_writes_stamped_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL_RANK);
    let out = tmp.path().join("out");
    let st = leno()
        .args(["verify-rank", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let stdout = String::from_utf8_lossy(&st.stdout);
    assert!(stdout.contains("verify-rank: pass"));
    for name in ["rank_beta0.75.csv", "rank_beta0.5.csv", "rank_summary.csv"] {
        assert!(first_line(&out.join(name)).starts_with("# config_hash="), "{name}");
    }
}

#[test]
fn set_override_changes_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL_RANK);
    let run = |extra: &[&str], out: &str| {
        let st = leno()
            .arg("verify-rank")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(out))
            .args(extra)
            .output()
            .unwrap();
        assert!(st.status.success());
        first_line(&tmp.path().join(out).join("rank_summary.csv"))
    };
    let a = run(&[], "a");
    let b = run(&["--set", "rank.t0=0.25"], "b");
    let c = run(&["--seed", "9"], "c");
    assert_ne!(a, b);
    assert_ne!(a, c);
    assert_eq!(a, run(&[], "d"));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for body in ["rank.bogus = 1\n", "seed = 1\nseed = 2\n", "data.dir = /no/such/dir\n"] {
        let cfg = write_cfg(tmp.path(), body);
        let st = leno()
            .args(["verify-rank", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join("out"))
            .output()
            .unwrap();
        assert_eq!(st.status.code(), Some(2), "{body}");
        assert!(String::from_utf8_lossy(&st.stderr).contains("error"));
    }
    let st = leno().args(["verify-rank", "--set", "novalue"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn out_of_range_beta_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), &format!("{SMALL_RANK}rank.betas = 0.2\n"));
    let st = leno()
        .args(["verify-rank", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn failing_criterion_exits_with_one() {
    // A slope tolerance far below zero cannot be met.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), &format!("{SMALL_RANK}rank.slope_tol = -5\n"));
    let st = leno()
        .args(["verify-rank", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stdout).contains("[FAIL]"));
}

#[test]
fn report_with_no_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let st = leno().arg("report").arg("--out").arg(&out).output().unwrap();
    assert!(st.status.success());
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert!(text.contains("== assumption validation"));
}
