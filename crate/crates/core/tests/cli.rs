use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pyramid-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SINGLE: &str = "[population]\nratios = [0.2, 0.8]\n\n[plan]\nkind = \"single\"\norder_sizes = [5, 400]\n\n[run]\nrepetitions = 3\nmaster_seed = 11\n";

#[test]
fn missing_config_names_the_path() {
    let out = sim(&["sweep-order-size", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SINGLE}bogus = 1\n"));
    let out = sim(&["sweep-order-size", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("bogus"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(sim(&["no-such-command"]).status.code(), Some(1));
    let help = sim(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(text(&help.stdout).contains("theory-check"));
}

#[test]
fn plan_kind_must_match_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINGLE);
    let out = sim(&["sweep-periods", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("batch"));
}

#[test]
fn sweep_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINGLE);
    let csv = dir.path().join("out.csv");
    let out = sim(&["sweep-order-size", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "status");
    assert_eq!(header.len(), 17);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 2 * 3);
    for row in &rows {
        match &row[0] {
            "ok" => {
                let r: f64 = row[11].parse().unwrap();
                assert!(r.is_finite());
            }
            "book_exhausted" => assert!(row[11].is_empty()),
            other => panic!("unexpected status {other}"),
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINGLE);
    let a = sim(&["sweep-order-size", "--config", &cfg, "--seed", "3"]);
    let b = sim(&["sweep-order-size", "--config", &cfg, "--seed", "3"]);
    let c = sim(&["sweep-order-size", "--config", &cfg, "--seed", "4"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn single_run_prints_fills_periods_and_a_row() {
    let out = sim(&["single-run", "--seed", "1"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("period 1 anchor=")));
    assert!(stdout.lines().any(|l| l.starts_with("status,ratio,")));
    assert!(stdout.lines().any(|l| l.starts_with("fill period=1 ")));
}

#[test]
fn theory_check_agrees_on_single_and_batch_plans() {
    let dir = tempfile::tempdir().unwrap();
    for plan in [
        "kind = \"single\"\norder_sizes = [3, 300]",
        "kind = \"batch\"\ntotal_shares = 500\nd_buy = [1, 3]\nd_sell = [2]",
    ] {
        let cfg = write_config(
            dir.path(),
            &format!("[population]\nratios = [0.4]\ntp_sl = {{ kind = \"equal\", lo = 0.02, hi = 0.04 }}\n\n[plan]\n{plan}\n\n[run]\nrepetitions = 2\n"),
        );
        let out = sim(&["theory-check", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        assert!(text(&out.stdout).contains("worst relative error"));
    }
}
