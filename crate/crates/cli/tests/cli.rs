use std::path::Path;
use std::process::{Command, Output};

fn rllc(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rllc"))
        .args(args)
        .env("RLLC_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
name = "smoke"

[[experiment]]
name = "nag-pair"
steps = 60
seeds = [0, 1]
log_every = 20
optimizer = { kind = "rllc", propagator = "M(0.9)+M(0)", c1 = 0.05, c2 = 0.01 }
task = { kind = "logistic", batch = 16, data = { kind = "synthetic", samples = 200, features = 5, classes = 3, separation = 3.0 } }

[[experiment]]
name = "plain"
steps = 60
log_every = 20
optimizer = { kind = "sgd", lr = 0.001 }
task = { kind = "rosenbrock", n = 2 }
"#;

#[test]
fn unknown_suite_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = rllc(&["verify", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown suite 'bogus'"));
}

#[test]
fn verify_abstract_rules_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = rllc(&["verify", "abstract-rules"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("abstract-rules:"));
    assert!(stdout(&o).contains(" 0 failed"));
}

#[test]
fn abstract_rule_prints_the_jordan_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let o = rllc(&["abstract-rule", "Mk(2,0.3)", "--unit", "1", "--len", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i,coefficient"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let a: f64 = 0.3;
    let expected = [0.0, 1.0, 2.0 * a, 3.0 * a * a, 4.0 * a * a * a];
    assert_eq!(values.len(), 5);
    for (v, e) in values.iter().zip(expected) {
        assert!((v - e).abs() < 1e-15);
    }
}

#[test]
fn bad_expression_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = rllc(&["abstract-rule", "M(0.9)+X(1)"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = rllc(&["abstract-rule", "M(0.9)", "--unit", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_then_dump_the_law() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let o = rllc(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let run = dir.path().join("smoke").join("nag-pair").join("seed-1.csv");
    let log = std::fs::read_to_string(&run).unwrap();
    assert!(log.starts_with("step,train_loss,val_loss,metric,wall_ms,L1,L2,mnorm1,mnorm2\n"));
    assert_eq!(log.lines().count(), 4);

    let o = rllc(&["law-dump", run.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let dump = std::fs::read_to_string(run.with_extension("law.csv")).unwrap();
    assert!(dump.starts_with("step,L1,L2,ratio,nag_phase\n"));
    assert_eq!(dump.lines().count(), 4);

    let plain = dir.path().join("smoke").join("plain").join("seed-0.csv");
    let log = std::fs::read_to_string(&plain).unwrap();
    assert!(log.starts_with("step,train_loss,val_loss,metric,wall_ms\n"));
    let o = rllc(&["law-dump", plain.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn suite_writes_summaries_and_handles_empty_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("s");
    let o = rllc(
        &["suite", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out.join("runs").join("plain").join("seed-0.csv").exists());

    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("e");
    let o = rllc(
        &["suite", empty.to_str().unwrap(), "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(out.join("summary.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );
}

#[test]
fn missing_or_malformed_configs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = rllc(&["run", "/nonexistent/config.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[[experiment]]\nname = 'x'\nsteps = 'many'\n").unwrap();
    let o = rllc(&["suite", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
