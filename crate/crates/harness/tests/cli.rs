use std::path::Path;
use std::process::{Command, Output};

fn htx(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htx"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn restore_writes_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = htx(
        &["restore", "--trials", "4", "--seed", "3", "--out", "runs"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("unguided"));
    let run_dir = text
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    let run_dir = dir.path().join(run_dir);
    assert!(run_dir.join("record.json").is_file());
    assert!(run_dir.join("error_curve.svg").is_file());

    // report re-emits from the persisted record
    let rerun = htx(
        &[
            "report",
            run_dir.join("record.json").to_str().unwrap(),
            "--format",
            "svg",
            "--out",
            "svg",
        ],
        dir.path(),
    );
    assert_eq!(rerun.status.code(), Some(0));
    assert!(dir.path().join("svg/error_curve.svg").is_file());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"experiment": {"trials": 0}}"#).unwrap();
    assert_eq!(
        htx(&["restore", "--config", "bad.json"], dir.path()).status.code(),
        Some(2)
    );
    std::fs::write(dir.path().join("typo.json"), r#"{"sampler": {"stepz": 10}}"#).unwrap();
    assert_eq!(
        htx(&["sample", "--config", "typo.json"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        htx(&["baseline-sdedit", "--t0", "2.0", "--trials", "2"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        htx(&["restore", "--config", "missing.json"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(htx(&["no-such-command"], dir.path()).status.code(), Some(2));
}

#[test]
fn minimal_config_names_only_the_kind() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("min.json"),
        r#"{"experiment": {"kind": "ablate_exponent", "trials": 3}, "sampler": {"steps": 100}}"#,
    )
    .unwrap();
    let out = htx(
        &["ablate-exponent", "--config", "min.json", "--exponents", "1,5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        stdout(&out).lines().filter(|l| l.starts_with("power_of_sigma")).count(),
        2
    );
}

#[test]
fn verify_exit_status_tracks_the_checks() {
    let dir = tempfile::tempdir().unwrap();
    let ok = htx(
        &["verify", "--marginal-trajectories", "200", "--out", "runs"],
        dir.path(),
    );
    let text = stdout(&ok);
    assert_eq!(ok.status.code(), Some(0), "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 8);

    let bad = htx(
        &[
            "verify",
            "--marginal-trajectories",
            "200",
            "--flip-h-sign",
            "--out",
            "runs",
        ],
        dir.path(),
    );
    let text = stdout(&bad);
    assert_eq!(bad.status.code(), Some(1), "{text}");
    assert!(text.contains("FAIL exact_h_endpoint"));
}
