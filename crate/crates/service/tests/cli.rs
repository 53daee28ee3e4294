use std::path::Path;
use std::process::{Command, Output};

fn breachseek(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_breachseek"))
        .arg("--data-dir")
        .arg(data_dir)
        .args(args)
        .env_remove("BREACHSEEK_PROVIDER")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_id(o: &Output) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("run ").and_then(|r| r.strip_suffix(" started")))
        .unwrap()
        .to_string()
}

#[test]
fn exit_codes_follow_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let ok = breachseek(dir.path(), &["run", "--scenario", "vsftpd-backdoor"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let budget = breachseek(
        dir.path(),
        &["run", "--scenario", "vsftpd-backdoor", "--fixture", "vsftpd-budget"],
    );
    assert_eq!(budget.status.code(), Some(3));
    let iterations = breachseek(
        dir.path(),
        &[
            "run",
            "--scenario",
            "distcc-privesc",
            "--max-iterations",
            "2",
            "--keep-verbatim-tail",
            "1",
        ],
    );
    assert_eq!(iterations.status.code(), Some(4));
    let bad = breachseek(dir.path(), &["run", "--scenario", "nowhere"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn approve_continues_a_paused_run() {
    let dir = tempfile::tempdir().unwrap();
    let paused = breachseek(dir.path(), &["run", "--scenario", "samba-usermap"]);
    assert_eq!(paused.status.code(), Some(5));
    let id = run_id(&paused);
    let hint = stdout(&paused);
    let action = hint.split_whitespace().find(|w| w.starts_with("act-")).unwrap().to_string();

    let approved = breachseek(dir.path(), &["approve", &id, &action, "--actor", "alice"]);
    assert_eq!(approved.status.code(), Some(0), "{}", stdout(&approved));
    let again = breachseek(dir.path(), &["approve", &id, &action]);
    assert_eq!(again.status.code(), Some(6));

    let report = breachseek(dir.path(), &["report", &id]);
    assert_eq!(report.status.code(), Some(0));
    assert!(dir.path().join(format!("reports/{id}.md")).exists());
    assert!(stdout(&report).contains("succeeded"));
}

#[test]
fn auto_approve_runs_through_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let out = breachseek(dir.path(), &["run", "--scenario", "samba-usermap", "--auto-approve"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn lists_scenarios_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = stdout(&breachseek(dir.path(), &["scenarios"]));
    for name in ["vsftpd-backdoor", "samba-usermap", "distcc-privesc"] {
        assert!(scenarios.contains(name));
    }
    let id = run_id(&breachseek(dir.path(), &["run", "--scenario", "vsftpd-backdoor"]));
    assert!(stdout(&breachseek(dir.path(), &["runs"])).contains(&id));
}
