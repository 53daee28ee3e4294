use std::collections::BTreeMap;
use std::time::Instant;

use breachseek_core::tools::{ExecError, ExecutionBackend, SubprocessBackend, ToolInvocation, ToolKind, KILLED_EXIT_CODE};

fn shell(dir: &std::path::Path, cmd: &str, timeout: f64) -> ToolInvocation {
    ToolInvocation::shell(cmd, dir, timeout)
}

#[test]
fn captures_stdout_stderr_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = SubprocessBackend::new(65_536);
    let r = b.execute(&shell(dir.path(), "echo out; echo err >&2; exit 3", 10.0)).unwrap();
    assert_eq!(r.stdout, "out\n");
    assert_eq!(r.stderr, "err\n");
    assert_eq!(r.exit_code, 3);
    assert!(!r.timed_out && !r.truncated);
}

#[test]
fn runs_in_the_working_directory_with_a_clean_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = SubprocessBackend::new(65_536);
    // SAFETY: tests in this binary do not read this variable concurrently
    unsafe { std::env::set_var("BREACHSEEK_TEST_SECRET", "leak") };
    let r = b
        .execute(&shell(dir.path(), "pwd; echo \"[$BREACHSEEK_TEST_SECRET]\"", 10.0))
        .unwrap();
    let mut lines = r.stdout.lines();
    assert_eq!(
        std::fs::canonicalize(lines.next().unwrap()).unwrap(),
        std::fs::canonicalize(dir.path()).unwrap()
    );
    assert_eq!(lines.next(), Some("[]"));

    let mut inv = shell(dir.path(), "echo $EXTRA", 10.0);
    inv.env_overrides = BTreeMap::from([("EXTRA".to_string(), "given".to_string())]);
    assert_eq!(b.execute(&inv).unwrap().stdout, "given\n");
}

#[test]
fn timeout_kills_the_whole_process_group() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = SubprocessBackend::new(65_536);
    let start = Instant::now();
    // the background child keeps the pipes open unless the group is killed
    let r = b
        .execute(&shell(dir.path(), "sleep 30 & echo started; sleep 30", 0.5))
        .unwrap();
    assert!(start.elapsed().as_secs_f64() < 5.0, "took {:?}", start.elapsed());
    assert!(r.timed_out);
    assert_eq!(r.exit_code, KILLED_EXIT_CODE);
    assert_eq!(r.stdout, "started\n");
}

#[test]
fn large_output_is_truncated_keeping_head_and_tail() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = SubprocessBackend::new(1_000);
    let r = b
        .execute(&shell(dir.path(), "echo BEGIN; seq 1 100000; echo END", 20.0))
        .unwrap();
    assert!(r.truncated);
    assert!(r.stdout.len() + r.stderr.len() <= 1_000);
    assert!(r.stdout.starts_with("BEGIN\n1\n"));
    assert!(r.stdout.ends_with("100000\nEND\n"));
    assert_eq!(r.exit_code, 0);
}

#[test]
fn scripts_run_through_their_interpreter() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = SubprocessBackend::new(65_536);
    let inv = ToolInvocation {
        tool: ToolKind::Script,
        payload: "x=4\necho $((x * 2))\n".into(),
        interpreter: "sh".into(),
        timeout_seconds: 10.0,
        working_dir: dir.path().to_path_buf(),
        env_overrides: BTreeMap::new(),
    };
    let r = b.execute(&inv).unwrap();
    assert_eq!(r.stdout, "8\n");
    // the temporary script file is cleaned up
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn invalid_invocations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = SubprocessBackend::new(65_536);
    assert!(matches!(
        b.execute(&shell(dir.path(), "  ", 1.0)),
        Err(ExecError::InvalidInvocation(_))
    ));
    for timeout in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(
            b.execute(&shell(dir.path(), "true", timeout)),
            Err(ExecError::InvalidInvocation(_))
        ));
    }
    assert!(matches!(
        b.execute(&shell(&dir.path().join("missing"), "true", 1.0)),
        Err(ExecError::SandboxUnavailable(_))
    ));
    let mut inv = shell(dir.path(), "x", 1.0);
    inv.tool = ToolKind::Script;
    inv.interpreter = "/nonexistent/interpreter".into();
    assert!(matches!(b.execute(&inv), Err(ExecError::SpawnError(_))));
}
