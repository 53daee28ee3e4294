use std::sync::Arc;

use breachseek_core::bundled::{default_policy, load_fixture, load_scenario};
use breachseek_core::graph::{canonical_hash, EngineConfig, EventBody, Limits, NodeId, RunId, RunState, RunStatus, StepError};
use breachseek_core::provider::{ScriptRecord, ScriptedProvider};
use breachseek_core::roles::{ActionId, ActionKind, VerdictStatus};
use breachseek_core::session::{run_scripted, sim_backend, sim_engine, sim_state};
use breachseek_core::tools::{resolve_approval, ApprovalError, ApprovalVerdict, Decision, SafetyPolicy};

fn steps_to_terminal(scenario: &str, fixture: &str) -> (RunState, usize) {
    let scenario = load_scenario(scenario).unwrap();
    let provider = Arc::new(ScriptedProvider::new(load_fixture(fixture).unwrap()));
    let mut engine = sim_engine(&scenario, provider, default_policy(), EngineConfig::default(), &[]);
    let mut state = sim_state(RunId::from("e2e"), &scenario, None, Limits::default());
    let mut steps = 0;
    while !state.status.is_terminal() {
        engine.step(&mut state).unwrap();
        steps += 1;
        assert!(steps < 100, "runaway run");
    }
    (state, steps)
}

#[test]
fn vsftpd_run_reaches_root_within_twelve_steps() {
    let (state, steps) = steps_to_terminal("vsftpd-backdoor", "vsftpd-backdoor");
    assert_eq!(state.status, RunStatus::Succeeded);
    assert!(steps <= 12, "took {steps} steps");
    assert_eq!(state.current_node, NodeId::Terminal);
    // an independent replay of the executed commands compromises a fresh target
    let scenario = load_scenario("vsftpd-backdoor").unwrap();
    assert!(sim_backend(&scenario, 65_536, &state.transcript).target.is_compromised());
    let Some(EventBody::Report { report }) = state.transcript.last().map(|e| &e.body) else {
        panic!("run must end with a report");
    };
    assert!(report.narrative_available);
    assert!(report.outcome.contains("Root access"));
    assert_eq!(report.final_status, RunStatus::Succeeded);
    assert_eq!(report.token_usage_total, state.token_usage);
    let fixture_total: u64 = load_fixture("vsftpd-backdoor")
        .unwrap()
        .iter()
        .map(|r| r.prompt_tokens + r.completion_tokens)
        .sum();
    assert_eq!(state.token_usage, fixture_total);
}

#[test]
fn compound_command_output_carries_root_uid() {
    let (state, _) = steps_to_terminal("vsftpd-backdoor", "vsftpd-backdoor");
    let outputs: Vec<_> = state
        .transcript
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ToolOutput { result, .. } => Some(result),
            _ => None,
        })
        .collect();
    assert_eq!(outputs.len(), 2);
    assert!(outputs[0].stdout.contains("vsftpd 2.3.4"));
    assert!(outputs[1].stdout.contains("uid=0(root)"));
    assert_eq!(outputs[1].exit_code, 0);
}

#[test]
fn distcc_chain_escalates_from_user_to_root() {
    let (state, _) = steps_to_terminal("distcc-privesc", "distcc-privesc");
    assert_eq!(state.status, RunStatus::Succeeded);
    assert_eq!(state.iteration, 4);
}

#[test]
fn budget_projection_aborts_before_overspending() {
    let (state, status) = run_scripted(
        "vsftpd-backdoor",
        "vsftpd-budget",
        Limits::default(),
        default_policy(),
        None,
    )
    .unwrap();
    assert_eq!(status, RunStatus::AbortedBudget);
    assert_eq!(state.token_usage, 120_000);
    assert!(state.token_usage <= state.limits.token_budget);
    let calls = state
        .transcript
        .iter()
        .filter(|e| matches!(e.body, EventBody::ProviderCall(_)))
        .count();
    assert_eq!(calls, 3);
    let Some(EventBody::Report { report }) = state.transcript.last().map(|e| &e.body) else {
        panic!("aborted run still ends with a report");
    };
    assert!(!report.narrative_available);
    assert!(report.outcome.contains("aborted_budget"));
}

#[test]
fn identical_runs_hash_identically() {
    let run = || {
        run_scripted("vsftpd-backdoor", "vsftpd-backdoor", Limits::default(), default_policy(), None)
            .unwrap()
            .0
    };
    let (a, b) = (run(), run());
    assert_eq!(canonical_hash(&a.transcript), canonical_hash(&b.transcript));
    assert!(a.eq_ignoring_timestamps(&b));
}

#[test]
fn replaying_the_log_reproduces_state() {
    for (scenario, fixture) in [
        ("vsftpd-backdoor", "vsftpd-backdoor"),
        ("vsftpd-backdoor", "vsftpd-budget"),
        ("distcc-privesc", "distcc-privesc"),
    ] {
        let (live, _) = run_scripted(scenario, fixture, Limits::default(), default_policy(), None).unwrap();
        let replayed = RunState::replay(
            live.run_id.clone(),
            live.goal.clone(),
            live.target.clone(),
            live.limits,
            live.transcript.clone(),
        )
        .unwrap();
        assert!(replayed.eq_ignoring_timestamps(&live), "{fixture}");
    }
}

fn samba(fixture: &str) -> (breachseek_core::graph::Engine, RunState) {
    let scenario = load_scenario("samba-usermap").unwrap();
    let provider = Arc::new(ScriptedProvider::new(load_fixture(fixture).unwrap()));
    let engine = sim_engine(&scenario, provider, default_policy(), EngineConfig::default(), &[]);
    let state = sim_state(RunId::from("samba"), &scenario, None, Limits::default());
    (engine, state)
}

#[test]
fn gated_action_waits_for_approval_then_executes() {
    let (mut engine, mut state) = samba("samba-usermap");
    let status = engine.run_until_terminal(&mut state).unwrap();
    assert_eq!(status, RunStatus::AwaitingApproval);
    let pending = state.pending_action.clone().expect("pending action");
    assert!(pending.command.as_deref().unwrap().starts_with("msfconsole"));
    // nothing ran yet
    let executed = |s: &RunState| {
        s.transcript
            .iter()
            .filter(|e| matches!(&e.body, EventBody::ToolOutput { command, .. } if command.starts_with("msfconsole")))
            .count()
    };
    assert_eq!(executed(&state), 0);
    assert_eq!(
        engine.step(&mut state).unwrap_err(),
        StepError::NotRunning(RunStatus::AwaitingApproval)
    );
    let wrong = resolve_approval(&mut state, &ActionId::new("act-999"), ApprovalVerdict::Approve, "alice").unwrap_err();
    assert!(matches!(wrong, ApprovalError::ActionIdMismatch { .. }));
    resolve_approval(&mut state, &pending.action_id, ApprovalVerdict::Approve, "alice").unwrap();
    assert_eq!(engine.run_until_terminal(&mut state).unwrap(), RunStatus::Succeeded);
    assert_eq!(executed(&state), 1);
    let gate = state
        .transcript
        .iter()
        .find_map(|e| match &e.body {
            EventBody::GateDecision { decision, actor, .. } if decision.decision == Decision::Approved => actor.clone(),
            _ => None,
        })
        .unwrap();
    assert_eq!(gate, "alice");
}

#[test]
fn rejected_action_never_runs_and_supervisor_is_told() {
    let (mut engine, mut state) = samba("samba-usermap-reject");
    assert_eq!(engine.run_until_terminal(&mut state).unwrap(), RunStatus::AwaitingApproval);
    let id = state.pending_action.clone().unwrap().action_id;
    resolve_approval(&mut state, &id, ApprovalVerdict::Reject, "bob").unwrap();
    assert_eq!(
        resolve_approval(&mut state, &id, ApprovalVerdict::Reject, "bob").unwrap_err(),
        ApprovalError::NoPendingApproval
    );
    // the conclude fixture record expects the rejection notice in its prompt
    assert_eq!(engine.run_until_terminal(&mut state).unwrap(), RunStatus::Failed);
    assert!(!state
        .transcript
        .iter()
        .any(|e| matches!(&e.body, EventBody::ToolOutput { command, .. } if command.contains("msfconsole"))));
    assert!(state.transcript.iter().any(
        |e| matches!(&e.body, EventBody::Plan { action } if action.kind == ActionKind::Conclude)
    ));
}

#[test]
fn auto_approve_runs_gated_actions_in_one_pass() {
    let (state, status) = run_scripted(
        "samba-usermap",
        "samba-usermap",
        Limits::default(),
        default_policy(),
        Some("ci"),
    )
    .unwrap();
    assert_eq!(status, RunStatus::Succeeded);
    assert!(state.goal_achieved());
}

#[test]
fn denied_action_is_not_executed() {
    let scenario = load_scenario("vsftpd-backdoor").unwrap();
    let deny_nmap = SafetyPolicy::parse("deny-nmap", "deny_patterns = ['^nmap']").unwrap();
    let records = vec![
        ScriptRecord::new(0, "```action\nkind: shell\ncommand: nmap -sV 10.0.2.7\nrationale: scan\n```", 10, 10),
        ScriptRecord::new(1, "```action\nkind: conclude\nrationale: blocked\n```", 10, 10).expecting("Policy gate denied"),
        ScriptRecord::new(2, "```report\noutcome: nothing ran\n```", 10, 10),
    ];
    let provider = Arc::new(ScriptedProvider::new(records));
    let mut engine = sim_engine(&scenario, provider, deny_nmap, EngineConfig::default(), &[]);
    let mut state = sim_state(RunId::from("deny"), &scenario, None, Limits::default());
    assert_eq!(engine.run_until_terminal(&mut state).unwrap(), RunStatus::Failed);
    assert!(!state.transcript.iter().any(|e| matches!(e.body, EventBody::ToolOutput { .. })));
    assert_eq!(state.iteration, 1);
}

#[test]
fn unparseable_supervisor_fails_after_three_attempts() {
    let scenario = load_scenario("vsftpd-backdoor").unwrap();
    let records = (0..3).map(|i| ScriptRecord::new(i, "I refuse to use the format", 5, 5)).collect();
    let provider = Arc::new(ScriptedProvider::new(records));
    let mut engine = sim_engine(&scenario, provider, default_policy(), EngineConfig::default(), &[]);
    let mut state = sim_state(RunId::from("bad"), &scenario, None, Limits::default());
    let err = engine.step(&mut state).unwrap_err();
    assert!(matches!(err, StepError::NodeFailure { node: NodeId::Supervisor, .. }));
    assert_eq!(state.status, RunStatus::Failed);
    let calls: Vec<_> = state
        .transcript
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ProviderCall(c) => Some(c),
            _ => None,
        })
        .collect();
    // three parse attempts, then the reporter hits the exhausted script
    assert_eq!(calls.len(), 4);
    assert_eq!(calls.iter().map(|c| c.attempt).collect::<Vec<_>>(), [1, 2, 3, 1]);
    assert!(calls[3].error.is_some());
    assert_eq!(engine.step(&mut state).unwrap_err(), StepError::AtTerminal);
}

#[test]
fn iteration_limit_ends_the_run() {
    let scenario = load_scenario("vsftpd-backdoor").unwrap();
    let limits = Limits {
        max_iterations: 2,
        keep_verbatim_tail: 1,
        ..Limits::default()
    };
    let mut records = Vec::new();
    for _ in 0..2 {
        let i = records.len();
        records.push(ScriptRecord::new(i, "```action\nkind: shell\ncommand: whoami\nrationale: look around\n```", 10, 10));
        records.push(ScriptRecord::new(i + 1, "```verdict\nstatus: failure\ncritique: nothing\n```", 10, 10));
        records.push(ScriptRecord::new(i + 2, "still nothing", 10, 10));
    }
    records.push(ScriptRecord::new(6, "```report\noutcome: gave up\n```", 10, 10));
    let provider = Arc::new(ScriptedProvider::new(records));
    let mut engine = sim_engine(&scenario, provider, default_policy(), EngineConfig::default(), &[]);
    let mut state = sim_state(RunId::from("iter"), &scenario, None, limits);
    assert_eq!(engine.run_until_terminal(&mut state).unwrap(), RunStatus::AbortedIterations);
    assert_eq!(state.iteration, 2);
    let verdicts = state
        .transcript
        .iter()
        .filter(|e| matches!(&e.body, EventBody::Verdict { verdict, .. } if verdict.status == VerdictStatus::Failure))
        .count();
    assert_eq!(verdicts, 2);
}
