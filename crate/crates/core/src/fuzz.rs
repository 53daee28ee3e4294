//! Randomized providers, policies and episodes for property testing the engine.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::{map_indices, Strategy};
use crate::graph::{EngineConfig, EventBody, Limits, RunId, RunState, RunStatus, StepError};
use crate::provider::{CompletionRequest, CompletionResponse, Provider, ProviderError};
use crate::roles::{prompts, MAX_SUMMARY_TOKENS};
use crate::session::{sim_engine, sim_state};
use crate::sim::Scenario;
use crate::tokens::count_tokens;
use crate::tools::{resolve_approval, ApprovalVerdict, Decision, PolicyFile, SafetyPolicy};

const EXTRA_COMMANDS: &[&str] = &[
    "whoami",
    "ls -la /tmp",
    "rm -rf /",
    "msfconsole -q",
    "cat /root/flag.txt",
    "id && uname -a",
    "nc -zv 10.0.2.7 1-1024",
];

const POLICY_WORDS: &[&str] = &["rm", "nc", "nmap", "msfconsole", "find", "cat", "echo"];

/// Provider that answers each role with random, sometimes malformed, output.
///
/// Reported usage never exceeds the prompt estimate plus the completion reserve,
/// the same contract real backends are metered against.
#[derive(Debug)]
pub struct RandomizedProvider {
    rng: Mutex<ChaCha8Rng>,
    commands: Vec<String>,
}

impl RandomizedProvider {
    pub fn new(seed: u64, scenario: &Scenario) -> Self {
        let mut commands = scenario.example_commands();
        commands.extend(EXTRA_COMMANDS.iter().map(|s| s.to_string()));
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            commands,
        }
    }

    fn garbage(rng: &mut ChaCha8Rng) -> String {
        let len = rng.random_range(0..80);
        (0..len).map(|_| rng.random_range(' '..='~')).collect()
    }

    fn supervisor(&self, rng: &mut ChaCha8Rng) -> String {
        let roll = rng.random_range(0..100);
        if roll < 8 {
            return Self::garbage(rng);
        }
        if roll < 15 {
            return "```action\nkind: conclude\nrationale: done\n```".into();
        }
        let command = &self.commands[rng.random_range(0..self.commands.len())];
        let kind = if roll < 25 { "script" } else { "shell" };
        format!("```action\nkind: {kind}\ncommand: {command}\nrationale: fuzz step {roll}\n```")
    }

    fn evaluator(rng: &mut ChaCha8Rng) -> String {
        let status = match rng.random_range(0..100) {
            0..10 => return Self::garbage(rng),
            10..20 => "goal_achieved",
            20..60 => "progress",
            _ => "failure",
        };
        format!("```verdict\nstatus: {status}\ncritique: random verdict\nsuggestion: keep going\n```")
    }

    fn recorder(rng: &mut ChaCha8Rng) -> String {
        let words = rng.random_range(0..2500);
        let mut text: String = (0..words).map(|i| format!("w{i} ")).collect();
        if rng.random_bool(0.3) {
            text.push_str("\nfinding: something notable");
        }
        text
    }

    fn reporter(rng: &mut ChaCha8Rng) -> String {
        if rng.random_bool(0.2) {
            return Self::garbage(rng);
        }
        "```report\noutcome: fuzzed outcome\nfinding: medium | Random finding | evidence\n```".into()
    }
}

impl Provider for RandomizedProvider {
    fn name(&self) -> &str {
        "randomized"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        req.validate()?;
        let mut rng = self.rng.lock().expect("rng lock");
        if rng.random_bool(0.02) {
            return Err(ProviderError::Timeout);
        }
        let persona = req.messages[0].content.as_str();
        let content = if persona == prompts::SUPERVISOR_PERSONA {
            self.supervisor(&mut rng)
        } else if persona == prompts::EVALUATOR_PERSONA {
            Self::evaluator(&mut rng)
        } else if persona == prompts::RECORDER_PERSONA {
            Self::recorder(&mut rng)
        } else {
            Self::reporter(&mut rng)
        };
        Ok(CompletionResponse {
            content,
            prompt_tokens: req.prompt_estimate() + rng.random_range(0..=100),
            completion_tokens: rng.random_range(1..=900),
            provider_name: self.name().to_string(),
            estimated: false,
        })
    }
}

pub fn random_policy(rng: &mut ChaCha8Rng) -> SafetyPolicy {
    let mut pick = |p: f64| -> Vec<String> {
        POLICY_WORDS
            .iter()
            .filter(|_| rng.random_bool(p))
            .map(|w| format!(r"\b{w}\b"))
            .collect()
    };
    let deny_patterns = pick(0.15);
    let approval_patterns = pick(0.25);
    let file = PolicyFile {
        deny_patterns,
        approval_patterns,
        allow_by_default: rng.random_bool(0.8),
        ..PolicyFile::default()
    };
    SafetyPolicy::compile("fuzz", file).expect("generated patterns compile")
}

pub fn random_limits(rng: &mut ChaCha8Rng) -> Limits {
    let max_iterations = rng.random_range(2..12);
    Limits {
        token_budget: rng.random_range(2_000..60_000),
        max_iterations,
        context_window_limit: rng.random_range(300..4_000),
        keep_verbatim_tail: rng.random_range(1..max_iterations as usize),
    }
}

#[derive(Debug, Clone)]
pub struct FuzzOutcome {
    pub seed: u64,
    pub state: RunState,
    pub steps: usize,
    pub approvals: usize,
    pub terminated: bool,
}

/// Runs one randomized episode, resolving approvals at random.
pub fn fuzz_episode(seed: u64, scenario: &Arc<Scenario>) -> FuzzOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limits = random_limits(&mut rng);
    let policy = random_policy(&mut rng);
    let provider = Arc::new(RandomizedProvider::new(rng.random(), scenario));
    let mut engine = sim_engine(scenario, provider, policy, EngineConfig::default(), &[]);
    let mut state = sim_state(RunId(format!("fuzz-{seed}")), scenario, None, limits);
    // each iteration costs at most seven steps plus approvals
    let step_cap = 16 * limits.max_iterations as usize + 16;
    let mut steps = 0;
    let mut approvals = 0;
    while steps < step_cap && !state.status.is_terminal() {
        steps += 1;
        match engine.step(&mut state) {
            Ok(_) | Err(StepError::NodeFailure { .. }) => {}
            Err(StepError::ApprovalPending { action_id }) => {
                approvals += 1;
                let verdict = if rng.random_bool(0.5) {
                    ApprovalVerdict::Approve
                } else {
                    ApprovalVerdict::Reject
                };
                resolve_approval(&mut state, &action_id, verdict, "fuzzer").expect("pending approval resolves");
            }
            Err(e) => panic!("seed {seed}: unexpected step error {e}"),
        }
    }
    FuzzOutcome {
        seed,
        terminated: state.status.is_terminal(),
        state,
        steps,
        approvals,
    }
}

pub fn fuzz_sweep(seeds: std::ops::Range<u64>, scenario: &Arc<Scenario>, strategy: Strategy) -> Vec<FuzzOutcome> {
    let start = seeds.start;
    map_indices(strategy, (seeds.end - seeds.start) as usize, |i| {
        fuzz_episode(start + i as u64, scenario)
    })
}

/// Checks the structural invariants every finished run must satisfy.
pub fn invariant_violations(state: &RunState) -> Vec<String> {
    let mut v = Vec::new();
    let t = &state.transcript;
    if !state.status.is_terminal() {
        v.push(format!("status {} is not terminal", state.status));
    }
    if state.token_usage > state.limits.token_budget {
        v.push(format!(
            "usage {} exceeds budget {}",
            state.token_usage, state.limits.token_budget
        ));
    }
    if state.iteration > state.limits.max_iterations {
        v.push(format!("iteration {} exceeds limit", state.iteration));
    }
    if count_tokens(&state.summary) > MAX_SUMMARY_TOKENS {
        v.push("summary exceeds its bound".into());
    }
    for (i, e) in t.iter().enumerate() {
        if e.seq != i as u64 + 1 {
            v.push(format!("seq gap at index {i}"));
        }
        if let EventBody::ToolOutput { action_id, .. } = &e.body {
            let gated = i > 0
                && matches!(&t[i - 1].body, EventBody::GateDecision { action_id: a, decision, .. }
                    if a == action_id && matches!(decision.decision, Decision::Allow | Decision::Approved));
            if !gated {
                v.push(format!("tool output {} not preceded by a permitting gate decision", e.seq));
            }
            let judged = matches!(t.get(i + 1).map(|n| &n.body), Some(EventBody::Verdict { action_id: a, .. }) if a == action_id);
            if !judged {
                v.push(format!("tool output {} not followed by its verdict", e.seq));
            }
        }
    }
    let reports = t.iter().filter(|e| matches!(e.body, EventBody::Report { .. })).count();
    if reports != 1 || !matches!(t.last().map(|e| &e.body), Some(EventBody::Report { .. })) {
        v.push(format!("expected exactly one trailing report, found {reports}"));
    }
    let terminal_changes = t
        .iter()
        .filter(|e| matches!(&e.body, EventBody::StatusChange { to, .. } if to.is_terminal()))
        .count();
    if terminal_changes != 1 {
        v.push(format!("expected one terminal status change, found {terminal_changes}"));
    }
    match RunState::replay(
        state.run_id.clone(),
        state.goal.clone(),
        state.target.clone(),
        state.limits,
        t.iter().cloned(),
    ) {
        Ok(replayed) if replayed.eq_ignoring_timestamps(state) => {}
        Ok(_) => v.push("replay diverged from live state".into()),
        Err(e) => v.push(format!("replay failed: {e}")),
    }
    if state.status == RunStatus::Succeeded && !state.goal_achieved() {
        v.push("succeeded without a goal_achieved verdict".into());
    }
    v
}
