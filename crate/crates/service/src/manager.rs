//! Owns live runs: creates them, drives each on its own thread, persists every
//! event and publishes progress to watchers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

use breachseek_core::bundled;
use breachseek_core::graph::{
    compress_context, Engine, EngineConfig, Event, EventBody, Limits, NodeId, RunId, RunState, RunStatus, StepError,
};
use breachseek_core::provider::{build_provider, ConfigError, ProviderKind, ProviderSelector};
use breachseek_core::roles::{ActionId, PlannedAction, Report};
use breachseek_core::session::{provider_calls_made, sim_engine, sim_state};
use breachseek_core::sim::ScenarioError;
use breachseek_core::store::{RunMode, RunRecord, RunStore, StoreError};
use breachseek_core::tools::{
    resolve_approval, ApprovalError, ApprovalVerdict, PolicyError, SafetyPolicy, SubprocessBackend,
};

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("{0}")]
    BadRequest(String),
    #[error("run {0} not found")]
    NotFound(RunId),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    UnknownAction(String),
    #[error(transparent)]
    Store(StoreError),
    #[error("{0}")]
    Internal(String),
}

impl From<StoreError> for ManagerError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => ManagerError::NotFound(id),
            other => ManagerError::Store(other),
        }
    }
}

impl From<ConfigError> for ManagerError {
    fn from(e: ConfigError) -> Self {
        ManagerError::BadRequest(e.to_string())
    }
}

impl From<ScenarioError> for ManagerError {
    fn from(e: ScenarioError) -> Self {
        ManagerError::BadRequest(e.to_string())
    }
}

impl From<PolicyError> for ManagerError {
    fn from(e: PolicyError) -> Self {
        ManagerError::BadRequest(e.to_string())
    }
}

/// Optional overrides of the default run limits.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitOverrides {
    pub token_budget: Option<u64>,
    pub max_iterations: Option<u32>,
    pub context_window_limit: Option<u64>,
    pub keep_verbatim_tail: Option<usize>,
}

impl LimitOverrides {
    pub fn apply(&self) -> Limits {
        let d = Limits::default();
        Limits {
            token_budget: self.token_budget.unwrap_or(d.token_budget),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            context_window_limit: self.context_window_limit.unwrap_or(d.context_window_limit),
            keep_verbatim_tail: self.keep_verbatim_tail.unwrap_or(d.keep_verbatim_tail),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    #[serde(default)]
    pub goal: Option<String>,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    /// Scenario name or path; required in sim mode.
    #[serde(default)]
    pub scenario: Option<String>,
    /// Target description; required in live mode.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub provider: Option<ProviderKind>,
    #[serde(default)]
    pub fixture: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(default)]
    pub limits: LimitOverrides,
    /// Approve gated actions automatically in this actor's name.
    #[serde(default)]
    pub auto_approve: Option<String>,
}

fn default_mode() -> RunMode {
    RunMode::Sim
}

impl CreateRun {
    pub fn scripted(scenario: &str, fixture: &str) -> Self {
        Self {
            goal: None,
            mode: RunMode::Sim,
            scenario: Some(scenario.into()),
            target: None,
            provider: Some(ProviderKind::Scripted),
            fixture: Some(fixture.into()),
            model: None,
            base_url: None,
            policy: None,
            limits: LimitOverrides::default(),
            auto_approve: None,
        }
    }
}

/// Live view of a run for API responses.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub record: RunRecord,
    pub current_node: NodeId,
    pub iteration: u32,
    pub token_usage: u64,
    pub last_seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pending_action: Option<PlannedAction>,
    pub finished: bool,
}

/// Shared state of one run.
pub struct RunHandle {
    record: Mutex<RunRecord>,
    state: Mutex<RunState>,
    seq_tx: watch::Sender<u64>,
    /// Held while an engine drives this run.
    drive: Mutex<()>,
    worker: Mutex<Option<JoinHandle<()>>>,
    error: Mutex<Option<String>>,
}

impl RunHandle {
    fn new(record: RunRecord, state: RunState) -> Self {
        let (seq_tx, _) = watch::channel(state.last_seq());
        Self {
            record: Mutex::new(record),
            state: Mutex::new(state),
            seq_tx,
            drive: Mutex::new(()),
            worker: Mutex::new(None),
            error: Mutex::new(None),
        }
    }

    pub fn record(&self) -> RunRecord {
        self.record.lock().expect("record lock").clone()
    }

    pub fn snapshot(&self) -> RunState {
        self.state.lock().expect("state lock").clone()
    }

    pub fn status(&self) -> RunStatus {
        self.state.lock().expect("state lock").status
    }

    /// Whether the log is complete: the run ended and its report was written.
    pub fn finished(&self) -> bool {
        self.state.lock().expect("state lock").current_node == NodeId::Terminal
    }

    pub fn events_from(&self, from_seq: u64) -> Vec<Event> {
        let state = self.state.lock().expect("state lock");
        state.transcript.iter().filter(|e| e.seq >= from_seq).cloned().collect()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.seq_tx.subscribe()
    }

    pub fn last_error(&self) -> Option<String> {
        self.error.lock().expect("error lock").clone()
    }

    pub fn summary(&self) -> RunSummary {
        let state = self.state.lock().expect("state lock");
        RunSummary {
            record: self.record(),
            current_node: state.current_node,
            iteration: state.iteration,
            token_usage: state.token_usage,
            last_seq: state.last_seq(),
            pending_action: state.pending_action.clone(),
            finished: state.current_node == NodeId::Terminal,
        }
    }

    pub fn report(&self) -> Option<Report> {
        let state = self.state.lock().expect("state lock");
        state.transcript.iter().rev().find_map(|e| match &e.body {
            EventBody::Report { report } => Some(report.clone()),
            _ => None,
        })
    }

    /// Blocks until no engine is driving the run.
    pub fn wait(&self) {
        loop {
            let worker = self.worker.lock().expect("worker lock").take();
            match worker {
                Some(w) => {
                    let _ = w.join();
                }
                None => return,
            }
        }
    }
}

/// Persists new events, folds them into the published state and wakes watchers.
fn publish(store: &RunStore, handle: &RunHandle, events: &[Event]) -> Result<(), String> {
    if events.is_empty() {
        return Ok(());
    }
    store
        .append_events(&handle.record().run_id, events)
        .map_err(|e| e.to_string())?;
    let (status, last_seq, count) = {
        let mut state = handle.state.lock().expect("state lock");
        for e in events {
            state.apply(e.clone()).map_err(|e| e.to_string())?;
        }
        compress_context(&mut state);
        (state.status, state.last_seq(), state.transcript.len() as u64)
    };
    let record = {
        let mut record = handle.record.lock().expect("record lock");
        record.event_count = count;
        let changed = record.status != status;
        record.status = status;
        changed.then(|| record.clone())
    };
    if let Some(record) = record {
        store.update_run(&record).map_err(|e| e.to_string())?;
    }
    handle.seq_tx.send_replace(last_seq);
    Ok(())
}

pub struct RunManager {
    store: Arc<RunStore>,
    runs: Mutex<HashMap<RunId, Arc<RunHandle>>>,
    api_key: Option<String>,
}

impl RunManager {
    /// Opens the store under `data_dir` and loads every persisted run.
    /// Runs that were mid-flight when the process stopped are resumed.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Arc<Self>, ManagerError> {
        let store = Arc::new(RunStore::open(data_dir)?);
        let manager = Arc::new(Self {
            store,
            runs: Mutex::new(HashMap::new()),
            api_key: std::env::var("BREACHSEEK_API_KEY").ok(),
        });
        for record in manager.store.list_runs()? {
            let run_id = record.run_id.clone();
            let (record, state) = match manager.store.load_run(&run_id) {
                Ok(loaded) => loaded,
                Err(e) => {
                    tracing::error!(%run_id, error = %e, "skipping unreadable run");
                    continue;
                }
            };
            let resume = state.status == RunStatus::Running && state.current_node != NodeId::Terminal;
            let handle = Arc::new(RunHandle::new(record, state));
            manager.runs.lock().expect("runs lock").insert(run_id.clone(), handle.clone());
            if resume {
                tracing::info!(%run_id, "resuming interrupted run");
                if let Err(e) = manager.spawn_worker(&handle) {
                    tracing::error!(%run_id, error = %e, "cannot resume run");
                }
            }
        }
        Ok(manager)
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn get(&self, run_id: &RunId) -> Result<Arc<RunHandle>, ManagerError> {
        self.runs
            .lock()
            .expect("runs lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| ManagerError::NotFound(run_id.clone()))
    }

    pub fn list(&self) -> Vec<RunSummary> {
        let mut out: Vec<RunSummary> = self
            .runs
            .lock()
            .expect("runs lock")
            .values()
            .map(|h| h.summary())
            .collect();
        out.sort_by(|a, b| {
            a.record
                .created_at
                .cmp(&b.record.created_at)
                .then_with(|| a.record.run_id.cmp(&b.record.run_id))
        });
        out
    }

    fn selector(req: &CreateRun) -> ProviderSelector {
        let env = ProviderSelector::from_env(None).ok();
        let kind = req
            .provider
            .or(env.as_ref().map(|s| s.kind))
            .unwrap_or(ProviderKind::Scripted);
        ProviderSelector {
            kind,
            fixture: req.fixture.clone().or_else(|| {
                (kind == ProviderKind::Scripted)
                    .then(|| req.scenario.clone())
                    .flatten()
            }),
            model: req.model.clone().or_else(|| env.as_ref().and_then(|s| s.model.clone())),
            base_url: req.base_url.clone().or_else(|| env.as_ref().and_then(|s| s.base_url.clone())),
        }
    }

    /// Validates a request, persists the new run and starts driving it.
    pub fn create(&self, req: CreateRun) -> Result<Arc<RunHandle>, ManagerError> {
        let limits = req.limits.apply();
        limits.validate().map_err(|e| ManagerError::BadRequest(e.to_string()))?;
        let policy = bundled::load_policy(req.policy.as_deref().unwrap_or(bundled::DEFAULT_POLICY_NAME))?;
        let selector = Self::selector(&req);
        // fail fast on provider misconfiguration
        build_provider(&selector, self.api_key.clone(), 0)?;
        let run_id = RunId::random();
        let state = match req.mode {
            RunMode::Sim => {
                let name = req
                    .scenario
                    .as_deref()
                    .ok_or_else(|| ManagerError::BadRequest("sim mode requires a scenario".into()))?;
                let scenario = bundled::load_scenario(name)?;
                sim_state(run_id.clone(), &scenario, req.goal.as_deref(), limits)
            }
            RunMode::Live => {
                let target = req
                    .target
                    .clone()
                    .filter(|t| !t.trim().is_empty())
                    .ok_or_else(|| ManagerError::BadRequest("live mode requires a target".into()))?;
                let goal = req
                    .goal
                    .clone()
                    .filter(|g| !g.trim().is_empty())
                    .ok_or_else(|| ManagerError::BadRequest("live mode requires a goal".into()))?;
                RunState::new(run_id.clone(), goal, target, limits)
            }
        };
        if state.goal.trim().is_empty() {
            return Err(ManagerError::BadRequest("goal must not be empty".into()));
        }
        let record = RunRecord {
            run_id: run_id.clone(),
            created_at: Utc::now(),
            goal: state.goal.clone(),
            target: state.target.clone(),
            mode: req.mode,
            scenario: req.scenario.clone(),
            limits,
            provider: selector,
            policy_name: policy.name.clone(),
            policy_source: policy.to_toml(),
            auto_approve: req.auto_approve.clone(),
            status: RunStatus::Running,
            event_count: 0,
        };
        self.store.create_run(&record)?;
        let handle = Arc::new(RunHandle::new(record, state));
        self.runs
            .lock()
            .expect("runs lock")
            .insert(run_id, handle.clone());
        self.spawn_worker(&handle)?;
        Ok(handle)
    }

    fn work_dir(&self, run_id: &RunId) -> PathBuf {
        self.store.root().join("work").join(run_id.to_string())
    }

    /// Rebuilds the engine for a run from its frozen configuration and history.
    fn engine_for(&self, record: &RunRecord, history: &[Event]) -> Result<Engine, ManagerError> {
        let policy = SafetyPolicy::parse(record.policy_name.clone(), &record.policy_source)?;
        let provider = build_provider(&record.provider, self.api_key.clone(), provider_calls_made(history))?;
        let work_dir = self.work_dir(&record.run_id);
        std::fs::create_dir_all(&work_dir).map_err(|e| ManagerError::Internal(e.to_string()))?;
        let config = EngineConfig {
            working_dir: work_dir,
            auto_approve: record.auto_approve.clone(),
            ..EngineConfig::default()
        };
        match record.mode {
            RunMode::Sim => {
                let name = record
                    .scenario
                    .as_deref()
                    .ok_or_else(|| ManagerError::Internal("sim run without scenario".into()))?;
                let scenario = bundled::load_scenario(name)?;
                Ok(sim_engine(&scenario, Arc::from(provider), policy, config, history))
            }
            RunMode::Live => {
                let backend = SubprocessBackend::new(policy.max_output_bytes);
                Ok(Engine::new(Arc::from(provider), Box::new(backend), policy, config))
            }
        }
    }

    fn spawn_worker(&self, handle: &Arc<RunHandle>) -> Result<(), ManagerError> {
        let record = handle.record();
        let history = handle.snapshot().transcript;
        let engine = self.engine_for(&record, &history)?;
        let store = self.store.clone();
        let sink_store = store.clone();
        let sink_handle = handle.clone();
        let mut engine =
            engine.with_sink(move |events: &[Event]| publish(&sink_store, &sink_handle, events));
        let worker_handle = handle.clone();
        let (started_tx, started_rx) = std::sync::mpsc::channel();
        let join = thread::Builder::new()
            .name(format!("run-{}", record.run_id))
            .spawn(move || {
                let handle = worker_handle;
                let _drive = handle.drive.lock().expect("drive lock");
                let _ = started_tx.send(());
                // the engine works on a private copy; the sink keeps the shared one in step
                let mut state = handle.snapshot();
                match engine.run_until_terminal(&mut state) {
                    Ok(status) => tracing::info!(run_id = %state.run_id, %status, "run settled"),
                    Err(StepError::Persist(e)) | Err(StepError::Internal(e)) => {
                        tracing::error!(run_id = %state.run_id, error = %e, "run stopped");
                        *handle.error.lock().expect("error lock") = Some(e);
                    }
                    Err(e) => tracing::warn!(run_id = %state.run_id, error = %e, "run stopped"),
                }
            })
            .map_err(|e| ManagerError::Internal(e.to_string()))?;
        // make sure the worker holds the drive lock before anyone can approve
        let _ = started_rx.recv();
        let previous = handle.worker.lock().expect("worker lock").replace(join);
        if let Some(previous) = previous {
            let _ = previous.join();
        }
        Ok(())
    }

    /// Applies a human decision to a suspended run and resumes it.
    pub fn decide(
        &self,
        run_id: &RunId,
        action_id: &ActionId,
        verdict: ApprovalVerdict,
        actor: &str,
    ) -> Result<Arc<RunHandle>, ManagerError> {
        if actor.trim().is_empty() {
            return Err(ManagerError::BadRequest("actor must not be empty".into()));
        }
        let handle = self.get(run_id)?;
        {
            let _drive = handle.drive.lock().expect("drive lock");
            let mut state = handle.snapshot();
            let before = state.transcript.len();
            resolve_approval(&mut state, action_id, verdict, actor).map_err(|e| match e {
                ApprovalError::NoPendingApproval => {
                    ManagerError::Conflict(format!("run {run_id} has no pending approval"))
                }
                ApprovalError::ActionIdMismatch { .. } => ManagerError::UnknownAction(e.to_string()),
            })?;
            publish(&self.store, &handle, &state.transcript[before..]).map_err(ManagerError::Internal)?;
        }
        self.spawn_worker(&handle)?;
        Ok(handle)
    }
}
