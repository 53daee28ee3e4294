use std::io::{BufRead, IsTerminal, Write};
use std::path::PathBuf;
use std::process::{Command, ExitCode, Stdio};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use breachseek_core::bundled;
use breachseek_core::graph::{RunId, RunStatus};
use breachseek_core::roles::ActionId;
use breachseek_core::provider::ProviderKind;
use breachseek_core::roles::describe_event;
use breachseek_core::store::{render_report, ReportFormat, RunMode};
use breachseek_core::tools::ApprovalVerdict;
use breachseek_service::{CreateRun, LimitOverrides, ManagerError, RunHandle, RunManager};

#[derive(Parser)]
#[command(name = "breachseek", version, about = "Multi-agent orchestrator for authorized penetration tests")]
struct Cli {
    /// Directory holding run logs, the run index and reports.
    #[arg(long, global = true, env = "BREACHSEEK_DATA_DIR", default_value = "breachseek-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Start a run and drive it until it ends or needs approval.
    Run(Box<RunArgs>),
    /// Approve or reject a pending action and continue the run.
    Approve {
        run_id: String,
        action_id: String,
        #[arg(long)]
        reject: bool,
        #[arg(long, default_value = "cli")]
        actor: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "BREACHSEEK_PORT", default_value_t = 8080)]
        port: u16,
    },
    /// Render the report of a finished run.
    Report {
        run_id: String,
        #[arg(long, default_value = "md")]
        format: String,
        /// Also convert the HTML report to PDF with wkhtmltopdf.
        #[arg(long)]
        pdf: Option<PathBuf>,
    },
    /// List persisted runs.
    Runs,
    /// List bundled scenarios.
    Scenarios,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    goal: Option<String>,
    /// Scenario name or path (sim mode).
    #[arg(long)]
    scenario: Option<String>,
    /// Target description (live mode).
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value = "sim")]
    mode: String,
    /// scripted, openai_compat or anthropic; defaults to BREACHSEEK_PROVIDER or scripted.
    #[arg(long)]
    provider: Option<String>,
    /// Fixture name or path for the scripted provider.
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    /// Policy name (default, permissive) or path to a policy file.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long)]
    context_window: Option<u64>,
    #[arg(long)]
    keep_verbatim_tail: Option<usize>,
    /// Approve every gated action without asking.
    #[arg(long)]
    auto_approve: bool,
    /// Ask on the terminal when an action needs approval.
    #[arg(long)]
    interactive: bool,
    #[arg(long, default_value = "cli")]
    actor: String,
    /// Print every event of the run.
    #[arg(long, short)]
    verbose: bool,
}

fn exit_for(status: RunStatus) -> ExitCode {
    ExitCode::from(match status {
        RunStatus::Succeeded => 0,
        RunStatus::Failed => 2,
        RunStatus::AbortedBudget => 3,
        RunStatus::AbortedIterations => 4,
        RunStatus::AwaitingApproval => 5,
        RunStatus::Running => 1,
    })
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn print_events(handle: &RunHandle, from_seq: u64) {
    for e in handle.events_from(from_seq) {
        if let Some(line) = describe_event(&e) {
            println!("{line}");
        }
    }
}

/// Prints the outcome and, when the run is waiting, how to continue it.
fn settle(manager: &RunManager, handle: Arc<RunHandle>, args: Option<&RunArgs>) -> ExitCode {
    let mut printed = 0;
    let mut handle = handle;
    loop {
        handle.wait();
        if args.is_some_and(|a| a.verbose) {
            print_events(&handle, printed + 1);
            printed = handle.summary().last_seq;
        }
        let summary = handle.summary();
        let run_id = summary.record.run_id.clone();
        if let Some(err) = handle.last_error() {
            return fail(format!("run {run_id} stopped: {err}"));
        }
        match (&summary.pending_action, args) {
            (Some(action), Some(a)) if a.interactive && std::io::stdin().is_terminal() => {
                print!(
                    "Action {} needs approval:\n  {}\nApprove? [y/N] ",
                    action.action_id,
                    action.command.as_deref().unwrap_or("-")
                );
                let _ = std::io::stdout().flush();
                let mut answer = String::new();
                let _ = std::io::stdin().lock().read_line(&mut answer);
                let verdict = if answer.trim().eq_ignore_ascii_case("y") {
                    ApprovalVerdict::Approve
                } else {
                    ApprovalVerdict::Reject
                };
                match manager.decide(&run_id, &action.action_id, verdict, &a.actor) {
                    Ok(h) => handle = h,
                    Err(e) => return fail(e),
                }
                continue;
            }
            (Some(action), _) => {
                println!("run {run_id}: awaiting approval of {}", action.action_id);
                println!("  command: {}", action.command.as_deref().unwrap_or("-"));
                println!("  continue with: breachseek approve {run_id} {} [--reject]", action.action_id);
            }
            (None, _) => {
                println!(
                    "run {run_id}: {} after {} iterations, {} tokens",
                    summary.record.status, summary.iteration, summary.token_usage
                );
                if let Some(report) = handle.report() {
                    let md = render_report(&report, ReportFormat::Md);
                    match manager.store().write_report(&run_id, ReportFormat::Md, &md) {
                        Ok(path) => println!("report: {}", path.display()),
                        Err(e) => eprintln!("warning: cannot write report: {e}"),
                    }
                }
            }
        }
        return exit_for(summary.record.status);
    }
}

fn run(manager: &RunManager, args: RunArgs) -> ExitCode {
    let mode: RunMode = match args.mode.parse() {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let provider = match args.provider.as_deref().map(str::parse::<ProviderKind>).transpose() {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let req = CreateRun {
        goal: args.goal.clone(),
        mode,
        scenario: args.scenario.clone(),
        target: args.target.clone(),
        provider,
        fixture: args.fixture.clone(),
        model: args.model.clone(),
        base_url: args.base_url.clone(),
        policy: args.policy.clone(),
        limits: LimitOverrides {
            token_budget: args.budget,
            max_iterations: args.max_iterations,
            context_window_limit: args.context_window,
            keep_verbatim_tail: args.keep_verbatim_tail,
        },
        auto_approve: args.auto_approve.then(|| args.actor.clone()),
    };
    match manager.create(req) {
        Ok(handle) => {
            println!("run {} started", handle.record().run_id);
            settle(manager, handle, Some(&args))
        }
        Err(e) => fail(e),
    }
}

fn report(manager: &RunManager, run_id: &str, format: &str, pdf: Option<PathBuf>) -> ExitCode {
    let format: ReportFormat = match format.parse() {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    let handle = match manager.get(&RunId::from(run_id)) {
        Ok(h) => h,
        Err(e) => return fail(e),
    };
    let Some(report) = handle.report() else {
        return fail(format!("run {run_id} is {} and has no report yet", handle.status()));
    };
    let body = render_report(&report, format);
    if let Err(e) = manager.store().write_report(&handle.record().run_id, format, &body) {
        return fail(e);
    }
    print!("{body}");
    if let Some(out) = pdf {
        let html = render_report(&report, ReportFormat::Html);
        match html_to_pdf(&html, &out) {
            Ok(()) => eprintln!("pdf written to {}", out.display()),
            Err(reason) => {
                let fallback = out.with_extension("html");
                eprintln!("warning: PDF conversion unavailable ({reason}); wrote HTML to {}", fallback.display());
                if let Err(e) = std::fs::write(&fallback, html) {
                    return fail(e);
                }
            }
        }
    }
    ExitCode::SUCCESS
}

fn html_to_pdf(html: &str, out: &std::path::Path) -> Result<(), String> {
    let mut child = Command::new("wkhtmltopdf")
        .args(["--quiet", "-"])
        .arg(out)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("wkhtmltopdf: {e}"))?;
    child
        .stdin
        .take()
        .expect("piped stdin")
        .write_all(html.as_bytes())
        .map_err(|e| e.to_string())?;
    let output = child.wait_with_output().map_err(|e| e.to_string())?;
    if output.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&output.stderr).trim().to_string())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("BREACHSEEK_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Cmd::Scenarios = cli.command {
        for name in bundled::scenario_names() {
            match bundled::load_scenario(name) {
                Ok(s) => println!("{name:<18} {:<10} {}", s.host(), s.file.description),
                Err(e) => println!("{name:<18} invalid: {e}"),
            }
        }
        return ExitCode::SUCCESS;
    }
    let manager = match RunManager::open(&cli.data_dir) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    match cli.command {
        Cmd::Run(args) => run(&manager, *args),
        Cmd::Approve {
            run_id,
            action_id,
            reject,
            actor,
        } => {
            let verdict = if reject {
                ApprovalVerdict::Reject
            } else {
                ApprovalVerdict::Approve
            };
            let run_id = RunId::from(run_id.as_str());
            match manager.decide(&run_id, &ActionId::new(action_id), verdict, &actor) {
                Ok(handle) => settle(&manager, handle, None),
                Err(ManagerError::Conflict(msg)) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(6)
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Serve { port } => {
            let token = std::env::var("BREACHSEEK_TOKEN").ok().filter(|t| !t.is_empty());
            if token.is_none() {
                eprintln!("warning: BREACHSEEK_TOKEN is not set; the API accepts unauthenticated requests");
            }
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => return fail(e),
            };
            match rt.block_on(breachseek_service::serve(manager, port, token)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Cmd::Report { run_id, format, pdf } => report(&manager, &run_id, &format, pdf),
        Cmd::Runs => {
            for s in manager.list() {
                println!(
                    "{}  {:<18}  {:<8}  {}",
                    s.record.run_id,
                    s.record.status,
                    s.token_usage,
                    s.record.goal
                );
            }
            ExitCode::SUCCESS
        }
        Cmd::Scenarios => unreachable!("handled above"),
    }
}
