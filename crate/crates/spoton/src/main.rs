use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use spoton::config::{Config, ConfigError, ENDPOINT_ENV};
use spoton::coordinator::{self, RunOutcome, EXIT_CONFIG, EXIT_DIGEST_MISMATCH, EXIT_UNRECOVERABLE};
use spoton::drill::{run_drill, DrillOptions, EvictionPlan};
use spoton::ledger_log::{read_ledger, LEDGER_FILE};
use spoton::mock::{MockOptions, MockServer};
use spoton::worker::{run_worker, WorkerOptions, STATE_FILE_ENV};
use spoton_core::checkpoint::CheckpointerKind;
use spoton_core::ledger::RunLedger;
use spoton_core::spotsim::{
    cost, fit_overheads, metaspades_runs, recorded_claims, recorded_fit_targets, simulate, CheckpointPolicy,
    OverheadGrid, Overheads, Report, ReportRow, SimError, SimParams,
};
use spoton_core::time::{format_hms, parse_hms};
use spoton_core::workload::WorkloadSpec;
use tracing::error;
use tracing_subscriber::EnvFilter;

const EXIT_USAGE: u8 = 2;

/// Checkpoint coordinator for preemptible machines.
///
/// Configuration comes from a TOML file (`--config`), then `--set
/// section.key=value` overrides, then `SPOTON_ENDPOINT`, then the
/// `--store`/`--endpoint` flags. Keys:
///
///   [workload]   stages ("NAME:STEPS,..."), seed, step_cost (s per step), program
///
///   [checkpoint] checkpointer (application | transparent | toy), enabled,
///                checkpoint_interval (s), store_root, snapshot_time_estimate (s),
///                snapshot_cost (s), snapshot_cmd ({pid}, {dir}), restore_cmd ({dir})
///
///   [eviction]   enabled, metadata_endpoint, api_version, poll_interval (s),
///                min_notice_floor (s)
///
///   [pricing]    spot_rate, on_demand_rate ($/h), storage_rate ($ per 100 GiB-month),
///                provisioned_storage (GiB)
#[derive(Debug, Parser)]
#[command(name = "spoton", version, verbatim_doc_comment)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set checkpoint.checkpoint_interval=60`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Checkpoint store root (checkpoint.store_root).
    #[arg(long, global = true, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Scheduled-events URL (eviction.metadata_endpoint).
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the workload from the start under supervision.
    Run,
    /// Resume from the latest valid checkpoint (a fresh run if there is none).
    Resume,
    /// Serve a scheduled-events mock that can evict a registered process.
    MockServe(MockServeArgs),
    /// Schedule an eviction on a running mock.
    MockEvict(MockEvictArgs),
    /// Simulate makespan and cost under periodic evictions.
    Sim(SimArgs),
    /// Tabulate runs from ledgers or the recorded runs.
    Report(ReportArgs),
    /// Run/resume in a loop against a mock executing an eviction plan.
    Drill(DrillArgs),
    #[command(hide = true)]
    Workload(WorkloadArgs),
}

#[derive(Debug, Args)]
struct MockServeArgs {
    #[arg(long, default_value = "127.0.0.1:8770")]
    bind: SocketAddr,
    /// Minimum notice in seconds; shorter trigger delays are raised to it.
    #[arg(long, default_value_t = 30.0)]
    min_notice: f64,
    /// Record reclaims without killing anything.
    #[arg(long)]
    no_kill: bool,
    /// Permit binding to a non-loopback address.
    #[arg(long)]
    allow_non_loopback: bool,
    /// Eviction plan: none | every:SECS | at:SECS,SECS,...
    #[arg(long, default_value = "none")]
    plan: String,
    /// Delay requested with each planned trigger, in seconds.
    #[arg(long, default_value_t = 30.0)]
    notice: f64,
    /// Process to reclaim.
    #[arg(long)]
    register: Option<i32>,
}

#[derive(Debug, Args)]
struct MockEvictArgs {
    /// Mock base URL.
    #[arg(long, default_value = "http://127.0.0.1:8770")]
    base: String,
    /// Requested notice in seconds.
    #[arg(long, default_value_t = 30.0)]
    delay: f64,
    /// Register this pid as the process to reclaim first.
    #[arg(long)]
    register: Option<i32>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Stage durations (SECS, MM:SS or H:MM:SS), comma separated. Defaults
    /// to the recorded bare run.
    #[arg(long)]
    stages: Option<String>,
    /// Policies to sweep: periodic:SECS | boundary | none, comma separated.
    #[arg(long, default_value = "boundary")]
    policy: String,
    /// Eviction intervals to sweep (durations or `none`), comma separated.
    #[arg(long, default_value = "none")]
    every: String,
    #[arg(long, default_value = "0")]
    ckpt_overhead: String,
    #[arg(long, default_value = "0")]
    restore: String,
    #[arg(long, default_value = "0")]
    reprovision: String,
    /// Simulate the six recorded eviction scenarios instead of a sweep.
    #[arg(long)]
    recorded: bool,
    /// Fit the overheads to the recorded runs first (implies --recorded).
    #[arg(long)]
    calibrate: bool,
    /// Largest overhead tried by --calibrate, in seconds.
    #[arg(long, default_value_t = 600)]
    grid_max: u64,
    /// Grid step of --calibrate, in seconds.
    #[arg(long, default_value_t = 30)]
    grid_step: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Ledger files or store roots. Defaults to the configured store.
    ledgers: Vec<PathBuf>,
    /// Tabulate the eight recorded runs.
    #[arg(long)]
    recorded: bool,
    /// CSV instead of an aligned table.
    #[arg(long)]
    csv: bool,
    /// Eviction label for ledger rows (default: N/A, or the eviction count).
    #[arg(long)]
    eviction: Option<String>,
    /// Checkpoint label for ledger rows (default: from the configuration).
    #[arg(long)]
    ckpt_type: Option<String>,
}

#[derive(Debug, Args)]
struct DrillArgs {
    /// none | every:SECS | at:SECS,SECS,... (offsets from the drill start)
    #[arg(long, default_value = "none")]
    plan: String,
    /// Delay requested with each trigger, in seconds.
    #[arg(long, default_value_t = 30.0)]
    notice: f64,
    /// The mock's minimum notice, in seconds.
    #[arg(long, default_value_t = 30.0)]
    min_notice: f64,
    /// Evictions in a row without checkpointed progress before giving up.
    #[arg(long, default_value_t = 3)]
    max_stalls: u32,
    /// Wall-time limit in seconds.
    #[arg(long, default_value_t = 86_400.0)]
    timeout: f64,
}

#[derive(Debug, Args)]
struct WorkloadArgs {
    #[arg(long)]
    stages: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    step_cost: f64,
    #[arg(long, default_value = "toy")]
    mode: String,
    #[arg(long)]
    restore: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    snapshot_cost: f64,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    exit_on_eof: bool,
}

fn init_tracing(default: &str) {
    let filter = EnvFilter::try_from_env("SPOTON_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn secs(v: f64, what: &str) -> Result<Duration, String> {
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{what} must be a non-negative number of seconds"));
    }
    Ok(Duration::from_secs_f64(v))
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn load_config(g: &GlobalArgs) -> Result<Config, ConfigError> {
    let mut overrides = g.overrides.clone();
    if let Some(store) = &g.store {
        overrides.push(format!("checkpoint.store_root={}", toml_string(&store.to_string_lossy())));
    }
    let mut config = Config::load(g.config.as_deref(), &overrides, std::env::var(ENDPOINT_ENV).ok())?;
    if let Some(e) = &g.endpoint {
        config.eviction.metadata_endpoint = e.clone();
    }
    Ok(config)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(Cmd::Workload(args)) = &cli.command {
        init_tracing("warn");
        return workload(args);
    }
    init_tracing("info");
    let config = match load_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return code(EXIT_CONFIG);
        }
    };
    if cli.global.dump_config {
        print!("{}", config.to_toml());
        return ExitCode::SUCCESS;
    }
    let json = cli.global.json;
    match cli.command {
        None => {
            use clap::CommandFactory;
            let _ = Cli::command().print_help();
            ExitCode::from(EXIT_USAGE)
        }
        Some(Cmd::Run) => run(&config, false, json),
        Some(Cmd::Resume) => run(&config, true, json),
        Some(Cmd::MockServe(a)) => mock_serve(&a),
        Some(Cmd::MockEvict(a)) => mock_evict(&a, json),
        Some(Cmd::Sim(a)) => sim(&config, &a, json),
        Some(Cmd::Report(a)) => report(&config, &a, json),
        Some(Cmd::Drill(a)) => drill(&config, &a, json),
        Some(Cmd::Workload(_)) => unreachable!(),
    }
}

fn run(config: &Config, resume: bool, json: bool) -> ExitCode {
    let cfg = match config.coordinator() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return code(EXIT_CONFIG);
        }
    };
    let reference = cfg.workload.reference_digest();
    let result = if resume { coordinator::resume(&cfg) } else { coordinator::run(&cfg) };
    match result {
        Ok(outcome) => {
            let mut exit = outcome.exit_code();
            let (label, digest) = match &outcome {
                RunOutcome::Completed { digest, .. } => {
                    if *digest != reference {
                        error!(%digest, %reference, "digest differs from the eviction-free reference");
                        exit = EXIT_DIGEST_MISMATCH;
                    }
                    ("completed", Some(digest.as_str()))
                }
                RunOutcome::Evicted { .. } => ("evicted", None),
            };
            if json {
                let l = outcome.ledger();
                println!(
                    "{}",
                    json!({
                        "outcome": label,
                        "digest": digest,
                        "reference_digest": reference,
                        "exit_code": exit,
                        "attempts": l.attempts.len(),
                        "checkpoints": l.checkpoints.iter().filter(|c| c.ok).count(),
                        "evictions": l.evictions.len(),
                        "makespan_secs": l.makespan().as_secs_f64(),
                    })
                );
            } else if let Some(d) = digest {
                println!("{d}");
            } else {
                println!("evicted");
            }
            code(exit)
        }
        Err(e) => {
            eprintln!("error: {e}");
            code(EXIT_UNRECOVERABLE)
        }
    }
}

fn workload(a: &WorkloadArgs) -> ExitCode {
    let built = (|| -> Result<WorkerOptions, String> {
        let stages = WorkloadSpec::parse_stages(&a.stages).map_err(|e| e.to_string())?;
        let cost = secs(a.step_cost, "--step-cost")?;
        let spec = WorkloadSpec::new(stages, a.seed).map_err(|e| e.to_string())?.with_step_cost((!cost.is_zero()).then_some(cost));
        let mode: CheckpointerKind = a.mode.parse()?;
        Ok(WorkerOptions {
            spec,
            mode,
            restore: a.restore.clone(),
            snapshot_cost: secs(a.snapshot_cost, "--snapshot-cost")?,
            checkpoint_dir: a.checkpoint_dir.clone(),
            state_file: std::env::var_os(STATE_FILE_ENV).map(PathBuf::from),
            exit_on_eof: a.exit_on_eof,
        })
    })();
    let opts = match built {
        Ok(o) => o,
        Err(e) => return usage(e),
    };
    match run_worker(&opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn mock_serve(a: &MockServeArgs) -> ExitCode {
    let plan = match EvictionPlan::parse(&a.plan) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    let (min_notice, notice) = match (secs(a.min_notice, "--min-notice"), secs(a.notice, "--notice")) {
        (Ok(m), Ok(n)) => (m, n),
        (Err(e), _) | (_, Err(e)) => return usage(e),
    };
    let opts = MockOptions { min_notice, kill: !a.no_kill, allow_non_loopback: a.allow_non_loopback, ..MockOptions::default() };
    let mock = match MockServer::start(a.bind, opts) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(pid) = a.register {
        mock.register(pid);
    }
    let triggers = plan.triggers(Duration::from_secs(30 * 86_400));
    if let Err(e) = mock.schedule_evictions(triggers.into_iter().map(|t| (t, notice)).collect()) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    println!("{}", mock.events_url());
    loop {
        std::thread::park();
    }
}

fn mock_evict(a: &MockEvictArgs, json: bool) -> ExitCode {
    let delay = match secs(a.delay, "--delay") {
        Ok(d) => d,
        Err(e) => return usage(e),
    };
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .proxy(None)
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .into();
    let base = a.base.trim_end_matches('/');
    let post = |path: &str, body: serde_json::Value| -> Result<(u16, String), String> {
        let mut resp = agent.post(format!("{base}{path}")).send_json(&body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    };
    if let Some(pid) = a.register {
        match post("/admin/register", json!({ "pid": pid })) {
            Ok((200, _)) => {}
            Ok((s, t)) => {
                eprintln!("error: register failed with {s}: {}", t.trim());
                return ExitCode::FAILURE;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    match post("/admin/evict", json!({ "delay_seconds": delay.as_secs_f64() })) {
        Ok((200, body)) => {
            if json {
                println!("{}", body.trim());
            } else {
                let v: serde_json::Value = serde_json::from_str(&body).unwrap_or_default();
                println!("{} NotBefore {}", v["event_id"].as_str().unwrap_or("?"), v["not_before"].as_str().unwrap_or("?"));
            }
            ExitCode::SUCCESS
        }
        Ok((s, t)) => {
            eprintln!("error: trigger failed with {s}: {}", t.trim());
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// `SECS`, `MM:SS` or `H:MM:SS`; seconds may be fractional.
fn parse_duration(text: &str) -> Result<Duration, String> {
    let t = text.trim();
    if t.contains(':') {
        return parse_hms(t).ok_or_else(|| format!("bad duration `{t}`"));
    }
    let v: f64 = t.parse().map_err(|_| format!("bad duration `{t}`"))?;
    secs(v, "durations")
}

fn parse_policy(text: &str) -> Result<CheckpointPolicy, String> {
    match text.trim() {
        "boundary" => Ok(CheckpointPolicy::BoundaryOnly),
        "none" => Ok(CheckpointPolicy::None),
        t => {
            let tau = t.strip_prefix("periodic:").ok_or_else(|| format!("unknown policy `{t}`"))?;
            let tau = parse_duration(tau)?;
            if tau.is_zero() {
                return Err("periodic interval must be positive".into());
            }
            Ok(CheckpointPolicy::Periodic(tau))
        }
    }
}

fn parse_every(text: &str) -> Result<Option<Duration>, String> {
    match text.trim() {
        "none" | "inf" => Ok(None),
        t => {
            let e = parse_duration(t)?;
            if e.is_zero() {
                return Err("eviction interval must be positive".into());
            }
            Ok(Some(e))
        }
    }
}

struct SimRow {
    params: SimParams,
    observed: Option<Duration>,
    label: Option<String>,
    result: Result<spoton_core::spotsim::SimResult, SimError>,
}

fn sim(config: &Config, a: &SimArgs, json: bool) -> ExitCode {
    let pricing = config.pricing();
    let overheads = (|| -> Result<Overheads, String> {
        Ok(Overheads {
            checkpoint: parse_duration(&a.ckpt_overhead)?,
            restore: parse_duration(&a.restore)?,
            reprovision: parse_duration(&a.reprovision)?,
        })
    })();
    let mut overheads = match overheads {
        Ok(o) => o,
        Err(e) => return usage(e),
    };
    let mut fit_rms = None;
    if a.calibrate {
        if a.grid_step == 0 {
            return usage("--grid-step must be positive");
        }
        let grid = OverheadGrid::uniform(Duration::from_secs(a.grid_max), Duration::from_secs(a.grid_step));
        let (o, rms) = fit_overheads(&recorded_fit_targets(), &grid);
        overheads = o;
        fit_rms = Some(rms);
    }
    let mut points: Vec<(SimParams, Option<Duration>, Option<String>)> = Vec::new();
    if a.recorded || a.calibrate {
        let runs = metaspades_runs();
        let labelled = runs.iter().filter(|r| r.eviction != "N/A");
        for (t, r) in recorded_fit_targets().into_iter().zip(labelled) {
            points.push((t.params, Some(t.observed), Some(format!("{} / {}", r.eviction, r.ckpt_type))));
        }
    } else {
        let stages = match &a.stages {
            Some(s) => s.split(',').map(parse_duration).collect::<Result<Vec<_>, _>>(),
            None => Ok(metaspades_runs()[0].stage_times.iter().map(|(_, d)| *d).collect()),
        };
        let policies = a.policy.split(',').map(parse_policy).collect::<Result<Vec<_>, _>>();
        let everies = a.every.split(',').map(parse_every).collect::<Result<Vec<_>, _>>();
        let (stages, policies, everies) = match (stages, policies, everies) {
            (Ok(s), Ok(p), Ok(e)) => (s, p, e),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return usage(e),
        };
        if stages.is_empty() || stages.iter().any(|d| d.is_zero()) {
            return usage("every stage needs a positive duration");
        }
        for p in &policies {
            for e in &everies {
                let mut params = SimParams::new(stages.clone(), *p);
                params.eviction_interval = *e;
                points.push((params, None, None));
            }
        }
    }
    let rows: Vec<SimRow> = points
        .into_iter()
        .map(|(params, observed, label)| {
            let params = params.with_overheads(overheads);
            let result = simulate(&params, &pricing);
            SimRow { params, observed, label, result }
        })
        .collect();
    if let Some(e) = rows.iter().find_map(|r| match &r.result {
        Err(SimError::Invalid(m)) => Some(*m),
        _ => None,
    }) {
        return usage(e);
    }
    if json {
        let out: Vec<_> = rows.iter().map(|r| sim_json(r)).collect();
        let doc = json!({
            "overheads": {
                "checkpoint_secs": overheads.checkpoint.as_secs_f64(),
                "restore_secs": overheads.restore.as_secs_f64(),
                "reprovision_secs": overheads.reprovision.as_secs_f64(),
            },
            "fit_rms": fit_rms,
            "points": out,
        });
        println!("{doc}");
    } else {
        if let Some(rms) = fit_rms {
            println!(
                "# fitted checkpoint={}s restore={}s reprovision={}s rms_rel_error={:.4}",
                overheads.checkpoint.as_secs(),
                overheads.restore.as_secs(),
                overheads.reprovision.as_secs(),
                rms
            );
        }
        let recorded = rows.iter().any(|r| r.observed.is_some());
        let mut header = String::from(
            "policy,eviction_interval,checkpoint_overhead,restore_time,reprovision_delay,makespan,evictions,checkpoints,lost_work,spot_cost,ondemand_cost",
        );
        if recorded {
            header.push_str(",observed,run");
        }
        println!("{header}");
        for r in &rows {
            println!("{}", sim_csv(r, recorded));
        }
    }
    // a single point that cannot finish is a failed simulation
    if rows.len() == 1 && matches!(rows[0].result, Err(SimError::Nonconvergence { .. })) {
        if let Err(e) = &rows[0].result {
            eprintln!("error: {e}");
        }
        return code(EXIT_UNRECOVERABLE);
    }
    ExitCode::SUCCESS
}

fn every_label(e: Option<Duration>) -> String {
    e.map_or_else(|| "none".into(), |d| format_hms(d))
}

fn sim_csv(r: &SimRow, recorded: bool) -> String {
    let p = &r.params;
    let mut cells = vec![
        p.checkpoint_policy.to_string(),
        every_label(p.eviction_interval),
        format_hms(p.checkpoint_overhead),
        format_hms(p.restore_time),
        format_hms(p.reprovision_delay),
    ];
    match &r.result {
        Ok(s) => cells.extend([
            format_hms(s.makespan),
            s.evictions.to_string(),
            s.checkpoints_taken.to_string(),
            format_hms(s.lost_work),
            format!("{:.3}", s.spot_cost.dollars()),
            format!("{:.3}", s.on_demand_cost.dollars()),
        ]),
        Err(_) => cells.extend(["nonconvergence".into(), String::new(), String::new(), String::new(), String::new(), String::new()]),
    }
    if recorded {
        cells.push(r.observed.map(format_hms).unwrap_or_default());
        cells.push(r.label.clone().unwrap_or_default());
    }
    cells.join(",")
}

fn sim_json(r: &SimRow) -> serde_json::Value {
    let p = &r.params;
    let mut v = json!({
        "policy": p.checkpoint_policy.to_string(),
        "eviction_interval_secs": p.eviction_interval.map(|d| d.as_secs_f64()),
        "stage_secs": p.stage_durations.iter().map(|d| d.as_secs_f64()).collect::<Vec<_>>(),
    });
    match &r.result {
        Ok(s) => {
            v["makespan_secs"] = json!(s.makespan.as_secs_f64());
            v["evictions"] = json!(s.evictions);
            v["checkpoints"] = json!(s.checkpoints_taken);
            v["lost_work_secs"] = json!(s.lost_work.as_secs_f64());
            v["spot_cost"] = json!(s.spot_cost.dollars());
            v["ondemand_cost"] = json!(s.on_demand_cost.dollars());
        }
        Err(e) => v["error"] = json!(e.to_string()),
    }
    if let Some(o) = r.observed {
        v["observed_secs"] = json!(o.as_secs_f64());
    }
    if let Some(l) = &r.label {
        v["run"] = json!(l);
    }
    v
}

fn ledger_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        let nested = p.join("ledger").join(LEDGER_FILE);
        if nested.exists() {
            return nested;
        }
        return p.join(LEDGER_FILE);
    }
    p.to_path_buf()
}

fn default_ckpt_label(config: &Config) -> String {
    let c = &config.checkpoint;
    if !c.enabled {
        return "N/A".into();
    }
    match c.checkpointer.as_str() {
        "application" => "Application".into(),
        "transparent" => format!("Transparent {} s", c.checkpoint_interval),
        other => format!("{other} {} s", c.checkpoint_interval),
    }
}

fn report(config: &Config, a: &ReportArgs, json: bool) -> ExitCode {
    let pricing = config.pricing();
    let mut rows: Vec<ReportRow> = Vec::new();
    if a.recorded {
        rows.extend(metaspades_runs());
    }
    let mut paths: Vec<PathBuf> = a.ledgers.iter().map(|p| ledger_path(p)).collect();
    if paths.is_empty() && !a.recorded {
        let p = config.checkpoint.store_root.join("ledger").join(LEDGER_FILE);
        if p.exists() {
            paths.push(p);
        }
    }
    for p in &paths {
        let ledger: RunLedger = match read_ledger(p) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::FAILURE;
            }
        };
        let eviction = a.eviction.clone().unwrap_or_else(|| match ledger.evictions.len() {
            0 => "N/A".into(),
            1 => "1 eviction".into(),
            n => format!("{n} evictions"),
        });
        let ckpt = a.ckpt_type.clone().unwrap_or_else(|| default_ckpt_label(config));
        rows.push(ReportRow::from_ledger(&ledger, &eviction, &ckpt));
    }
    let table = Report::new(rows, pricing);
    let claims = a.recorded.then(|| recorded_claims(&pricing));
    if json {
        let out: Vec<_> = table
            .rows
            .iter()
            .map(|r| {
                json!({
                    "stages": r.stage_times.iter().map(|(n, d)| json!({"name": n, "secs": d.as_secs_f64()})).collect::<Vec<_>>(),
                    "total_secs": r.total.as_secs_f64(),
                    "eviction": r.eviction,
                    "ckpt_type": r.ckpt_type,
                    "coordinated": r.coordinated,
                    "spot_cost": cost(r.total, pricing.spot_rate).dollars(),
                    "ondemand_cost": cost(r.total, pricing.on_demand_rate).dollars(),
                })
            })
            .collect();
        let mut doc = json!({ "rows": out, "monthly_storage": pricing.monthly_storage().dollars() });
        if let Some(c) = claims {
            doc["claims"] = json!({
                "baseline_on_demand": c.baseline_on_demand.dollars(),
                "app90_vs_baseline_pct": c.app90_vs_baseline,
                "transparent90_vs_app60_on_demand_pct": c.transparent90_vs_app60_on_demand,
                "transparent90_vs_baseline_pct": c.transparent90_vs_baseline,
            });
        }
        println!("{doc}");
    } else if a.csv {
        print!("{}", table.to_csv());
    } else {
        print!("{}", table.to_text());
        println!("Shared storage: {} per month", pricing.monthly_storage());
        if let Some(c) = claims {
            println!("On-demand baseline (bare run): {}", c.baseline_on_demand);
            println!("Savings, application 90 min on spot vs baseline on demand: {:.1}%", c.app90_vs_baseline);
            println!(
                "Savings, transparent 30 min / 90 min evictions on spot vs application 60 min on demand: {:.1}%",
                c.transparent90_vs_app60_on_demand
            );
            println!(
                "Savings, transparent 30 min / 90 min evictions on spot vs baseline on demand: {:.1}%",
                c.transparent90_vs_baseline
            );
        }
    }
    ExitCode::SUCCESS
}

fn drill(config: &Config, a: &DrillArgs, json: bool) -> ExitCode {
    let plan = match EvictionPlan::parse(&a.plan) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    let program = match std::env::current_exe() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot locate this executable: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut opts = DrillOptions::new(plan, program);
    match (secs(a.notice, "--notice"), secs(a.min_notice, "--min-notice"), secs(a.timeout, "--timeout")) {
        (Ok(n), Ok(m), Ok(t)) => {
            opts.notice = n;
            opts.min_notice = m;
            opts.timeout = t;
        }
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return usage(e),
    }
    opts.max_stalls = a.max_stalls.max(1);
    let report = match run_drill(config, &opts) {
        Ok(r) => r,
        Err(spoton::drill::DrillError::Config(e)) => {
            eprintln!("error: {e}");
            return code(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return code(EXIT_UNRECOVERABLE);
        }
    };
    let verdict = format!("{:?}", report.verdict);
    if json {
        println!(
            "{}",
            json!({
                "verdict": verdict,
                "digest": report.digest,
                "reference_digest": report.reference_digest,
                "launches": report.launches,
                "reclaimed": report.reclaimed,
                "evictions": report.ledger.evictions.len(),
                "wall_secs": report.wall.as_secs_f64(),
                "makespan_secs": report.ledger.makespan().as_secs_f64(),
                "exit_code": report.exit_code(),
            })
        );
    } else {
        print!("{}", Report::new(vec![report.row.clone()], config.pricing()).to_text());
        println!(
            "verdict: {verdict}; launches {}; reclaimed {}; digest {} (reference {})",
            report.launches,
            report.reclaimed,
            report.digest.as_deref().unwrap_or("-"),
            report.reference_digest
        );
    }
    code(report.exit_code())
}
