//! Command-line entry points.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::latency;
use crate::log::{self, SnapshotRate};
use crate::model::{starter_scenario, validate_scenario, ValidatedScenario};
use crate::replay::{self, observer_messages, playback, DEFAULT_POS_TOL_M, DEFAULT_TIMING_TOL_TICKS};
use crate::script::{run_script, Script};
use crate::server::{load_scenario, serve, serve_replay, ServeOptions, DEFAULT_PORT};

#[derive(Debug, Parser)]
#[command(name = "fluid-woz", version, about = "Wizard-of-Oz teleoperation sessions for a simulated mobile manipulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SessionArgs {
    /// Scenario file; the built-in remote scene when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Overrides the scenario's tick length.
    #[arg(long)]
    pub tick_ms: Option<u64>,
    /// Snapshot rate in Hz, or `every-tick`.
    #[arg(long, default_value = "every-tick")]
    pub snapshot_hz: SnapshotRate,
    #[arg(long, default_value = "logs")]
    pub log_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Host a live session.
    Serve {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long, env = "FLUID_WOZ_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
    },
    /// Play a log back to observers, paced by its recorded timestamps.
    Replay {
        log: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "FLUID_WOZ_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Write the paced messages to stdout instead of serving them.
        #[arg(long)]
        stdout: bool,
    },
    /// Re-simulate a log and compare it against its own snapshots.
    Verify {
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POS_TOL_M)]
        pos_tol: f64,
        #[arg(long, default_value_t = DEFAULT_TIMING_TOL_TICKS)]
        timing_tol: u64,
    },
    /// Latency breakdown of a log.
    Report {
        log: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
    /// Serve a session, drive it with a script over loopback, then report.
    Script {
        script: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long)]
        pretty: bool,
    },
    /// Write the starter scenario.
    NewScenario { path: PathBuf },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Msg(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn msg(e: impl std::fmt::Display) -> CliError {
    CliError::Msg(e.to_string())
}

fn scenario_for(args: &SessionArgs) -> Result<ValidatedScenario, CliError> {
    let s = match &args.scenario {
        Some(p) => load_scenario(p).map_err(msg)?,
        None => validate_scenario(starter_scenario()).map_err(msg)?,
    };
    match args.tick_ms {
        Some(t) => s.with_tick_ms(t).map_err(msg),
        None => Ok(s),
    }
}

fn options(args: &SessionArgs, port: u16) -> Result<ServeOptions, CliError> {
    let mut o = ServeOptions::new(scenario_for(args)?, &args.log_dir);
    o.host = args.host.clone();
    o.port = port;
    o.snapshot = args.snapshot_hz;
    Ok(o)
}

fn read_log(path: &Path) -> Result<Vec<log::LogEvent>, CliError> {
    log::read(path).map_err(|e| msg(format!("{}: {e}", path.display())))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("reports serialize"));
}

fn print_report(events: &[log::LogEvent], pretty: bool) -> Result<(), CliError> {
    let r = latency::report(events).map_err(msg)?;
    if pretty {
        print!("{}", r.to_table());
    } else {
        print_json(&r);
    }
    Ok(())
}

/// The starter scene as JSON, with a note on each part.
pub fn starter_scenario_json() -> Value {
    let mut v = serde_json::to_value(starter_scenario()).expect("scenario serializes");
    v["_comment"] = json!([
        "A 10 x 10 m room. Units are metres, radians and milliseconds.",
        "The robot starts near the bottom-left corner; `radius` inflates every obstacle and surface.",
        "`remote` is the item to fetch; `table_left` and `table_right` are the two surfaces it can go on.",
        "`sofa` is an obstacle in the middle of the room.",
        "Fields starting with an underscore are ignored."
    ]);
    v
}

fn new_scenario(path: &Path) -> Result<(), CliError> {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| match e.kind() {
            io::ErrorKind::AlreadyExists => msg(format!("RefusedExisting: {} already exists", path.display())),
            _ => CliError::Io(e),
        })?;
    let text = serde_json::to_string_pretty(&starter_scenario_json()).expect("scenario serializes");
    writeln!(f, "{text}")?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}

async fn dispatch(cmd: CliCommand) -> Result<ExitCode, CliError> {
    match cmd {
        CliCommand::Serve { session, port } => {
            let h = serve(options(&session, port)?).await.map_err(msg)?;
            eprintln!("serving on {} session {} log {}", h.url(), h.session_id, h.log_path.display());
            ctrl_c().await;
            let s = h.shutdown().await.map_err(msg)?;
            eprintln!("session {} ended after {} ticks", s.session_id, s.ticks);
        }
        CliCommand::Replay {
            log,
            speed,
            host,
            port,
            stdout,
        } => {
            let events = read_log(&log)?;
            if stdout {
                let mut out = io::stdout().lock();
                let stats = playback(observer_messages(&events), speed, |m| writeln!(out, "{}", m.to_json()).is_ok())
                    .await
                    .map_err(msg)?;
                eprintln!("emitted {} messages, worst gap error {:.1} ms", stats.emitted, stats.max_gap_error_ms);
            } else {
                let h = serve_replay(events, speed, &host, port).await.map_err(msg)?;
                eprintln!("replaying on {}; waiting for an observer", h.url());
                tokio::select! {
                    r = h.wait() => { r.map_err(msg)?; }
                    _ = ctrl_c() => {}
                }
            }
        }
        CliCommand::Verify { log, pos_tol, timing_tol } => {
            let events = read_log(&log)?;
            let r = replay::verify(&events, pos_tol, timing_tol).map_err(msg)?;
            print_json(&r);
            if r.diverged() {
                return Ok(ExitCode::from(1));
            }
        }
        CliCommand::Report { log, pretty } => print_report(&read_log(&log)?, pretty)?,
        CliCommand::Script {
            script,
            session,
            port,
            pretty,
        } => {
            let text = std::fs::read_to_string(&script)?;
            let parsed: Script = text.parse().map_err(msg)?;
            let h = serve(options(&session, port)?).await.map_err(msg)?;
            eprintln!("session {} log {}", h.session_id, h.log_path.display());
            if parsed.is_empty() {
                eprintln!("empty script; serving on {} until interrupted", h.url());
                ctrl_c().await;
            } else {
                run_script(&h.url(), &parsed, Duration::from_secs(60)).await.map_err(msg)?;
            }
            let s = h.shutdown().await.map_err(msg)?;
            print_report(&read_log(&s.log_path)?, pretty)?;
        }
        CliCommand::NewScenario { path } => new_scenario(&path)?,
    }
    Ok(ExitCode::SUCCESS)
}

/// Parses `args` and runs the subcommand. Usage and runtime errors exit 2,
/// divergence found by `verify` exits 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match rt.block_on(dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
