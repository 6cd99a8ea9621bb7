mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use vascnav::grid::{corridor_benchmark, load_png, OccupancyGrid};
use vascnav::io::write_atomic;
use vascnav::metrics::{compare_report, comparison_csv, comparison_table, MetricsReport, Trajectory};
use vascnav::policy::PolicyParams;
use vascnav::session::{replay, Session, SessionConfig};
use vascnav::trainers::{evaluate, train, Algo, AlgoConfig};

use config::FileConfig;

/// Exit status 1: bad input. Exit status 2: internal fault.
enum Failure {
    User(String),
    Internal(String),
}

impl From<vascnav::Error> for Failure {
    fn from(e: vascnav::Error) -> Self {
        if e.is_user_error() {
            Failure::User(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn user(msg: impl Into<String>) -> Failure {
    Failure::User(msg.into())
}

#[derive(Parser)]
#[command(name = "vascnav", about = "Semi-autonomous magnetic micro-robot navigation toolkit")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Threshold and erode a vessel bitmap into a grid cache.
    Ingest(IngestArgs),
    /// Train a policy with PPO or A2C.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out start/target pairs.
    Eval(EvalArgs),
    /// Run the teleoperation server.
    Serve(ServeArgs),
    /// Replay a session recording into a session log.
    Replay(ReplayArgs),
    /// Compare two groups of session logs on the five trajectory metrics.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Grayscale PNG; lumen is bright.
    #[arg(long)]
    map: PathBuf,
    /// Pixels at or above this value are lumen.
    #[arg(long, default_value_t = vascnav::grid::DEFAULT_THRESHOLD)]
    threshold: u8,
    /// Agent radius for the erosion, pixels [default: from config]
    #[arg(long)]
    radius: Option<f64>,
    /// TOML config file ([env] is read).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid cache to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    /// PNG or grid cache [default: built-in 200x200 corridor benchmark].
    #[arg(long)]
    map: Option<PathBuf>,
    /// TOML config file with [ppo], [a2c], [env], [eval], [magnet] and
    /// [controller] tables; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training algorithm.
    #[arg(long, value_parser = ["ppo", "a2c"], default_value = "ppo")]
    algo: String,
    #[command(flatten)]
    map: MapArgs,
    /// Training seed [default: from config].
    #[arg(long)]
    seed: Option<u64>,
    /// Total environment steps [default: from config].
    #[arg(long)]
    steps: Option<u64>,
    /// Stop once evaluation success reaches this rate.
    #[arg(long)]
    stop_at: Option<f64>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Learning-curve CSV to write.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    map: MapArgs,
    /// Number of episodes [default: from config].
    #[arg(long)]
    episodes: Option<usize>,
    /// Take argmax actions instead of sampling.
    #[arg(long)]
    deterministic: bool,
    /// Seed of the start/target pairs [default: from config].
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for one session-log CSV per episode.
    #[arg(long)]
    traj_out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Checkpoint driving the AUTO phase.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    map: MapArgs,
    /// Listen port.
    #[arg(long, env = "VASCNAV_PORT", default_value_t = 8080)]
    port: u16,
    /// Listen address.
    #[arg(long, env = "VASCNAV_BIND", default_value = "127.0.0.1")]
    bind: String,
    /// Seed of the initial start/target draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory to write the recording and session log to on shutdown.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Recording written by `serve --record`.
    #[arg(long)]
    record: PathBuf,
    /// Session-log CSV to write [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of session-log CSVs for group A.
    #[arg(long)]
    group_a: PathBuf,
    /// Directory of session-log CSVs for group B.
    #[arg(long)]
    group_b: PathBuf,
    /// Micrometres per pixel.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Smoothness window, seconds.
    #[arg(long, default_value_t = vascnav::metrics::DEFAULT_SIGMA)]
    sigma: f64,
    /// Comparison CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn long_version() -> String {
    format!(
        "{}\ncommit: {}\ntarget: {}\nprofile: {}\nparallel: {}",
        env!("CARGO_PKG_VERSION"),
        env!("VASCNAV_COMMIT"),
        env!("VASCNAV_TARGET"),
        env!("VASCNAV_PROFILE"),
        vascnav::par::is_parallel()
    )
}

fn load_config(map: &MapArgs) -> Result<FileConfig, Failure> {
    FileConfig::load(map.config.as_deref(), FileConfig::base(map.map.is_none())).map_err(Failure::User)
}

fn load_grid(map: &MapArgs, cfg: &FileConfig) -> Result<Arc<OccupancyGrid>, Failure> {
    Ok(Arc::new(match &map.map {
        Some(p) => OccupancyGrid::load(p, cfg.env.agent_radius)?,
        None => corridor_benchmark(),
    }))
}

fn print_json(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json output"));
}

fn cmd_ingest(a: IngestArgs) -> CmdResult {
    let cfg = FileConfig::load(a.config.as_deref(), FileConfig::base(false)).map_err(Failure::User)?;
    let radius = a.radius.unwrap_or(cfg.env.agent_radius);
    let grid = load_png(&a.map, a.threshold, radius)?;
    grid.save_cache(&a.out)?;
    print_json(json!({
        "out": a.out,
        "width": grid.width(),
        "height": grid.height(),
        "free_cells": grid.free_count(),
        "threshold": a.threshold,
        "radius": radius,
    }));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(&a.map)?;
    let algo: Algo = a.algo.parse()?;
    if let Some(s) = a.stop_at {
        cfg.eval.stop_at_success = Some(s);
    }
    let algo_cfg = match algo {
        Algo::Ppo => {
            let mut c = cfg.ppo.clone();
            c.seed = a.seed.unwrap_or(c.seed);
            c.total_steps = a.steps.unwrap_or(c.total_steps);
            AlgoConfig::Ppo(c)
        }
        Algo::A2c => {
            let mut c = cfg.a2c.clone();
            c.seed = a.seed.unwrap_or(c.seed);
            c.total_steps = a.steps.unwrap_or(c.total_steps);
            AlgoConfig::A2c(c)
        }
    };
    algo_cfg.validate()?;
    let grid = load_grid(&a.map, &cfg)?;
    log::info!("training {:?} on a {}x{} map", algo, grid.width(), grid.height());
    let report = train(&algo_cfg, grid, &cfg.env, &cfg.eval)?;
    report.params.save(&a.out)?;
    if let Some(p) = &a.curve {
        report.write_curve(p)?;
    }
    print_json(json!({
        "algo": a.algo,
        "seed": algo_cfg.seed(),
        "env_steps": report.env_steps,
        "updates": report.updates,
        "best_success": report.best_success(),
        "first_step_80": report.first_step_reaching(0.8),
        "first_step_90": report.first_step_reaching(0.9),
        "checkpoint": a.out,
    }));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let cfg = load_config(&a.map)?;
    let params = PolicyParams::load(&a.ckpt)?;
    let grid = load_grid(&a.map, &cfg)?;
    let episodes = a.episodes.unwrap_or(cfg.eval.episodes);
    let seed = a.seed.unwrap_or(cfg.eval.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = evaluate(&params, &grid, &cfg.env, episodes, a.deterministic, &mut rng)?;
    if let Some(dir) = &a.traj_out {
        std::fs::create_dir_all(dir).map_err(|e| user(format!("{}: {e}", dir.display())))?;
        for (k, t) in report.traces.iter().enumerate() {
            write_atomic(&dir.join(format!("episode_{k:04}.csv")), t.session_log().as_bytes())?;
        }
    }
    print_json(json!({
        "episodes": report.episodes,
        "success_rate": report.success_rate,
        "mean_return": report.mean_return,
        "seed": seed,
        "deterministic": a.deterministic,
    }));
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> CmdResult {
    let cfg = load_config(&a.map)?;
    let params = PolicyParams::load(&a.ckpt)?;
    let grid = load_grid(&a.map, &cfg)?;
    let session = Session::new(
        grid,
        params,
        SessionConfig {
            env: cfg.env.clone(),
            controller: cfg.controller,
            seed: a.seed,
            ..SessionConfig::default()
        },
    )?;
    if let Some(dir) = &a.record {
        std::fs::create_dir_all(dir).map_err(|e| user(format!("{}: {e}", dir.display())))?;
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
    let session = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.bind.as_str(), a.port))
            .await
            .map_err(|e| user(format!("bind {}:{}: {e}", a.bind, a.port)))?;
        let addr = listener.local_addr().map_err(|e| Failure::Internal(e.to_string()))?;
        eprintln!("serving on ws://{addr}/ws (seed {}); Ctrl-C to stop", a.seed);
        let handle = vascnav_teleop::spawn_session(session, vascnav_teleop::TickConfig::default());
        let server = vascnav_teleop::serve(listener, handle.clone(), std::future::pending());
        tokio::select! {
            r = server => r.map_err(|e| Failure::Internal(e.to_string()))?,
            _ = tokio::signal::ctrl_c() => {}
        }
        handle.stop().await.map_err(|e| Failure::Internal(e.to_string()))
    })?;
    if let Some(dir) = &a.record {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let stem = format!("session-{}-{stamp}", a.seed);
        write_atomic(&dir.join(format!("{stem}.jsonl")), session.recording().as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.csv")), session.log().as_bytes())?;
        eprintln!("recorded {} ticks to {}", session.tick_count(), dir.join(&stem).display());
    }
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> CmdResult {
    let text = vascnav::io::read_to_string(&a.record)?;
    let session = replay(&text)?;
    match &a.out {
        Some(p) => write_atomic(p, session.log().as_bytes())?,
        None => print!("{}", session.log()),
    }
    Ok(())
}

fn load_group(dir: &Path, scale: f64, sigma: f64) -> Result<Vec<MetricsReport>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| user(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = vascnav::io::read_to_string(p)?;
            let traj = Trajectory::from_session_log(&text, scale)
                .map_err(|e| user(format!("{}: {e}", p.display())))?;
            MetricsReport::compute(&traj, sigma).map_err(|e| user(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(user("--scale must be positive"));
    }
    let ga = load_group(&a.group_a, a.scale, a.sigma)?;
    let gb = load_group(&a.group_b, a.scale, a.sigma)?;
    let rows = compare_report(&ga, &gb)?;
    print!("{}", comparison_table(&rows));
    if let Some(p) = &a.out {
        write_atomic(p, comparison_csv(&rows).as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cmd = Cli::command()
        .version(env!("CARGO_PKG_VERSION"))
        .long_version(long_version());
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
