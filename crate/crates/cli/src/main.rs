//! `forge`: operator entry points.
//!
//! Config files are the source of truth; any flag given on the command line
//! overrides the matching config value. Exit codes: 0 ok, 2 config or input
//! error, 3 runtime failure.

mod collab;
mod ground;
mod plot;
mod pool;
mod serve;
mod train;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "forge", version, about = "Rollout orchestration and GRPO training for GUI agents")]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the simulated phone over the REST environment protocol.
    ServeEnv(serve::ServeEnvArgs),
    /// Serve a toy policy behind `POST /generate`.
    ServePolicy(serve::ServePolicyArgs),
    /// Run the environment manager over a pool of instances.
    Manager(pool::ManagerArgs),
    /// Collect rollout groups through a running manager and policy servers.
    Rollout(pool::RolloutArgs),
    /// Train the toy policy with GRPO.
    Train(train::TrainArgs),
    /// Run one task under device-cloud routing.
    Collab(collab::CollabArgs),
    /// Score grounding predictions against gold boxes.
    GroundEval(ground::GroundEvalArgs),
    /// Render training metrics to PNG and CSV.
    Plot(plot::PlotArgs),
}

/// A failure classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub async fn until_interrupted() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        log::error!("cannot listen for ctrl-c: {e}");
        std::future::pending::<()>().await;
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::ServeEnv(a) => serve::serve_env(a).await,
        Command::ServePolicy(a) => serve::serve_policy(a).await,
        Command::Manager(a) => pool::manager(a).await,
        Command::Rollout(a) => pool::rollout(a).await,
        Command::Train(a) => train::train(a).await,
        Command::Collab(a) => collab::collab(a).await,
        Command::GroundEval(a) => ground::ground_eval(a),
        Command::Plot(a) => plot::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("forge: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
