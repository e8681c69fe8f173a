use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use robotfleet::worker::{serve, WorkerProfile};
use tracing_subscriber::EnvFilter;

/// Simulated robot worker.
#[derive(Debug, Parser)]
#[command(name = "worker-sim", version)]
struct Args {
    /// Robot name; taken from the profile when omitted.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// fleetd address for status reports.
    #[arg(long, default_value = "127.0.0.1:7400", env = "FLEETD_ADDR")]
    manager: String,
    /// YAML profile with failure and discovery scripts.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Seconds per task, overriding the profile.
    #[arg(long)]
    duration: Option<f64>,
    /// Finish every task immediately.
    #[arg(long)]
    fast_forward: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let mut profile = match &args.profile {
        Some(path) => {
            let parsed = std::fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|t| WorkerProfile::parse(&t).map_err(|e| e.to_string()));
            match parsed {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("worker-sim: {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
        }
        None => match &args.name {
            Some(n) => WorkerProfile::new(n.clone()),
            None => {
                eprintln!("worker-sim: give --name or --profile");
                return ExitCode::from(2);
            }
        },
    };
    if let Some(n) = args.name {
        profile.robot_name = n;
    }
    if let Some(d) = args.duration {
        profile.task_duration = d;
    }
    if args.fast_forward {
        profile.task_duration = 0.0;
    }
    let name = profile.robot_name.clone();
    let worker = match serve(profile, &args.listen, &args.manager) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("worker-sim: {e}");
            return ExitCode::from(1);
        }
    };
    println!("worker {name} listening on {}", worker.addr);
    let _ = std::io::stdout().flush();
    worker.wait();
    ExitCode::SUCCESS
}
