use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use robotfleet::fleetd::{start, ServerConfig, Services};
use robotfleet::llm::{ChatBackend, HttpChatBackend, DEFAULT_TIMEOUT};
use robotfleet::rules::FleetRules;
use tracing_subscriber::EnvFilter;

/// Fleet manager daemon.
#[derive(Debug, Parser)]
#[command(name = "fleetd", version)]
struct Args {
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:7400", env = "FLEETD_LISTEN")]
    listen: String,
    /// Directory with lexicon.txt, recipes.yaml and prompts/; missing files
    /// fall back to the built-in rules.
    #[arg(long)]
    rules_dir: Option<PathBuf>,
    /// Snapshot file, restored at startup and rewritten on every change.
    #[arg(long, env = "FLEETD_SNAPSHOT")]
    snapshot: Option<PathBuf>,
    /// Chat-completions endpoint backing the llm allocator.
    #[arg(long, env = "FLEETD_LLM_ENDPOINT")]
    llm_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o", env = "FLEETD_LLM_MODEL")]
    llm_model: String,
    /// Plan with the chat model instead of the recipe rules.
    #[arg(long, requires = "llm_endpoint")]
    llm_planner: bool,
    /// Seed of the llm-stub allocator.
    #[arg(long, default_value_t = 1)]
    stub_seed: u64,
    /// Seconds before a chat request is abandoned.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs_f64())]
    llm_timeout: f64,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let rules = match FleetRules::load_or_default(args.rules_dir.as_deref()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("fleetd: {e}");
            return ExitCode::from(1);
        }
    };
    if !args.llm_timeout.is_finite() || args.llm_timeout <= 0.0 {
        eprintln!("fleetd: --llm-timeout must be positive");
        return ExitCode::from(2);
    }
    let backend: Option<Arc<dyn ChatBackend>> = args.llm_endpoint.as_ref().map(|url| {
        Arc::new(HttpChatBackend::new(
            url.clone(),
            args.llm_model.clone(),
            Duration::from_secs_f64(args.llm_timeout),
        )) as Arc<dyn ChatBackend>
    });
    let mut services = Services::from_rules(rules, backend.clone(), args.stub_seed);
    if args.llm_planner {
        if let Some(b) = backend {
            services = services.with_llm_planner(b);
        }
    }
    let config = ServerConfig {
        listen: args.listen,
        snapshot: args.snapshot,
        ..ServerConfig::default()
    };
    let server = match start(config, services) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("fleetd: {e}");
            return ExitCode::from(1);
        }
    };
    println!("fleetd listening on {}", server.addr);
    let _ = std::io::stdout().flush();
    server.wait();
    ExitCode::SUCCESS
}
