use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use qsmn::api::{ClientError, HttpKeyClient};
use qsmn::runner::{
    run_scenario, BoundService, RunError, Scenario, ServeConfig, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION,
};
use qsmn::topology::load_topology_file;

#[derive(Parser)]
#[command(name = "qsmn", version, about = "QKD metro network emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Serve the key delivery API and the trap collector.
    Serve {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        api_port: u16,
        #[arg(long)]
        trap_port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulated seconds run before accepting requests.
        #[arg(long, default_value_t = 30)]
        warmup: u64,
        /// Wall-clock milliseconds per simulated second.
        #[arg(long, default_value_t = 1000)]
        tick_ms: u64,
        #[arg(long)]
        noc_log: Option<PathBuf>,
    },
    /// Print the key status document for a slave SAE.
    Status {
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        slave_sae: String,
        #[arg(long, env = "QSMN_TOKEN")]
        token: String,
    },
    /// Fetch keys for a slave SAE as the calling master SAE.
    Getkey {
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        slave_sae: String,
        #[arg(long, default_value_t = 512)]
        size: u32,
        #[arg(long, default_value_t = 1)]
        number: u32,
        #[arg(long, env = "QSMN_TOKEN")]
        token: String,
    },
}

fn client_exit(e: &ClientError) -> i32 {
    match e.status() {
        Some(s) if (400..500).contains(&s) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Runtime::new().expect("tokio runtime")
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn execute(command: Command) -> Result<(), (i32, String)> {
    let fail = |e: RunError| (e.exit_code(), e.to_string());
    match command {
        Command::Run { scenario } => {
            let s = Scenario::load(&scenario).map_err(|e| fail(e.into()))?;
            let out = run_scenario(&s).map_err(fail)?;
            if s.outputs.report.is_none() {
                print!("{}", out.report.to_json());
            }
            for session in &out.report.sessions {
                eprintln!(
                    "{} -> {}: {} epochs, {} refresh failures",
                    session.master_sae, session.slave_sae, session.epochs_master, session.refresh_failures
                );
            }
            Ok(())
        }
        Command::Serve {
            topology,
            api_port,
            trap_port,
            bind,
            seed,
            warmup,
            tick_ms,
            noc_log,
        } => {
            let topology = load_topology_file(&topology).map_err(|e| (EXIT_VALIDATION, e.to_string()))?;
            let mut config = ServeConfig::new(
                topology,
                SocketAddr::new(bind, api_port),
                SocketAddr::new(bind, trap_port),
            );
            config.seed = seed;
            config.warmup_s = warmup;
            config.tick_interval = Duration::from_millis(tick_ms.max(1));
            config.noc_log = noc_log;
            runtime().block_on(async {
                let bound = BoundService::bind(config).await.map_err(fail)?;
                eprintln!("api on http://{}, traps on {}", bound.api_addr(), bound.trap_addr());
                let summary = bound
                    .run(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(fail)?;
                eprintln!(
                    "stopped at t={}s with {} events logged",
                    summary.sim_time_s, summary.events_logged
                );
                Ok(())
            })
        }
        Command::Status {
            endpoint,
            slave_sae,
            token,
        } => runtime().block_on(async {
            let doc = HttpKeyClient::new(&endpoint, token)
                .status(&slave_sae)
                .await
                .map_err(|e| (client_exit(&e), e.to_string()))?;
            print_json(&doc);
            Ok(())
        }),
        Command::Getkey {
            endpoint,
            slave_sae,
            size,
            number,
            token,
        } => runtime().block_on(async {
            let keys = HttpKeyClient::new(&endpoint, token)
                .enc_keys(&slave_sae, number, size)
                .await
                .map_err(|e| (client_exit(&e), e.to_string()))?;
            print_json(&keys);
            Ok(())
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err((code, message)) => {
            eprintln!("qsmn: {message}");
            ExitCode::from(code as u8)
        }
    }
}
