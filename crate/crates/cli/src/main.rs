//! `momex`: run scenarios, validate fixtures, serve the gateway.

mod fixtures;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use momex_core::demo::run_demo;
use momex_core::exam::University;
use momex_core::netsim::{Latency, SimConfig};
use momex_core::testbed::{Testbed, TestbedConfig};
use momex_core::ue::{run_scenario, Scenario};
use momex_gateway::{Engine, GatewayConfig, TokenSource};

#[derive(Parser)]
#[command(
    name = "momex",
    version,
    about = "Exam service testbed over a simulated IMS core"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a UE scenario against a freshly booted testbed.
    Scenario(ScenarioArgs),
    /// Serve the gateway API on the wall clock.
    Serve(ServeArgs),
    /// Check university, scenario and subscriber files.
    ValidateFixtures {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Run the bundled sample exam and print the report.
    Demo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One-way latency in ms: `10` or a uniform range `5-20`.
    #[arg(long, default_value = "10", value_parser = parse_latency)]
    latency: Latency,
    /// Per-message loss probability.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// University fixture; the bundled sample when omitted.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Directory for sms.out and email.out.
    #[arg(long)]
    sinks: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    scenario: PathBuf,
    /// Extra HSS subscribers.
    #[arg(long)]
    subscribers: Option<PathBuf>,
    /// Transcript output; stdout when omitted.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Network trace output.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

fn parse_latency(s: &str) -> Result<Latency, String> {
    let num = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once('-') {
        Some((low, high)) => Ok(Latency::Uniform {
            low: num(low)?,
            high: num(high)?,
        }),
        None => Ok(Latency::Fixed(num(s)?)),
    }
}

/// Failure of a subcommand: the message and the exit code.
struct Failure(String, u8);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string(), 2)
    }
}

impl SimArgs {
    fn testbed(&self) -> Result<(TestbedConfig, University), Failure> {
        let sim = SimConfig {
            seed: self.seed,
            latency: self.latency,
            loss_probability: self.loss,
        };
        sim.validate()?;
        let university = match &self.fixtures {
            Some(p) => University::load(p)?,
            None => University::parse(momex_core::demo::SAMPLE_UNIVERSITY)?,
        };
        let config = TestbedConfig {
            sim,
            sink_dir: self.sinks.clone(),
            journal: None,
        };
        Ok((config, university))
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure(format!("{}: {e}", p.display()), 2)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn scenario(args: ScenarioArgs) -> Result<(), Failure> {
    let (config, university) = args.sim.testbed()?;
    let subscribers = match &args.subscribers {
        Some(p) => fixtures::load_subscribers(p)?,
        None => Vec::new(),
    };
    let scenario = Scenario::load(&args.scenario)?;
    let mut tb = Testbed::boot_with(&config, Some(&university), &subscribers)?;
    let outcome = run_scenario(&mut tb, &scenario);
    let transcript = match &outcome {
        Ok(t) => t,
        Err(f) => &f.transcript,
    };
    write_or_print(args.transcript.as_deref(), &transcript.to_text())?;
    if let Some(p) = &args.trace {
        std::fs::write(p, tb.sim.trace().to_text())
            .map_err(|e| Failure(format!("{}: {e}", p.display()), 2))?;
    }
    outcome.map(|_| ()).map_err(|f| Failure(f.to_string(), 1))
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let (testbed, university) = args.sim.testbed()?;
    let config = GatewayConfig {
        tokens: TokenSource::OsEntropy,
        ..GatewayConfig::sim(testbed, Some(university))
    };
    let (engine, _thread) = Engine::spawn(config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        info!("listening on {}", listener.local_addr()?);
        eprintln!("momex gateway on http://{}", listener.local_addr()?);
        momex_gateway::serve(listener, engine).await
    })?;
    Ok(())
}

fn validate(paths: &[PathBuf]) -> Result<(), Failure> {
    let mut failed = 0;
    for p in paths {
        match fixtures::validate(p) {
            Ok(kind) => println!("{}: ok ({kind})", p.display()),
            Err(e) => {
                eprintln!("{e}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure(
            format!("{failed} of {} files invalid", paths.len()),
            1,
        ));
    }
    Ok(())
}

fn demo(seed: u64) -> Result<(), Failure> {
    let run = run_demo(seed)?;
    print!("{}", run.summary());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MOMEX_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Scenario(a) => scenario(a),
        Cmd::Serve(a) => serve(a),
        Cmd::ValidateFixtures { paths } => validate(&paths),
        Cmd::Demo { seed } => demo(seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg, code)) => {
            eprintln!("momex: {msg}");
            ExitCode::from(code)
        }
    }
}
