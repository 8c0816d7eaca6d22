use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use henri::broker::Repository;
use henri_sim::{replay, run, Scenario, Transport};

#[derive(Parser)]
#[command(name = "henri-sim", about = "Multi-party negotiation simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file end to end and print the transcript.
    ///
    /// Exits 0 when the run reached agreement, 2 when it did not.
    Run {
        /// Path to a scenario JSON file.
        scenario: PathBuf,
        /// Write the transcript here instead of stdout.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Override the scenario seed (also honours HENRI_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario transport.
        #[arg(long, value_enum)]
        transport: Option<TransportArg>,
    },
    /// Re-check a transcript against the protocol state machine.
    ///
    /// Exits 0 when the transcript replays clean, 2 on divergence.
    Replay {
        /// Path to a transcript produced by `run`.
        transcript: PathBuf,
    },
    /// Serve a standalone broker speaking line-delimited JSON.
    Broker {
        /// Address to listen on, e.g. 127.0.0.1:7870.
        #[arg(long, default_value = "127.0.0.1:7870")]
        listen: String,
        /// Stop after this many connections (serves forever by default).
        #[arg(long)]
        max_connections: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TransportArg {
    Inproc,
    Tcp,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            transcript,
            seed,
            transport,
        } => {
            let mut scenario = Scenario::from_path(&scenario)
                .with_context(|| format!("loading {}", scenario.display()))?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            if let Some(transport) = transport {
                scenario.transport = match transport {
                    TransportArg::Inproc => Transport::Inproc,
                    TransportArg::Tcp => Transport::Tcp,
                };
            }
            let report = run(&scenario)?;
            let text = report.render_transcript();
            match transcript {
                Some(path) => std::fs::write(&path, &text)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            for s in &report.summaries {
                eprintln!(
                    "{}: {:?} after {} rounds, total {:.4}",
                    s.episode, s.outcome, s.rounds_used, s.total
                );
            }
            Ok(if report.agreed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Replay { transcript } => {
            let text = std::fs::read_to_string(&transcript)
                .with_context(|| format!("reading {}", transcript.display()))?;
            let report = replay(&text)?;
            match &report.first_divergence {
                None => {
                    eprintln!("clean: {} episode(s) replayed", report.episodes.len());
                    Ok(ExitCode::SUCCESS)
                }
                Some((line, reason)) => {
                    eprintln!("divergence at line {line}: {reason}");
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::Broker {
            listen,
            max_connections,
        } => {
            let listener =
                TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("broker listening on {}", listener.local_addr()?);
            henri_sim::net::serve_broker(
                listener,
                Repository::new(),
                max_connections.unwrap_or(usize::MAX),
            )?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
