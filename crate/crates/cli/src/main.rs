use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use linkrl::harness::{self, AgentTarget, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "linkrl", version, about = "Offline RL experiments for toy link adaptation")]
struct Cli {
    /// Experiment config (TOML dotted keys); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed added to every derived seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Log datasets with the configured behaviour policy at each epsilon.
    Collect,
    /// Solve the environment by value iteration.
    TrainOracle,
    /// Train one agent: bc, bcq, cql, dqn or dt.
    TrainAgent { agent: AgentTarget },
    /// Evaluate every trained policy plus the oracle and OLLA baselines.
    Eval,
    /// Evaluate the DT across conditioning quantiles and CCTR.
    SweepConditioning,
    /// Leaderboard of all policies.
    Compare,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("linkrl: error: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("linkrl: error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let cmd = match cli.command {
        Cmd::Collect => Command::Collect,
        Cmd::TrainOracle => Command::TrainOracle,
        Cmd::TrainAgent { agent } => Command::TrainAgent(agent),
        Cmd::Eval => Command::Eval,
        Cmd::SweepConditioning => Command::SweepConditioning,
        Cmd::Compare => Command::Compare,
    };
    let written = harness::run(cmd, &cfg, &out).with_context(|| cmd.name())?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
