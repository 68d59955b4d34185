use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lanekoop::evaluation::TimeScope;
use lanekoop::pipeline::{self, ExperimentConfig};
use lanekoop::Result;

#[derive(Parser)]
#[command(name = "lanekoop", version, about = "Truncated-SVD EDMD on simulated lane changes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the trajectory dataset.
    Generate(Common),
    /// Fit the full-rank reference and rank-selected models.
    Identify(Common),
    /// Benchmark stored models and write the results table.
    Evaluate(Common),
    /// Run generate, identify and evaluate in sequence.
    RunAll(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Percentage points subtracted from energy thresholds before selection.
    #[arg(long)]
    energy_slack: Option<f64>,
    /// What a timed repetition covers: `solve` or `svd+solve`.
    #[arg(long)]
    time_scope: Option<TimeScope>,
    /// Use squared singular values in the energy profile.
    #[arg(long)]
    energy_squared: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => pipeline::load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(slack) = self.energy_slack {
            cfg.energy_slack = slack;
        }
        if let Some(scope) = self.time_scope {
            cfg.time_scope = scope;
        }
        cfg.energy_squared |= self.energy_squared;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.config()?;
            let out = pipeline::run_generate(&cfg)?;
            let samples: usize = out.trajectories.iter().map(|t| t.len()).sum();
            println!(
                "generated {} trajectories ({samples} samples) in {}",
                out.trajectories.len(),
                cfg.output_dir.display()
            );
        }
        Command::Identify(c) => {
            let cfg = c.config()?;
            for b in pipeline::run_identify(&cfg)? {
                let ranks: Vec<String> = b
                    .models
                    .iter()
                    .map(|m| format!("{}={}", m.rule.label(), m.rank_used))
                    .collect();
                println!("{}: m={} {}", b.data.basis, b.data.pair.columns(), ranks.join(" "));
            }
        }
        Command::Evaluate(c) => {
            let out = pipeline::run_evaluate(&c.config()?)?;
            print!("{}", out.summary);
        }
        Command::RunAll(c) => {
            let out = pipeline::run_all(&c.config()?)?;
            print!("{}", out.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
