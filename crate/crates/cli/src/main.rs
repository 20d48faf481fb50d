use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use forrelation_core::experiments::{self, Profile, SamplerKind};
use forrelation_core::{EpsilonSetting, ExperimentConfig, ExperimentKind, OutputFormat};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Concentration,
    TauTail,
    Rounding,
    Dynkin,
    Advantage,
    Suite,
}

impl From<Command> for ExperimentKind {
    fn from(c: Command) -> Self {
        match c {
            Command::Concentration => ExperimentKind::Concentration,
            Command::TauTail => ExperimentKind::TauTail,
            Command::Rounding => ExperimentKind::Rounding,
            Command::Dynkin => ExperimentKind::Dynkin,
            Command::Advantage => ExperimentKind::Advantage,
            Command::Suite => ExperimentKind::Suite,
        }
    }
}

/// Seeded experiments on stopped Brownian motion and k-XOR Forrelation.
///
/// Flags override the matching keys of the config file. The exit status is
/// 0 when every verdict passes, 1 when any fails and 2 on errors.
#[derive(Debug, Parser)]
#[command(name = "forrelab", version)]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Command,

    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Block width N = 2n (n a power of two).
    #[arg(long)]
    n: Option<usize>,

    /// Number of blocks.
    #[arg(long)]
    k: Option<usize>,

    /// Horizon: a number in (0, 1] or "paper" for 1/(28 k² ln N).
    #[arg(long)]
    epsilon: Option<String>,

    /// Path grid step.
    #[arg(long)]
    delta: Option<f64>,

    #[arg(long)]
    trials: Option<u64>,

    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, env = "FORRELAB_WORKERS")]
    workers: Option<usize>,

    /// Write the table here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,

    /// Suite size.
    #[arg(long, value_parser = ["quick", "full"])]
    profile: Option<String>,

    /// Block sampler for concentration, rounding and advantage runs.
    #[arg(long, value_parser = ["path", "endpoint"])]
    sampler: Option<String>,
}

impl Cli {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        c.experiment = self.command.into();
        if let Some(n) = self.n {
            c.block_dim = n;
        }
        if let Some(k) = self.k {
            c.k = k;
        }
        if let Some(e) = &self.epsilon {
            c.epsilon = e.parse::<EpsilonSetting>()?;
        }
        if self.delta.is_some() {
            c.delta = self.delta;
        }
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        if self.output.is_some() {
            c.output = self.output.clone();
        }
        if let Some(f) = &self.format {
            c.format = f.parse::<OutputFormat>()?;
        }
        if let Some(p) = &self.profile {
            c.profile = p.parse::<Profile>()?;
        }
        if let Some(s) = &self.sampler {
            c.sampler = Some(s.parse::<SamplerKind>()?);
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let config = cli.config()?;
    let table = experiments::run(&config)?;
    match &config.output {
        Some(path) => table
            .write_to_path(path, config.format)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", table.render(config.format)?),
    }
    for row in table.failures() {
        eprintln!("FAIL {}", row.metric);
    }
    Ok(table.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
