use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forgetting::experiment::{list_scenarios, parse_config_text, run, write_outputs, ExperimentConfig};
use forgetting::Error;

#[derive(Parser)]
#[command(name = "forgetting", version, about = "Measure filter forgetting and compare it with the theoretical bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its reports.
    Run(RunArgs),
    /// List the model presets and their parameters.
    List,
}

/// Flags override the config file; they share its key names.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    /// Horizons: `N`, `A,B,C` or `START:END:STEP`.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    grid_size: Option<String>,
    #[arg(long)]
    grid_lo: Option<String>,
    #[arg(long)]
    grid_hi: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    /// `auto`, `full`, `empty` or a tube half-width.
    #[arg(long)]
    coupling_width: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Comma-separated subset of `csv,json,svg`.
    #[arg(long)]
    format: Option<String>,
    /// Whitespace-separated observations used instead of a simulated record.
    #[arg(long)]
    obs_file: Option<String>,
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    prior2: Option<String>,
    #[arg(long)]
    true_prior: Option<String>,
    /// Model parameter as `NAME=VALUE`; repeatable.
    #[arg(long = "param")]
    params: Vec<String>,
}

impl RunArgs {
    fn pairs(&self) -> Result<Vec<(String, String)>, Error> {
        let mut pairs = match &self.config {
            Some(path) => parse_config_text(&std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read {}: {e}", path.display()))
            })?)?,
            None => Vec::new(),
        };
        let flags = [
            ("scenario", &self.scenario),
            ("n", &self.n),
            ("m", &self.m),
            ("grid-size", &self.grid_size),
            ("grid-lo", &self.grid_lo),
            ("grid-hi", &self.grid_hi),
            ("seed", &self.seed),
            ("replicates", &self.replicates),
            ("coupling-width", &self.coupling_width),
            ("out", &self.out),
            ("format", &self.format),
            ("obs-file", &self.obs_file),
            ("prior", &self.prior),
            ("prior2", &self.prior2),
            ("true-prior", &self.true_prior),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                pairs.push((k.to_string(), v.clone()));
            }
        }
        pairs.extend(self.params.iter().map(|p| ("param".to_string(), p.clone())));
        Ok(pairs)
    }
}

fn run_command(args: &RunArgs) -> Result<bool, Error> {
    let cfg = ExperimentConfig::from_pairs(&args.pairs()?)?;
    let report = run(&cfg)?;
    for path in write_outputs(&report)? {
        println!("wrote {}", path.display());
    }
    for note in &report.constants.notes {
        log::warn!("{note}");
    }
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    Ok(report.violations.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", list_scenarios());
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run_command(&args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(if e.is_config() { 2 } else { 1 })
            }
        },
    }
}
