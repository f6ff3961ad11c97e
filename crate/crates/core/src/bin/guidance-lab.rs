use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guidance_lab::experiment::{self, ExperimentConfig, Figure2Config, SweepSpec, TheoryConfig};
use guidance_lab::{Error, Result};

/// Guided diffusion sampling experiments on analytic targets.
#[derive(Parser)]
#[command(name = "guidance-lab", version)]
struct Cli {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one configured ensemble and score it.
    Run,
    /// Repeat a run over values of one parameter.
    Sweep {
        /// Parameter to override; falls back to the config's [sweep] table.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Closed-form variance and bias grid for the Gaussian case.
    GaussianTheory,
    /// CFG against the ideal denoiser and CFGiG on the bimodal target.
    Figure2 {
        #[arg(long)]
        chains: Option<usize>,
    },
}

fn require(config: &Option<PathBuf>) -> Result<&Path> {
    config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run => {
            let mut cfg = ExperimentConfig::from_path(require(&cli.config)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = experiment::run(&cfg, &cli.out_dir)?;
            println!("{}", out.report.to_json());
        }
        Command::Sweep { param, values } => {
            let (mut cfg, from_file) = experiment::load_with_sweep(require(&cli.config)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let spec = match (param, values, from_file) {
                (Some(parameter), Some(values), _) => SweepSpec { parameter, values },
                (None, None, Some(spec)) => spec,
                _ => return Err(Error::Config("sweep needs --param and --values, or a [sweep] table".into())),
            };
            let rows = experiment::sweep(&cfg, &spec, &cli.out_dir)?;
            println!("{} runs written to {}", rows.len(), cli.out_dir.join("aggregate.csv").display());
        }
        Command::GaussianTheory => {
            let cfg: TheoryConfig = match &cli.config {
                Some(p) => experiment::load(p)?,
                None => TheoryConfig::default(),
            };
            let rows = experiment::gaussian_theory(&cfg, &cli.out_dir)?;
            println!("{} rows written to {}", rows.len(), cli.out_dir.join(&cfg.output).display());
        }
        Command::Figure2 { chains } => {
            let mut cfg: Figure2Config = match &cli.config {
                Some(p) => experiment::load(p)?,
                None => Figure2Config::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(n) = chains {
                cfg.chains = n;
            }
            let summary = experiment::figure2(&cfg, &cli.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GUIDANCE_LAB_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
