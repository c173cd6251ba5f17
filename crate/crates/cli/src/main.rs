use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stable_gvar_cli::fit::{cmd_fit, cmd_simulate};
use stable_gvar_cli::report::{cmd_forecast, cmd_prior_check, cmd_summarize};
use stable_gvar_cli::{CliError, CliResult, Config};

/// Bayesian sparse stationary graphical vector autoregressions.
#[derive(Parser)]
#[command(name = "stable-gvar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate datasets and truth files over the configured grid.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to a CSV series.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampler: SamplerFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue an interrupted fit from its checkpoints.
        #[arg(long)]
        resume: bool,
        /// Iterations between checkpoints.
        #[arg(long, default_value_t = 1000)]
        checkpoint_every: u64,
    },
    /// Score rolling hold-out forecasts and summarise the predictive.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Directory written by `fit`.
        run_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated forecast horizons.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edge probabilities, graph JSON and recovery metrics.
    Summarize {
        /// Directory written by `fit`.
        run_dir: PathBuf,
        /// Truth file written by `simulate`.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample with the likelihood off and test the draws against the prior.
    PriorCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampler: SamplerFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Configuration utilities.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print the full default configuration.
    Init {
        /// Write to a file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> CliResult<Config> {
        match &self.config {
            Some(path) => Config::load(path),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Args)]
struct SamplerFlags {
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Lag order.
    #[arg(long)]
    p: Option<usize>,
}

impl SamplerFlags {
    fn apply(&self, cfg: &mut Config) {
        let run = &mut cfg.run;
        run.n_chains = self.chains.unwrap_or(run.n_chains);
        run.n_warmup = self.warmup.unwrap_or(run.n_warmup);
        run.n_samples = self.samples.unwrap_or(run.n_samples);
        run.thin = self.thin.unwrap_or(run.thin);
        cfg.model.p = self.p.unwrap_or(cfg.model.p);
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common, out } => {
            let mut cfg = common.load()?;
            cfg.simulate.seed = common.seed.unwrap_or(cfg.simulate.seed);
            cfg.validate()?;
            let rows = cmd_simulate(&cfg, &out)?;
            eprintln!("wrote {} datasets to {}", rows.len(), out.display());
        }
        Command::Fit {
            common,
            sampler,
            data,
            out,
            resume,
            checkpoint_every,
        } => {
            let mut cfg = common.load()?;
            cfg.run.seed = common.seed.unwrap_or(cfg.run.seed);
            sampler.apply(&mut cfg);
            cfg.validate()?;
            let meta = cmd_fit(&cfg, &data, &out, resume, checkpoint_every)?;
            for c in &meta.chains {
                eprintln!(
                    "chain {}: {} draws, {} divergences, step size {:.4}, {:.1}s",
                    c.chain,
                    c.draws,
                    c.diagnostics.divergences,
                    c.diagnostics.step_size,
                    c.duration_secs
                );
            }
        }
        Command::Forecast {
            common,
            run_dir,
            data,
            horizons,
            out,
        } => {
            let mut cfg = common.load()?;
            cfg.forecast.seed = common.seed.unwrap_or(cfg.forecast.seed);
            if let Some(h) = horizons {
                cfg.forecast.horizons = h;
            }
            cfg.validate()?;
            let res = cmd_forecast(&cfg, &run_dir, &data, &out)?;
            print_json(&res.scores)?;
        }
        Command::Summarize {
            run_dir,
            truth,
            out,
        } => {
            let report = cmd_summarize(&run_dir, truth.as_deref(), &out)?;
            print_json(&report)?;
        }
        Command::PriorCheck {
            common,
            sampler,
            out,
        } => {
            let mut cfg = common.load()?;
            cfg.run.seed = common.seed.unwrap_or(cfg.run.seed);
            sampler.apply(&mut cfg);
            cfg.validate()?;
            let report = cmd_prior_check(&cfg, &out)?;
            eprintln!("{} draws, {} flagged", report.n_draws, report.n_flagged);
            if !report.pass {
                return Err(CliError::Numerical(
                    "prior-check flagged a discrepancy; see prior_check.json".into(),
                ));
            }
        }
        Command::Config(ConfigCommand::Init { out }) => {
            let text = Config::default().to_toml();
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
