use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use youngfem_cli::commands::{
    cmd_check, cmd_ensemble, cmd_export, cmd_run, cmd_study, CheckRequest, Outcome,
};
use youngfem_cli::{exit, CliError, CliResult, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "youngfem",
    version,
    about = "Young-measure FEM solver for forward-backward parabolic systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<String>,
    /// Seed; overrides the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensembles and studies.
    #[arg(long)]
    threads: Option<usize>,
    /// Run nonlinearities or parameters outside the analysed class, with warnings.
    #[arg(long)]
    allow_uncovered: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Single trajectory with energy ledger.
    Run(Common),
    /// Perturbed ensemble and its empirical Young measure.
    Ensemble(Common),
    /// Refinement and Monte-Carlo variance studies.
    Study(Common),
    /// Growth, monotonicity, E_r and Lipschitz diagnostics.
    Check {
        #[command(flatten)]
        common: Common,
        /// Registry name, used when no config is given or to override it.
        #[arg(long)]
        nonlinearity: Option<String>,
    },
    /// Histograms from a measure export.
    Export {
        #[command(flatten)]
        common: Common,
        /// A `measures.json` written by the ensemble command.
        #[arg(long)]
        measures: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        out: c.out.clone(),
        seed: c.seed,
        allow_uncovered: c.allow_uncovered,
    }
}

fn load(c: &Common) -> CliResult<RunConfig> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    RunConfig::load(path)
}

fn setup_threads(c: &Common) -> CliResult<()> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> CliResult<Outcome> {
    match cmd {
        Command::Run(c) => {
            setup_threads(&c)?;
            cmd_run(&load(&c)?, &overrides(&c))
        }
        Command::Ensemble(c) => {
            setup_threads(&c)?;
            cmd_ensemble(&load(&c)?, &overrides(&c))
        }
        Command::Study(c) => {
            setup_threads(&c)?;
            cmd_study(&load(&c)?, &overrides(&c))
        }
        Command::Check {
            common,
            nonlinearity,
        } => {
            setup_threads(&common)?;
            let mut req = match (&common.config, &nonlinearity) {
                (Some(_), _) => CheckRequest::from_config(&load(&common)?),
                (None, Some(name)) => CheckRequest::from_name(name),
                (None, None) => {
                    return Err(CliError::Config(
                        "check needs --config or --nonlinearity".into(),
                    ))
                }
            };
            if let Some(name) = nonlinearity {
                if name != req.nonlinearity {
                    req.nonlinearity = name;
                    req.growth = None;
                }
            }
            cmd_check(&req, &overrides(&common))
        }
        Command::Export {
            common,
            measures,
            bins,
        } => cmd_export(&measures, bins, &overrides(&common)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", outcome.summary);
            println!("artifacts in {}", outcome.dir.display());
            let code = if outcome.pass { exit::OK } else { exit::GATE };
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
