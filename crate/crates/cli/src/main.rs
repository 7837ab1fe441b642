use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use smart_pce::ResponseVariant;

mod commands;
mod config;

use commands::DesignArg;
use config::Config;

#[derive(Parser)]
#[command(name = "smart-pce", version, about = "Compliance-stratified EDTR estimation for two-stage SMARTs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    A4,
    A5,
}

impl From<Variant> for ResponseVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::A4 => ResponseVariant::A4,
            Variant::A5 => ResponseVariant::A5,
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trial with its ground truth.
    Simulate {
        /// engage, general, or a scenario TOML file.
        #[arg(long, default_value = "engage")]
        design: DesignArg,
        #[arg(long)]
        interaction: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run the Gibbs sampler on a dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// engage, general, or a design TOML file.
        #[arg(long, default_value = "engage")]
        design: DesignArg,
        #[arg(long)]
        interaction: bool,
        #[arg(long, value_enum)]
        response_variant: Option<Variant>,
        #[command(flatten)]
        common: Common,
    },
    /// Compliance-class PCEs, best sets, WAIC, ITT means and plot grids from a fit.
    Estimate {
        /// Output directory of a previous fit.
        run: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        /// Comma-separated classes, e.g. "25-50,50-75,75-100,100" (percent).
        #[arg(long)]
        classes: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Repeat simulate-and-fit and tabulate bias and standard error.
    Replicate {
        /// engage, general, or a scenario TOML file.
        #[arg(long, default_value = "engage")]
        design: DesignArg,
        #[arg(long)]
        interaction: bool,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, value_enum)]
        response_variant: Option<Variant>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { design, interaction, common } => {
            let config = Config::load(common.config.as_deref())?;
            let scenario = commands::resolve_scenario(&design, interaction, common.seed, &config)?;
            commands::simulate(&scenario, &config, &common.out)
        }
        Command::Fit { data, design, interaction, response_variant, common } => {
            let mut config = Config::load(common.config.as_deref())?;
            if let Some(s) = common.seed {
                config.sampler.seed = s;
            }
            commands::apply_variant(&mut config, response_variant.map(Into::into));
            let design = commands::resolve_design(&design, interaction)?;
            commands::fit(&data, &design, &config, &common.out)
        }
        Command::Estimate { run, alpha, classes, common } => {
            let mut config = Config::load(common.config.as_deref())?;
            if let Some(a) = alpha {
                config.estimate.alpha = a;
            }
            if let Some(c) = classes {
                config.estimate.classes = c;
            }
            if let Some(s) = common.seed {
                config.estimate.seed = s;
            }
            commands::estimate(&run, &config, &common.out)
        }
        Command::Replicate { design, interaction, replicates, response_variant, common } => {
            let mut config = Config::load(common.config.as_deref())?;
            if let Some(r) = replicates {
                config.replicate.replicates = r;
            }
            commands::apply_variant(&mut config, response_variant.map(Into::into));
            let scenario = commands::resolve_scenario(&design, interaction, None, &config)?;
            let base = common.seed.unwrap_or(config.sampler.seed);
            commands::replicate(&scenario, base, &config, &common.out)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<smart_pce::Error>())
        .any(smart_pce::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
