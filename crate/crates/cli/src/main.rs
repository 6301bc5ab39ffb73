mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};

/// Numerical laboratory for constant-coefficient first-order operators with
/// finite-dimensional null-spaces.
#[derive(Parser)]
#[command(name = "fdnlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ellipticity margins and null-space dimensions.
    OperatorCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Poincare-Sobolev ratios over random fields and scales.
    Inequality {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fields: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        /// band_limited, piecewise or kernel.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        band: Option<f64>,
    },
    /// Decay rates of the mean-oscillation excess at sample points.
    DiffRate {
        #[command(flatten)]
        common: Common,
        /// smooth, piecewise or interface.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        exponents: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        refine_steps: Option<usize>,
    },
    /// Fourier round trip u -> Au -> u on the torus.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// band_limited or zero.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        band: Option<f64>,
        #[arg(long)]
        homogeneity: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Flat TOML file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gradient, symmetric_gradient, wirtinger or divergence.
    #[arg(long)]
    builtin: Option<String>,
    /// Operator coefficients as JSON or TOML.
    #[arg(long)]
    operator_file: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "dimV")]
    dim_v: Option<usize>,
    #[arg(long)]
    degree_cap: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn into_config(self) -> (Option<PathBuf>, RunConfig) {
        let cfg = RunConfig {
            builtin: self.builtin,
            operator_file: self.operator_file,
            n: self.n,
            dim_v: self.dim_v,
            degree_cap: self.degree_cap,
            resolution: self.resolution,
            seed: self.seed,
            out: self.out,
            ..Default::default()
        };
        (self.config, cfg)
    }
}

type Runner = fn(&RunConfig) -> anyhow::Result<String>;

fn prepare(command: Command) -> (Option<PathBuf>, RunConfig, Runner) {
    match command {
        Command::OperatorCheck { common } => {
            let (file, cfg) = common.into_config();
            (file, cfg, commands::operator_check)
        }
        Command::Inequality { common, fields, radii, kind, band } => {
            let (file, cfg) = common.into_config();
            (file, RunConfig { fields, radii, kind, band, ..cfg }, commands::inequality)
        }
        Command::DiffRate { common, variant, points, exponents, radii, trials, refine_steps } => {
            let (file, cfg) = common.into_config();
            (file, RunConfig { variant, points, exponents, radii, trials, refine_steps, ..cfg }, commands::diff_rate)
        }
        Command::Reconstruct { common, kind, band, homogeneity } => {
            let (file, cfg) = common.into_config();
            let homogeneity = homogeneity.then_some(true);
            (file, RunConfig { kind, band, homogeneity, ..cfg }, commands::reconstruct)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<fdnlab::Error>() {
            return if e.is_precondition() {
                3
            } else if e.is_input() {
                2
            } else {
                1
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (file, flags, run) = prepare(cli.command);
    let result = file
        .map(|path| RunConfig::from_file(&path))
        .transpose()
        .map_err(anyhow::Error::new)
        .and_then(|base| {
            let cfg = base.unwrap_or_default().overlaid(flags);
            run(&cfg)
        });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
