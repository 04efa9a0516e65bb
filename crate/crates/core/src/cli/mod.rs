//! The `cgvae` command line.
//!
//! Every subcommand resolves its settings from defaults, an optional
//! `--config` file of `key=value` lines and flags (in increasing priority),
//! writes them to `resolved_config.txt` in the output directory and then
//! writes its CSV files and a `report.txt` next to it.
//!
//! Exit codes: 0 success, 1 failed verification or runtime error, 2 usage
//! error, 3 numerical divergence.

mod commands;
mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
pub use settings::{parse_config_text, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Run(Error::InvalidArgument(_)) => EXIT_USAGE,
            CliError::Run(Error::NonFinite { .. }) => EXIT_DIVERGED,
            CliError::Run(_) => EXIT_FAILED,
        }
    }
}

/// How a subcommand finished.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Diverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => EXIT_OK,
            Outcome::Fail => EXIT_FAILED,
            Outcome::Diverged => EXIT_DIVERGED,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cgvae", version, about = "Coarse-grained BPEF VAEs and their checks")]
pub struct Cli {
    /// Root seed of every random stream.
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Output directory (default: `cgvae-out/<subcommand>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// File of `key=value` lines; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for Monte Carlo loops; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a VAE and report its free energy on the test split.
    Train(TrainArgs),
    /// Information monotonicity and the Concrete argmax property.
    VerifyTheorem1(Theorem1Args),
    /// Lower-bound chain for the KL term on random exponential families.
    VerifyTheorem2(Theorem2Args),
    /// Category KL against the Monte Carlo KL of the coarse-grained latents.
    BoundSweep(SweepArgs),
    /// Histograms of Concrete samples over the 2-simplex.
    Density(DensityArgs),
    /// Finite-difference check of the free-energy gradient.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// gauss, cat or cgbpef.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long = "d")]
    pub d: Option<String>,
    #[arg(long = "M")]
    pub m: Option<String>,
    #[arg(long = "R")]
    pub r: Option<String>,
    #[arg(long = "C")]
    pub c: Option<String>,
    #[arg(long = "L")]
    pub l: Option<String>,
    #[arg(long)]
    pub tmin: Option<String>,
    #[arg(long)]
    pub tmax: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub iters: Option<String>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    pub hidden: Option<String>,
    /// IDX image file; synthetic glyphs are used when empty.
    #[arg(long = "mnist-images")]
    pub mnist_images: Option<String>,
    /// Items kept from the IDX file.
    #[arg(long)]
    pub limit: Option<String>,
    /// Synthetic glyphs per class.
    #[arg(long = "per-class")]
    pub per_class: Option<String>,
    /// Pixel flip probability of the synthetic glyphs.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long = "valid-every")]
    pub valid_every: Option<String>,
    #[arg(long = "eval-samples")]
    pub eval_samples: Option<String>,
}

#[derive(Debug, Args)]
pub struct Theorem1Args {
    #[arg(long)]
    pub triples: Option<String>,
    #[arg(long = "max-support")]
    pub max_support: Option<String>,
    /// Concrete draws per temperature for the argmax check.
    #[arg(long)]
    pub samples: Option<String>,
    /// Category probabilities for the argmax check, e.g. `1/2,1/3,1/6`.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub temperatures: Option<String>,
    #[arg(long)]
    pub tolerance: Option<String>,
    /// `none` or `identical` (q = p in every triple).
    #[arg(long)]
    pub fixture: Option<String>,
}

#[derive(Debug, Args)]
pub struct Theorem2Args {
    #[arg(long)]
    pub instances: Option<String>,
    #[arg(long = "max-support")]
    pub max_support: Option<String>,
    #[arg(long = "max-stats")]
    pub max_stats: Option<String>,
    #[arg(long = "max-members")]
    pub max_members: Option<String>,
    /// `none` or `identical` (all members and the reference coincide).
    #[arg(long)]
    pub fixture: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `dirichlet(a)`, `uniform` or `fixed-uniform`.
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long = "R")]
    pub r: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long)]
    pub bins: Option<String>,
    #[arg(long)]
    pub temperatures: Option<String>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub samples: Option<String>,
    /// Subdivisions per simplex edge.
    #[arg(long)]
    pub bins: Option<String>,
    #[arg(long)]
    pub temperatures: Option<String>,
    /// Cells below this count are left out of the symmetry statistic.
    #[arg(long = "min-count")]
    pub min_count: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Comma-separated model kinds.
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long = "d")]
    pub d: Option<String>,
    #[arg(long = "M")]
    pub m: Option<String>,
    #[arg(long = "R")]
    pub r: Option<String>,
    #[arg(long = "C")]
    pub c: Option<String>,
    #[arg(long = "L")]
    pub l: Option<String>,
    #[arg(long)]
    pub tmin: Option<String>,
    #[arg(long)]
    pub tolerance: Option<String>,
    /// Test hook: perturb one analytic gradient coordinate.
    #[arg(long = "corrupt-gradient", hide = true)]
    pub corrupt_gradient: bool,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match commands::dispatch(&cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
