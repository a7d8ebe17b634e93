use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heintze_core::Error;
use serde::Serialize;

mod commands;
mod manifest;

#[derive(Parser)]
#[command(name = "heintze", version, about = "Parabolic visual quasimetrics and boundary maps of Heintze groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the real-part Jordan form as "lambda x size" lines.
    Rpjf(RpjfArgs),
    /// Decide whether two generators give quasiisometric groups.
    Classify(ClassifyArgs),
    /// Evaluate D_A(x, y).
    Dist(DistArgs),
    /// Q-variation scaling experiment.
    Qvar(QvarArgs),
    /// Compare a boundary map's empirical distortion with its biLipschitz bound.
    QsmapVerify(QsmapArgs),
    /// Conformality probe along the special point family of a Jordan block.
    ConformalProbe(ProbeArgs),
}

#[derive(Args, Serialize)]
pub struct RpjfArgs {
    /// Matrix file, {"rows": [[...], ...]}.
    pub matrix: PathBuf,
    /// Relative eigenvalue clustering tolerance.
    #[arg(long, default_value_t = heintze_core::spectral::DEFAULT_CLUSTER_TOL)]
    pub tol: f64,
}

#[derive(Args, Serialize)]
pub struct ClassifyArgs {
    pub matrix_a: PathBuf,
    pub matrix_b: PathBuf,
    #[arg(long, default_value_t = heintze_core::spectral::DEFAULT_CLUSTER_TOL)]
    pub tol: f64,
}

#[derive(Args, Serialize)]
pub struct DistArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    /// First point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x: String,
    /// Second point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub y: String,
    #[arg(long, default_value_t = 1e-2)]
    pub scan_step: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub t_tol: f64,
    #[arg(long, default_value_t = 5.0)]
    pub bracket_margin: f64,
}

#[derive(Args, Serialize)]
pub struct QvarArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    /// Coordinate test function, 1-based index.
    #[arg(long, conflicts_with = "ell", required_unless_present = "ell")]
    pub u: Option<usize>,
    /// Linear test function coefficients, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub ell: Option<String>,
    /// Box as "lo1,hi1;lo2,hi2;...".
    #[arg(long = "box", allow_hyphen_values = true)]
    pub bx: String,
    /// Scale grid "start:stop:step", inclusive.
    #[arg(long, allow_hyphen_values = true)]
    pub t: String,
    /// Exponents, comma separated.
    #[arg(long, default_value = "1,1.5,2")]
    pub q: String,
    /// Report path; fits go to <stem>-fits.csv beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Packing cap; defaults to HEINTZE_MAX_CELLS or 1e7.
    #[arg(long)]
    pub max_cells: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct QsmapArgs {
    /// Map file, e.g. {"kind":"shear","n":2,"C":{"knots":[[0,0],[1,1]]}}.
    #[arg(long)]
    pub map: PathBuf,
    /// Generator of the metric; defaults to the Jordan block J_n.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-width of the sampling box.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Triples for the quasisymmetry profile; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub triples: usize,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Generator lambda I + N; defaults to J_n.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Base point, comma separated; defaults to the origin.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Scales as "start:stop:step" or a comma list.
    #[arg(long, allow_hyphen_values = true, default_value = "-1:-8:-1")]
    pub t: String,
    /// CSV report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io { path: PathBuf, source: std::io::Error },
    Usage(String),
    /// Classification ran but the generators are not equivalent.
    NotEquivalent,
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::NotEquivalent => 3,
            CliError::Core(e) => match e {
                Error::Hypothesis { .. } => 2,
                Error::Solver { .. }
                | Error::Conditioning { .. }
                | Error::EigenFailure { .. }
                | Error::ExpRange { .. } => 4,
                _ => 1,
            },
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Usage(msg) => f.write_str(msg),
            CliError::NotEquivalent => f.write_str("not equivalent"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Rpjf(a) => commands::rpjf(a),
        Command::Classify(a) => commands::classify(a),
        Command::Dist(a) => commands::dist(a),
        Command::Qvar(a) => commands::qvar(a),
        Command::QsmapVerify(a) => commands::qsmap_verify(a),
        Command::ConformalProbe(a) => commands::conformal_probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::NotEquivalent) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("\nFor more information, try '--help'.");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
