//! `spock` command-line front end.

mod commands;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "spock", version, about = "Spatial confounding diagnostics and SPOCK/RHZ/HH/ICAR/LM model fitting")]
pub struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Canonical correlations between centroids and covariates, with tests.
    Diagnose(DiagnoseArgs),
    /// Project centroids orthogonally to the covariates and rebuild the graph.
    Project(ProjectArgs),
    /// Fit one model.
    Fit(FitArgs),
    /// Run a simulation study from a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct MapArgs {
    /// Centroid CSV with header id,x,y.
    #[arg(long)]
    pub map: PathBuf,
    /// Adjacency edge list, by id or 0-based index (header `i j`).
    #[arg(long)]
    pub adjacency: PathBuf,
    /// Accept areas without neighbors.
    #[arg(long)]
    pub allow_islands: bool,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset CSV with header id,y,<covariates...>.
    #[arg(long)]
    pub data: PathBuf,
    /// Do not prepend an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
    pub family: FamilyArg,
}

#[derive(Args, Debug, Clone)]
#[group(multiple = false)]
pub struct GraphArgs {
    /// Rebuild by k nearest neighbors (default).
    #[arg(long)]
    pub knn: bool,
    /// Rebuild by Delaunay triangulation.
    #[arg(long)]
    pub delaunay: bool,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub map: MapArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 999)]
    pub n_perm: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Directory for diagnostic.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub map: MapArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Same k for every area instead of its original degree.
    #[arg(long)]
    pub k_override: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub map: MapArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = SpatialFamilyArg::Icar)]
    pub spatial_family: SpatialFamilyArg,
    /// Proper CAR dependence, |rho| < 1.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Leroux mixing weight, 0 < lambda < 1.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// HH basis dimension.
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub k_override: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 2_000)]
    pub burn: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long)]
    pub seed: u64,
    /// Also write every retained draw to draws.csv.
    #[arg(long)]
    pub draws: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Study config JSON.
    pub config: PathBuf,
    /// Overrides the config's seed; one of the two is required.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum FamilyArg {
    Gaussian,
    Poisson,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MethodArg {
    Lm,
    Icar,
    Rhz,
    Hh,
    Spock,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SpatialFamilyArg {
    Icar,
    #[value(alias = "proper_car", alias = "car")]
    ProperCar,
    Leroux,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
