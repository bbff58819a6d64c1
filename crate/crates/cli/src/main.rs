//! `kamtori` command line: build square matrices, solve tori, emit Poincaré
//! overlays and scan toward the separatrix.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use commands::Outcome;
use config::{ConfigError, RunConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_OBSTRUCTED: u8 = 4;

#[derive(Parser)]
#[command(name = "kamtori", version, about = "Square-matrix action-angle analysis of polynomial Hamiltonians")]
#[command(after_help = "Exit codes: 0 success, 1 runtime error, 2 invalid configuration, 3 diverged, 4 obstructed.\n\
                        The output directory can be overridden with KAMTORI_OUTPUT_DIR.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the square matrix; write its entries, diagonal audit and chain residuals.
    Matrix(Overrides),
    /// Solve one torus; write the iteration history, spectra and invariant tables.
    Solve(Overrides),
    /// Oracle sections with constant-action and KAM-invariant contours per probe.
    Poincare(Overrides),
    /// Solve a probe chain by continuation and write the convergence map.
    Scan(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long)]
    model: Option<String>,
    /// TOML model with hamiltonian or vector_field terms.
    #[arg(long)]
    model_file: Option<PathBuf>,
    #[arg(long)]
    energy: Option<f64>,
    /// Initial x0,y0,py0; p_x0 follows from the energy.
    #[arg(long, value_parser = parse_floats::<3>, allow_negative_numbers = true)]
    initial: Option<[f64; 3]>,
    /// Probe y0,py0 on x0 = 0; repeat for a chain.
    #[arg(long = "probe", value_parser = parse_floats::<2>, allow_negative_numbers = true)]
    probes: Vec<[f64; 2]>,
    #[arg(long)]
    n_s: Option<usize>,
    #[arg(long)]
    n_v: Option<usize>,
    #[arg(long)]
    n_v_max: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tol_g: Option<f64>,
    #[arg(long)]
    tol_im: Option<f64>,
    #[arg(long)]
    tol_spectrum: Option<f64>,
    /// Earlier seed.json to continue from.
    #[arg(long)]
    seed: Option<PathBuf>,
    /// Integration time of the irregularity test per scan probe; 0 skips it.
    #[arg(long)]
    chaos_t_end: Option<f64>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

/// `N` comma-separated numbers.
fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected {N} comma-separated numbers, got {s:?}"))
}

impl Overrides {
    fn resolve(self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(model => model, energy => energy, n_s => solve.n_s, n_v => solve.n_v, n_v_max => solve.n_v_max,
             grid => solve.grid, max_iterations => solve.max_iterations, tol_g => solve.tol_g,
             tol_im => solve.tol_im, tol_spectrum => solve.tol_spectrum, chaos_t_end => chaos_t_end);
        if self.model_file.is_some() {
            cfg.model_file = self.model_file;
        }
        if let Some(w) = self.window {
            cfg.solve.window = Some(w);
        }
        if self.initial.is_some() {
            cfg.initial = self.initial;
        }
        if !self.probes.is_empty() {
            cfg.probes = Some(self.probes);
        }
        if self.seed.is_some() {
            cfg.seed_solution = self.seed;
        }
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, overrides): (fn(&RunConfig) -> anyhow::Result<Outcome>, Overrides) = match cli.command {
        Command::Matrix(o) => (commands::matrix, o),
        Command::Solve(o) => (commands::solve_cmd, o),
        Command::Poincare(o) => (commands::poincare, o),
        Command::Scan(o) => (commands::scan, o),
    };
    let result = overrides.resolve().map_err(anyhow::Error::from).and_then(|cfg| run(&cfg));
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(EXIT_DIVERGED),
        Ok(Outcome::Obstructed) => ExitCode::from(EXIT_OBSTRUCTED),
        Err(e) => match e.downcast_ref::<ConfigError>() {
            Some(c) => {
                eprintln!("invalid configuration: {c}");
                ExitCode::from(EXIT_CONFIG)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_FAILURE)
            }
        },
    }
}
