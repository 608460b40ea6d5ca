use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};

use chitrace_cli::runners::{self, Overrides};

#[derive(Parser)]
#[command(
    name = "chitrace",
    about = "Process-matrix characterization of open quantum systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the configured one, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 uses the rayon default).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate chi from stochastic trajectories and write chi.json.
    Characterize(CommonArgs),
    /// Compute the exact chi by density-matrix propagation, chi_oracle.json.
    Oracle(CommonArgs),
    /// Repeat ensembles over a ladder of sizes, convergence.csv.
    Converge(CommonArgs),
    /// Scan gate parameters on a grid, sweep.csv plus delta_chi.csv.
    Sweep(CommonArgs),
}

fn main() {
    // The dense-matrix oracle calls BLAS internally; threaded BLAS fights
    // with rayon for cores and breaks run-to-run timing, so pin it unless
    // the user chose otherwise.
    if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
        std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = Cli::parse();
    let (args, run): (&CommonArgs, fn(&std::path::Path, &Overrides) -> _) = match &cli.command {
        Command::Characterize(a) => (a, runners::cmd_characterize),
        Command::Oracle(a) => (a, runners::cmd_oracle),
        Command::Converge(a) => (a, runners::cmd_converge),
        Command::Sweep(a) => (a, runners::cmd_sweep),
    };
    let overrides = Overrides {
        seed: args.seed,
        out: args.out.clone(),
        workers: args.workers,
    };
    if let Err(failure) = run(&args.config, &overrides) {
        eprintln!("error: {failure}");
        process::exit(failure.exit_code());
    }
}
