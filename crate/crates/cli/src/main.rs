//! Command-line surface: generate / mask / impute / run / evaluate / bench /
//! trace. Exit codes: 0 success, 1 configuration error, 2 runtime failure
//! (for `bench`: every cell failed).

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use missdag_cli::{bench, commands, AppError, RunArgs};

#[derive(Parser)]
#[command(
    name = "missdag",
    version,
    about = "Causal DAG learning from incomplete data"
)]
struct Cli {
    /// Worker threads for grid execution (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic truth graph, clean data, and masked data.
    Generate {
        /// Experiment spec (flat key = value sections, or JSON).
        #[arg(long)]
        config: PathBuf,
        /// Repeat seed; defaults to the first seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask a complete CSV with a missingness mechanism.
    Mask {
        #[arg(long)]
        data: PathBuf,
        /// mcar | mar | mnar
        #[arg(long)]
        mechanism: String,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0.3)]
        fully_observed_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete a masked CSV with a baseline imputer.
    Impute {
        #[arg(long)]
        data: PathBuf,
        /// mean | gaussian-em | listwise
        #[arg(long)]
        method: String,
        /// EM iterations (gaussian-em only).
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the EM learner on masked data (or a complete-data fit on a
    /// pre-imputed CSV) and write graph + trace artifacts.
    Run(RunArgs),
    /// Score an estimated graph against a truth graph (edge-list CSVs).
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Node count when it cannot be inferred from the edge lists.
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full benchmark grid from a spec file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the spec's [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-export per-iteration CSVs from a completed run's artifacts.
    Trace {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Truth graph for per-iteration SHD and weight-distance columns.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
    },
}

fn dispatch(cli: Cli) -> Result<i32, AppError> {
    match &cli.command {
        Command::Generate { config, seed, out } => {
            commands::generate(config, *seed, out)?;
            Ok(0)
        }
        Command::Mask {
            data,
            mechanism,
            rate,
            fully_observed_fraction,
            seed,
            out,
        } => {
            commands::mask(data, mechanism, *rate, *fully_observed_fraction, *seed, out)?;
            Ok(0)
        }
        Command::Impute {
            data,
            method,
            iters,
            out,
        } => {
            commands::impute(data, method, *iters, out)?;
            Ok(0)
        }
        Command::Run(args) => {
            commands::run(args)?;
            Ok(0)
        }
        Command::Evaluate { est, truth, d, out } => {
            commands::evaluate(est, truth, *d, out)?;
            Ok(0)
        }
        Command::Bench { config, out } => bench::run_bench(config, out.as_deref()),
        Command::Trace {
            run_dir,
            out,
            truth,
            threshold,
        } => {
            commands::trace(run_dir, out, truth.as_deref(), *threshold)?;
            Ok(0)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are not errors.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };

    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads > 0 {
        eprintln!("warning: built without the parallel feature; --threads ignored");
    }

    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(err @ AppError::Config(_)) => {
            eprintln!("{err}");
            std::process::exit(1);
        }
        Err(err @ AppError::Runtime(_)) => {
            eprintln!("{err}");
            std::process::exit(2);
        }
    }
}
