use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pipeobs_cli::commands::{self, GlobalOpts};

#[derive(Parser)]
#[command(
    name = "pipeobs",
    version,
    about = "Simulate pipe-network flows and synchronizing observers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output root directory (default: $PIPEOBS_OUT, else ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the scenario's grid resolution
    #[arg(long, global = true)]
    cells: Option<usize>,

    /// Override the scenario's CFL number
    #[arg(long, global = true)]
    cfl: Option<f64>,

    /// Fail instead of warning when run assumptions are violated
    #[arg(long, global = true)]
    strict: bool,

    /// Worker threads for sweep runs (default 1; single-threaded runs are
    /// bit-reproducible)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the plain system without an observer
    Simulate {
        /// Scenario config (JSON)
        scenario: PathBuf,
    },
    /// Run the twin experiment: system plus observer
    Observe {
        /// Scenario config (JSON)
        scenario: PathBuf,
        /// Measurement mode: velocity, density, massflow, or none
        #[arg(long)]
        mode: Option<String>,
        /// Observer gain
        #[arg(long)]
        mu: Option<f64>,
        /// Relative velocity perturbation applied to the observer's
        /// initial data (e.g. 0.01 for 1%)
        #[arg(long)]
        perturb: Option<f64>,
    },
    /// Solve by fixed-point iteration and report the contraction
    Picard {
        /// Scenario config (JSON)
        scenario: PathBuf,
        /// Split the horizon into this many equal windows
        #[arg(long)]
        windows: Option<usize>,
        /// Invariant bound the budget certifies
        #[arg(long, default_value_t = 0.02)]
        s_max: f64,
    },
    /// Run the observer once per parameter value
    Sweep {
        /// Scenario config (JSON)
        scenario: PathBuf,
        /// Parameter to sweep (only "mu")
        #[arg(long, default_value = "mu")]
        param: String,
        /// Values to sweep over (comma separated or repeated)
        #[arg(long, num_args = 0.., value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = GlobalOpts {
        out: cli.out,
        cells: cli.cells,
        cfl: cli.cfl,
        strict: cli.strict,
        threads: cli.threads,
    };

    let result = match &cli.command {
        Command::Simulate { scenario } => commands::cmd_simulate(scenario, &opts).map(|dir| {
            println!("simulate: wrote {}", dir.display());
        }),
        Command::Observe { scenario, mode, mu, perturb } => {
            commands::cmd_observe(scenario, &opts, mode.as_deref(), *mu, *perturb).map(|dir| {
                println!("observe: wrote {}", dir.display());
            })
        }
        Command::Picard { scenario, windows, s_max } => {
            commands::cmd_picard(scenario, &opts, *windows, *s_max).map(|dir| {
                println!("picard: contraction verified, wrote {}", dir.display());
            })
        }
        Command::Sweep { scenario, param, values } => {
            commands::cmd_sweep(scenario, &opts, param, values).map(|(dir, rows)| {
                for row in &rows {
                    match (&row.c2, &row.error) {
                        (Some(c2), _) => println!("sweep {param} = {}: c2 = {c2:.6e}", row.value),
                        (None, Some(e)) => println!("sweep {param} = {}: failed ({e})", row.value),
                        (None, None) => println!("sweep {param} = {}: no decay fit", row.value),
                    }
                }
                println!("sweep: wrote {}", dir.display());
            })
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
