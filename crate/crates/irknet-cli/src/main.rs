//! Command-line entry point: tableau generation, dataset sampling,
//! training, reference solving, simulation, ensemble evaluation, scheme
//! comparison, and experiment grids.
//!
//! Exit status 2 marks configuration or flag parse errors (with line and
//! field diagnostics); status 1 marks runtime failures with the underlying
//! numerical error surfaced.

mod cmds;
mod config;
mod plot;

use clap::{Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or flag value; exit status 2.
    Usage(String),
    /// Numerical or I/O failure at runtime; exit status 1.
    Run(irknet::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<irknet::Error> for CliError {
    fn from(e: irknet::Error) -> CliError {
        match e {
            // Line 0 marks command-line values with no file position.
            irknet::Error::Parse { line: 0, message } => CliError::Usage(message),
            irknet::Error::Parse { line, message } => {
                CliError::Usage(format!("line {line}: {message}"))
            }
            other => CliError::Run(other),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "irknet",
    version,
    about = "Implicit Runge-Kutta collocation networks for semi-explicit index-1 DAEs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a Butcher tableau file and verify its order conditions.
    Tableau {
        /// gauss or backward_euler
        #[arg(long, default_value = "gauss")]
        scheme: String,
        #[arg(long, default_value_t = 3)]
        stages: usize,
        /// Output file (default: $IRKNET_OUT/<scheme>_<stages>.tableau)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample initial conditions into a CSV dataset.
    Datagen {
        /// three_bus or linear_test
        #[arg(long, default_value = "three_bus")]
        model: String,
        #[arg(long, default_value_t = 128)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-state bounds "lo:hi, lo:hi, ..." (default: model ranges)
        #[arg(long, allow_hyphen_values = true)]
        ranges: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train stage-prediction networks with the penalty method.
    Train {
        /// Configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path; the log, test log, and manifest sit beside it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override one config entry: section.key=value (repeatable).
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Solve a model with the classical implicit Runge-Kutta solver.
    Oracle {
        #[arg(long, default_value = "three_bus")]
        model: String,
        /// Initial dynamic states, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        ic: String,
        /// Algebraic branch guess, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        zguess: String,
        /// Integration horizon in seconds.
        #[arg(long, allow_negative_numbers = true)]
        tend: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value = "gauss")]
        scheme: String,
        #[arg(long, default_value_t = 3)]
        stages: usize,
    },
    /// Roll a trained checkpoint forward over many steps.
    Simulate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        ic: String,
        #[arg(long)]
        steps: usize,
        /// oracle (score against the reference solver) or none.
        #[arg(long, default_value = "oracle")]
        truth: String,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "three_bus")]
        model: String,
        #[arg(long, allow_hyphen_values = true)]
        zguess: Option<String>,
        /// Also write per-state SVG line plots.
        #[arg(long)]
        svg: bool,
        #[arg(long, default_value_t = 1e-3)]
        oracle_h: f64,
        #[arg(long, default_value_t = 1e-12)]
        oracle_tol: f64,
    },
    /// Ensemble error statistics over sampled initial conditions.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        ensemble: usize,
        #[arg(long, default_value_t = 80)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "three_bus")]
        model: String,
        /// Sampling seed for the evaluation set.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, allow_hyphen_values = true)]
        zguess: Option<String>,
        #[arg(long, default_value_t = 1e-3)]
        oracle_h: f64,
        #[arg(long, default_value_t = 1e-12)]
        oracle_tol: f64,
    },
    /// Compare several checkpoints' error growth on one initial condition.
    Compare {
        /// Checkpoint files, comma-separated.
        #[arg(long, value_delimiter = ',')]
        ckpts: Vec<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        ic: String,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "three_bus")]
        model: String,
        #[arg(long, allow_hyphen_values = true)]
        zguess: Option<String>,
        /// Also write per-state SVG error curves.
        #[arg(long)]
        svg: bool,
        #[arg(long, default_value_t = 1e-3)]
        oracle_h: f64,
        #[arg(long, default_value_t = 1e-12)]
        oracle_tol: f64,
    },
    /// Train one model per point of a width/depth/size/mode grid.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Tableau { scheme, stages, out } => cmds::tableau(&scheme, stages, out),
        Cmd::Datagen {
            model,
            count,
            seed,
            ranges,
            out,
        } => cmds::datagen(&model, count, seed, ranges, out),
        Cmd::Train { config, out, set } => cmds::train(config, out, &set),
        Cmd::Oracle {
            model,
            ic,
            zguess,
            tend,
            out,
            h,
            tol,
            scheme,
            stages,
        } => cmds::oracle(&model, &ic, &zguess, tend, out, h, tol, &scheme, stages),
        Cmd::Simulate {
            ckpt,
            ic,
            steps,
            truth,
            out,
            model,
            zguess,
            svg,
            oracle_h,
            oracle_tol,
        } => cmds::simulate_cmd(
            &ckpt, &ic, steps, &truth, out, &model, zguess, svg, oracle_h, oracle_tol,
        ),
        Cmd::Evaluate {
            ckpt,
            ensemble,
            steps,
            out,
            model,
            seed,
            zguess,
            oracle_h,
            oracle_tol,
        } => cmds::evaluate(
            &ckpt, ensemble, steps, out, &model, seed, zguess, oracle_h, oracle_tol,
        ),
        Cmd::Compare {
            ckpts,
            ic,
            steps,
            out,
            model,
            zguess,
            svg,
            oracle_h,
            oracle_tol,
        } => cmds::compare(
            &ckpts, &ic, steps, out, &model, zguess, svg, oracle_h, oracle_tol,
        ),
        Cmd::Grid { config, out, set } => cmds::grid(&config, out, &set),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.cmd) {
        eprintln!("error: {e}");
        let code = match e {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        };
        std::process::exit(code);
    }
}
