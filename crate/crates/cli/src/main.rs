//! `immidx`: index of immersions R^n -> R^2n fixed at infinity.
//!
//! Immersions are read from JSON builder descriptors:
//!
//! ```json
//! {"builder": "trivial", "n": 2}
//! {"builder": "one_loop_curve"}
//! {"builder": "lift", "base": {"builder": "one_loop_curve"},
//!  "bump": {"center": 0.25, "halfwidth": 0.75, "amplitude": 4.0}}
//! {"builder": "concat", "left": {..}, "right": {..}}
//! {"builder": "perturb", "base": {..}, "component": 3, "amplitude": 0.01,
//!  "center": [0.1, 0.2], "radius": 0.5}
//! {"builder": "mirror", "base": {..}, "component": 4}
//! ```
//!
//! `bump` is optional for `lift`. Components are 1-based; `mirror` only
//! accepts components `n+1..=2n`.
//!
//! `--config FILE` takes a JSON object with any of `solver`, `quadrature`,
//! `laplace` and `seed`; each section may be partial.
//!
//! Every report is a JSON object with `"schema": 1`. Exit codes: 0 when all
//! checks pass, 2 when a numerical check fails, 1 for usage or configuration
//! errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;
mod suite;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::warn;

use crate::commands::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "immidx",
    version,
    about = "Index of immersions R^n -> R^2n fixed at infinity"
)]
struct Cli {
    /// JSON file with solver/quadrature/laplace overrides and a seed.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index by counting signed double points and by quadrature.
    Index {
        #[arg(long)]
        spec: PathBuf,
        /// Absolute and relative tolerance of the index quadrature.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// List the transversal self-intersections.
    Intersections {
        #[arg(long)]
        spec: PathBuf,
        /// Seeds per axis of the Newton search grid.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Finite-difference exterior derivative of the Stiefel form at random points.
    CheckForm {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Relative finite-difference step.
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// One Richardson extrapolation level.
        #[arg(long)]
        richardson: bool,
        /// Check a deliberately non-closed form instead.
        #[arg(long)]
        perturb: bool,
    },
    /// Laplace integral J(f) and its double-point decomposition.
    CheckLaplace {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![25.0, 50.0, 100.0])]
        lambdas: Vec<f64>,
    },
    /// Compare analytic derivatives with finite differences.
    Validate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Largest accepted deviation.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Value, differential and index integrands at one point.
    Eval {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
    },
    /// Built-in example descriptors.
    Examples {
        #[command(subcommand)]
        action: ExamplesAction,
    },
}

#[derive(Subcommand, Debug)]
enum ExamplesAction {
    List,
    Emit { name: String },
}

fn configure_threads() {
    let Ok(raw) = std::env::var("IMMIDX_THREADS") else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(k) if k > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
            {
                warn!("could not size the worker pool: {e}");
            }
        }
        _ => warn!("ignoring IMMIDX_THREADS={raw:?}: expected a positive integer"),
    }
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let overrides = commands::Overrides::load(cli.config.as_deref())?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Index { spec, tol } => commands::index(&spec, tol, &overrides, out),
        Command::Intersections { spec, grid } => {
            commands::intersections(&spec, grid, &overrides, out)
        }
        Command::CheckForm {
            n,
            samples,
            seed,
            h,
            threshold,
            richardson,
            perturb,
        } => commands::check_form(
            commands::FormArgs {
                n,
                samples,
                seed,
                h,
                threshold,
                richardson,
                perturb,
            },
            &overrides,
            out,
        ),
        Command::CheckLaplace { spec, lambdas } => {
            commands::check_laplace(&spec, &lambdas, &overrides, out)
        }
        Command::Validate {
            spec,
            h,
            samples,
            seed,
            tol,
        } => commands::validate(&spec, h, samples, seed, tol, &overrides, out),
        Command::Eval { spec, x } => commands::eval(&spec, &x, out),
        Command::Examples { action } => match action {
            ExamplesAction::List => commands::examples_list(out),
            ExamplesAction::Emit { name } => commands::examples_emit(&name, out),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors; here 2 means a failed check.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    configure_threads();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
