//! Command-line workflow around [`fricest_core`]: simulate a rig, filter and
//! label recordings, fit the friction baseline, train the hybrid estimator,
//! run inference, and score the results. Every stage reads and writes plain
//! files (CSV for series, JSON for models and reports) so any intermediate
//! can be inspected, diffed, or swapped for real measurements.
//!
//! Outputs carry provenance: model and report JSON embed a provenance block,
//! CSV outputs get a `<file>.provenance.json` sidecar. Given equal inputs
//! and seeds, every stage rewrites its artifacts byte for byte (latency
//! measurements excepted).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use fricest_core::io::FormatError;
use fricest_core::Error as CoreError;

/// Exit code for malformed invocations.
const EXIT_USAGE: i32 = 1;
/// Exit code for unreadable, malformed, or physically inconsistent data.
const EXIT_DATA: i32 = 2;
/// Exit code for numeric failures inside an otherwise valid run.
const EXIT_NUMERIC: i32 = 3;

#[derive(Parser)]
#[command(
    name = "fricest",
    version,
    about = "Friction-force estimation for hydraulic cylinders",
    after_help = "Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.",
    arg_required_else_help = true
)]
struct Cli {
    /// Seed for the stochastic stages (sensor noise, training).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for training and the forest (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cylinder run and record it as CSV (t,x_p,p1,p2,f_true).
    Simulate {
        /// Scenario description, TOML (see the README for the schema).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Output recording.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },

    /// Filter a raw recording into kinematic frames (t,x_p,v,a,p1,p2).
    Preprocess {
        /// Input recording (t,x_p,p1,p2 with optional f_true).
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output frames.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Moving-average window for position and pressures, samples.
        #[arg(long, value_name = "SAMPLES")]
        smoothing: Option<usize>,
        /// Moving-average window for acceleration, samples.
        #[arg(long, value_name = "SAMPLES")]
        accel: Option<usize>,
    },

    /// Label frames with friction computed from the force balance.
    Label {
        /// Input frames from `preprocess`.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// TOML with `[geometry]` (and optionally `[label]`) tables; the
        /// bundled rig applies when omitted.
        #[arg(long, value_name = "FILE")]
        geom: Option<PathBuf>,
        /// Output labeled dataset (t,x_p,p1,p2,v,f,included).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Speed below which labels are marked unreliable, m/s.
        #[arg(long, value_name = "M_PER_S")]
        eps_v: Option<f64>,
        /// Correct for trapped-oil compliance (only for rigs whose pressure
        /// transducers sit at the valve manifold, not in the chambers).
        #[arg(long)]
        oil_spring: bool,
    },

    /// Identify friction-model parameters from a labeled recording.
    FitLugre {
        /// Labeled dataset to fit against.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output model JSON (kind "lugre").
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Objective-evaluation budget of the refinement stage.
        #[arg(long, default_value_t = 200, value_name = "N")]
        budget: usize,
    },

    /// Train the hybrid estimator on one or more labeled recordings.
    Train {
        /// Labeled dataset; repeat the flag to train across recordings.
        #[arg(long = "in", value_name = "FILE", required = true)]
        input: Vec<PathBuf>,
        /// Output model JSON (kind "hybrid").
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// TOML with a `[train]` table overriding the defaults.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Run a hyperparameter search with this many trials first.
        #[arg(long, value_name = "N")]
        hpo_budget: Option<usize>,
        /// Epoch cap per search trial.
        #[arg(long, value_name = "N")]
        trial_epochs: Option<usize>,
        /// Also write the per-epoch training log as CSV.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },

    /// Estimate friction over a recording with a trained model.
    Estimate {
        /// Hybrid model JSON.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Frames or labeled dataset to estimate over.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output estimates (t,f_est).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Feed samples one at a time through the streaming path instead of
        /// the batch path (identical output, exercises the real-time code).
        #[arg(long)]
        stream: bool,
    },

    /// Score a hybrid model against the friction-model baseline.
    Evaluate {
        /// Hybrid model JSON.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Baseline model JSON (kind "lugre").
        #[arg(long, value_name = "FILE")]
        lugre: PathBuf,
        /// Labeled recordings; ids 1.. are assigned in the order given.
        /// Comma-separated or repeated.
        #[arg(long, value_name = "FILES", value_delimiter = ',', required = true)]
        tests: Vec<PathBuf>,
        /// Output report JSON.
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
    },

    /// Measure per-sample inference latency.
    Bench {
        /// Hybrid model JSON.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Frames or labeled dataset whose samples are replayed cyclically.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Also time the friction-model baseline from this model JSON.
        #[arg(long, value_name = "FILE")]
        lugre: Option<PathBuf>,
        /// Timed calls per path (at least 1000).
        #[arg(long, default_value_t = 1000, value_name = "N")]
        repeats: usize,
        /// Write the latency figures as a report JSON.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
}

/// Parses `argv` and runs the requested stage, translating failures into
/// the documented exit codes. `argv[0]` is the program name.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return code;
        }
    };

    if let Some(threads) = cli.threads {
        // Only the first configuration in a process takes effect; later
        // in-process runs keep the existing pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    }
}

/// Numeric failures get their own exit code; everything else that survives
/// argument parsing is a data problem.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        let core_err = cause.downcast_ref::<CoreError>().or(match cause.downcast_ref() {
            Some(FormatError::Invalid(inner)) => Some(inner),
            _ => None,
        });
        if matches!(core_err, Some(CoreError::NumericFailure { .. })) {
            return EXIT_NUMERIC;
        }
    }
    EXIT_DATA
}
