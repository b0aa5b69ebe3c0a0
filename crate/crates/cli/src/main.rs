// `!(x > y)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod model_file;
mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smartpoll::PollError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Exact analysis of polling systems with position-dependent arrival rates.
#[derive(Parser)]
#[command(name = "smartpoll", version)]
struct Cli {
    /// Worker threads for enumeration and simulation (default: all cores).
    #[arg(long, global = true, env = "SMARTPOLL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Model file.
    pub model: PathBuf,
    /// Send all arrivals of each period to one queue, e.g. 1,2,2,3,3,1 (X = any).
    #[arg(long)]
    pub strategy: Option<String>,
    /// Total arrival rate used with --strategy, optimize and sweep
    /// (overrides `arrival_rate` in the file).
    #[arg(long)]
    pub arrival_rate: Option<f64>,
    /// Print the model as read (after --strategy) and exit.
    #[arg(long)]
    pub dump_model: bool,
}

#[derive(Args, Clone)]
pub struct OutArgs {
    /// Write results here instead of standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// CSV instead of an aligned table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    /// Waiting-time LST.
    Waiting,
    /// Marginal queue-length PGF (see --epoch).
    QueueLength,
    /// Cycle-time LST anchored at --queue.
    Cycle,
    Intervisit,
    Visit,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Begin,
    End,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    General,
    Compact,
}

#[derive(Subcommand)]
enum Command {
    /// Stability and mean-value analysis.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Queue-length and waiting-time means and standard deviations.
    Moments {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate a transform on a grid of real arguments (CSV).
    Lst {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, short, value_enum)]
        transform: TransformArg,
        /// Queue, 1-based.
        #[arg(long, short, default_value_t = 1)]
        queue: usize,
        /// arrival, departure, arbitrary, or a period label such as S2.
        #[arg(long, default_value = "arbitrary")]
        epoch: String,
        #[arg(long, value_enum, default_value = "begin")]
        variant: VariantArg,
        #[arg(long, value_enum, default_value = "general")]
        form: FormArg,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        /// Default 1 for generating functions, 2 for Laplace transforms.
        #[arg(long)]
        to: Option<f64>,
        #[arg(long, default_value_t = 11)]
        points: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Pseudo-conservation law: both sides and the gap.
    Pcl {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Discrete-event simulation with confidence intervals.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 20)]
        replications: usize,
        #[arg(long, default_value_t = 1_000_000)]
        events: u64,
        #[arg(long, default_value_t = 0.2)]
        warmup: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Best (or worst) routing strategy for a template model.
    Optimize {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Look for the worst stable strategy instead.
        #[arg(long)]
        maximize: bool,
        /// List every distinct stable strategy.
        #[arg(long)]
        all: bool,
    },
    /// Optimal strategy against one queue's mean service time (CSV).
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        /// Queue whose mean service time varies, 1-based.
        #[arg(long, default_value_t = 1)]
        queue: usize,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 2.0)]
        to: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Bisection tolerance for the switching points.
        #[arg(long, default_value_t = 0.005)]
        refine: f64,
        #[arg(long)]
        maximize: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Bad flag values found after clap has parsed them.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_MODEL: u8 = 3;
pub const EXIT_UNSTABLE: u8 = 4;

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else if e.downcast_ref::<model_file::ParseError>().is_some() || e.downcast_ref::<commands::ReadError>().is_some() {
        EXIT_MODEL
    } else if let Some(p) = e.downcast_ref::<PollError>() {
        match p {
            PollError::Unstable { .. } | PollError::OwnLoad { .. } => EXIT_UNSTABLE,
            PollError::InvalidModel(_) => EXIT_MODEL,
            _ => EXIT_FAILURE,
        }
    } else {
        EXIT_FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("smartpoll: cannot set thread count: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    let result = match cli.command {
        Command::Analyze { model, out } => commands::analyze(&model, &out),
        Command::Moments { model, out } => commands::moments(&model, &out),
        Command::Lst { model, transform, queue, epoch, variant, form, from, to, points, output } => {
            commands::lst(&model, commands::LstArgs { transform, queue, epoch, variant, form, from, to, points }, output.as_deref())
        }
        Command::Pcl { model, out } => commands::pcl(&model, &out),
        Command::Simulate { model, out, replications, events, warmup, seed } => {
            let cfg = smartpoll::simulator::SimConfig {
                replications,
                events_per_replication: events,
                warmup_fraction: warmup,
                seed,
            };
            commands::simulate(&model, &out, cfg)
        }
        Command::Optimize { model, out, maximize, all } => commands::optimize(&model, &out, maximize, all),
        Command::Sweep { model, queue, from, to, step, refine, maximize, output } => {
            commands::sweep(&model, commands::SweepArgs { queue, from, to, step, refine, maximize }, output.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("smartpoll: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
