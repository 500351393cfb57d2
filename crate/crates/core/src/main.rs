use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rkhs_control::data::{generate_heston_grid, write_csv, FftSettings, HestonRanges, DEFAULT_SPOT};
use rkhs_control::experiment::{evaluate_saved, run_baseline, run_experiment, ExperimentConfig, MetricValues, SavedModel};
use rkhs_control::Error;

#[derive(Parser)]
#[command(name = "rkhs-control", version, about = "Learn functions as terminal states of bilinear control systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write metrics, predictions and the model file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic data set.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Score a baseline on the data of a config.
    Baseline {
        #[command(subcommand)]
        kind: BaselineKind,
    },
    /// Score a saved model on a CSV file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label_column: Option<String>,
    },
}

#[derive(Subcommand)]
enum GenerateKind {
    /// Heston call prices from the FFT engine.
    Heston {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BaselineKind {
    /// Least squares on the kernel features of the support set.
    KernelRidge {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print_metrics(m: &MetricValues) {
    let fields = [("rmse", m.rmse), ("mape", m.mape), ("accuracy", m.accuracy), ("f1", m.f1)];
    for (name, v) in fields {
        if let Some(v) = v {
            println!("{name} = {v}");
        }
    }
}

/// Failure plus the compact config echo for fitting errors.
struct Failure(Error, Option<String>);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e, None)
    }
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_experiment(&cfg).map_err(|e| {
                let echo = matches!(e, Error::Fitting { .. })
                    .then(|| serde_json::to_string(&cfg).unwrap_or_default());
                Failure(e, echo)
            })?;
            print_metrics(&report.metrics());
            println!("naive_cost = {}", report.naive_cost);
            println!("iterations = {}", report.iterations);
            println!("wall_time_s = {:.3}", report.wall_time_s);
        }
        Command::Generate {
            kind: GenerateKind::Heston { count, seed, out },
        } => {
            let grid = FftSettings::default();
            let ds = generate_heston_grid(&HestonRanges::default(), count, seed, &grid)?;
            let header = vec![
                format!("spot={DEFAULT_SPOT}"),
                format!("seed={seed}"),
                format!("fft alpha={} nodes={} eta={}", grid.alpha, grid.nodes, grid.eta),
            ];
            write_csv(&ds, &out, &header)?;
            println!("wrote {} rows to {}", ds.len(), out.display());
        }
        Command::Baseline {
            kind: BaselineKind::KernelRidge { config },
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_metrics(&run_baseline(&cfg)?);
        }
        Command::Eval {
            model,
            data,
            label_column,
        } => {
            let saved = SavedModel::load(&model)?;
            print_metrics(&evaluate_saved(&saved, &data, label_column.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(e, echo)) => {
            let msg = e.to_string().replace('\n', " ");
            match echo {
                Some(cfg) => eprintln!("error: class={} message={msg} config={cfg}", e.class()),
                None => eprintln!("error: class={} message={msg}", e.class()),
            }
            ExitCode::FAILURE
        }
    }
}
