use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::{error, info};

use ecas_cli::{
    export_log_p1203, metrics_from_log, run_experiment, run_oracle, summarize, summary_markdown,
    write_metrics_csv, AlgorithmChoice, OraclePlan, RunPlan,
};
use ecas_core::config::ExperimentConfig;
use ecas_core::model::TraceCategory;
use ecas_core::qoe::QoeWeights;

#[derive(Parser)]
#[command(name = "ecas-sim", version, about = "Trace-driven edge-assisted adaptive streaming simulator")]
struct Cli {
    /// Seed for client start offsets and dataset shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run algorithms on the configured client mix.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated algorithms.
        #[arg(long, value_delimiter = ',', required = true)]
        algorithms: Vec<AlgorithmChoice>,
        /// Write per-second buffer and throughput series.
        #[arg(long)]
        timeline: bool,
        /// Write P.1203 input files per client.
        #[arg(long)]
        p1203: bool,
        /// Prediction table holding oracle labels, for ecas-oracle.
        #[arg(long)]
        oracle_table: Option<PathBuf>,
    },
    /// Label trace prefixes with their best parameter tuple.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Trace files or directories of trace files.
        #[arg(long, num_args = 1.., required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "static")]
        category: CategoryArg,
        /// Skip traces longer than this many seconds.
        #[arg(long)]
        max_trace_len: Option<usize>,
        /// Prefixes labeled between checkpoints.
        #[arg(long, default_value_t = 64)]
        chunk: usize,
    },
    /// Recompute metrics from an event log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        /// Take QoE weights from this config instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write P.1203 input files per client.
        #[arg(long)]
        p1203: bool,
    },
    /// Check a config file without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CategoryArg {
    Bus,
    Car,
    Pedestrian,
    Static,
    Train,
}

impl From<CategoryArg> for TraceCategory {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::Bus => TraceCategory::Bus,
            CategoryArg::Car => TraceCategory::Car,
            CategoryArg::Pedestrian => TraceCategory::Pedestrian,
            CategoryArg::Static => TraceCategory::Static,
            CategoryArg::Train => TraceCategory::Train,
        }
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Run {
            config,
            algorithms,
            timeline,
            p1203,
            oracle_table,
        } => {
            let plan = RunPlan {
                config: load_config(&config)?,
                algorithms,
                out_dir: cli.out.clone(),
                seed: cli.seed,
                timeline,
                p1203,
                oracle_table,
            };
            let result = run_experiment(&plan)?;
            print!("{}", summary_markdown(&result.summary));
            info!("results written to {}", cli.out.display());
        }
        Command::Oracle {
            config,
            traces,
            category,
            max_trace_len,
            chunk,
        } => {
            let cfg = load_config(&config)?;
            let ladder = cfg.validate()?;
            let plan = OraclePlan {
                trace_paths: traces,
                category: category.into(),
                grid: cfg.oracle.grid.clone(),
                oracle: cfg.oracle_config(&ladder),
                max_trace_len: max_trace_len.or(cfg.oracle.max_trace_len),
                out_dir: cli.out.clone(),
                seed: cli.seed,
                chunk,
            };
            let s = run_oracle(&plan)?;
            println!(
                "{} samples from {} traces ({} resumed) in {}",
                s.samples,
                s.traces,
                s.resumed,
                cli.out.display()
            );
            for (params, n) in s.label_counts.iter().take(10) {
                println!("  {params}: {n}");
            }
        }
        Command::Metrics { log, config, p1203 } => {
            let weights = match &config {
                Some(c) => load_config(c)?.qoe,
                None => QoeWeights::default(),
            };
            let metrics = metrics_from_log(&log, &weights)?;
            std::fs::create_dir_all(&cli.out)?;
            write_metrics_csv(&metrics, &cli.out.join("metrics.csv"))?;
            if p1203 {
                export_log_p1203(&log, &cli.out.join("p1203"))?;
            }
            print!("{}", summary_markdown(&summarize(&metrics)));
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config)?;
            let ladder = cfg.validate()?;
            let traces = cfg.load_traces()?;
            if let Some(t) = cfg.prediction_table_path() {
                ecas_core::predictor::load_prediction_table(&t)
                    .with_context(|| format!("loading prediction table {}", t.display()))?;
            }
            println!(
                "ok: {} clients, {} ladder levels, {} grid points",
                traces.len(),
                ladder.len(),
                cfg.oracle.grid.points().len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
