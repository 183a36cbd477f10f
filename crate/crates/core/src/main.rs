use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use posi_track::experiment::{
    self, BenchmarkSpec, CalibrationConfig, DataSource, ExperimentCase, SigmaMode, Stage,
    StageError, SweepConfig, Window,
};
use posi_track::ingest::Schema;
use posi_track::Error;

#[derive(Parser)]
#[command(
    name = "posi-track",
    version,
    about = "Sparse index tracking with exact post-selection inference"
)]
struct Cli {
    /// Worker threads for coefficient-, case- and replication-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single case.
    Run(RunArgs),
    /// Run every case of a sweep config (the bundled ten-case table by default).
    Sweep(SweepArgs),
    /// Monte Carlo calibration of selective p-values and intervals.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Long-format price CSV.
    #[arg(long)]
    input: PathBuf,
    /// `auto`, `auto:<TICKER>`, `equal-weight`, `index:<TICKER>`, or a price file.
    #[arg(long, default_value = "auto")]
    benchmark: String,
    #[arg(long, default_value = "date")]
    date_col: String,
    #[arg(long, default_value = "ticker")]
    ticker_col: String,
    #[arg(long, default_value = "close")]
    close_col: String,
    #[arg(long)]
    out: PathBuf,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        DataSource {
            input: self.input.clone(),
            schema: Schema {
                date: self.date_col.clone(),
                ticker: self.ticker_col.clone(),
                close: self.close_col.clone(),
            },
            benchmark: BenchmarkSpec::parse(&self.benchmark),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaArg {
    Pooled,
    PerEvent,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Full,
    Events,
}

impl From<WindowArg> for Window {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::Full => Window::Full,
            WindowArg::Events => Window::Events,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "run")]
    case_id: String,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "n-events")]
    n_events: usize,
    #[arg(long = "m-per-event")]
    m_per_event: usize,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "pooled")]
    sigma: SigmaArg,
    /// Rows the Lasso and inference use.
    #[arg(long, value_enum, default_value = "events")]
    fit_window: WindowArg,
    /// Rows tracking error and correlation are computed on.
    #[arg(long, value_enum, default_value = "full")]
    ete_window: WindowArg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Sweep config (TOML with [[case]] tables).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Calibration config (TOML); defaults to the bundled null scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

fn config_error(e: Error) -> StageError {
    StageError::new(Stage::Config, e)
}

fn write_drops(dir: &Path, drops: &posi_track::ingest::DropReport) -> Result<(), StageError> {
    let out = |e| StageError::new(Stage::Output, e);
    std::fs::create_dir_all(dir).map_err(|e| {
        out(Error::Io {
            path: dir.into(),
            source: e,
        })
    })?;
    let path = dir.join("dropped.csv");
    let file = std::fs::File::create(&path).map_err(|e| out(Error::Io { path, source: e }))?;
    drops.write_csv(file).map_err(out)
}

fn run(args: RunArgs) -> Result<(), StageError> {
    let dataset = experiment::load_dataset(&args.data.source())?;
    write_drops(&args.data.out, &dataset.drops)?;
    let case = ExperimentCase {
        alpha: args.alpha,
        tol: args.tol,
        max_iter: args.max_iter,
        seed: args.seed,
        offset: args.offset,
        sigma: match args.sigma {
            SigmaArg::Pooled => SigmaMode::Pooled,
            SigmaArg::PerEvent => SigmaMode::PerEvent,
        },
        fit_window: args.fit_window.into(),
        ete_window: args.ete_window.into(),
        ..ExperimentCase::new(args.case_id, args.lambda, args.n_events, args.m_per_event)
    };
    let report = experiment::run_case(&case, &dataset.returns)?;
    for notice in &report.notices {
        warn!("{notice}");
    }
    experiment::write_case_outputs(&report, &args.data.out)?;
    let s = &report.summary;
    println!(
        "{}: lambda={} p={} p_p={} ete={:.6e} corr={}",
        s.case,
        s.lambda,
        s.p.unwrap_or(0),
        s.p_p.unwrap_or(0),
        s.ete.unwrap_or(f64::NAN),
        s.corr
            .map_or("undefined".to_string(), |c| format!("{c:.6}"))
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), StageError> {
    let config = match &args.config {
        Some(path) => SweepConfig::from_file(path).map_err(config_error)?,
        None => SweepConfig::ten_cases(),
    };
    let dataset = experiment::load_dataset(&args.data.source())?;
    write_drops(&args.data.out, &dataset.drops)?;
    let report = experiment::run_sweep(&config, &dataset.returns, Some(&args.data.out))?;
    println!("case,lambda,n,m,corr,ete,p_p,p,status");
    for r in &report.rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        println!(
            "{},{},{},{},{},{},{},{},{}",
            r.case,
            r.lambda,
            r.n,
            r.m,
            opt(r.corr.map(|c| format!("{c:.6}"))),
            opt(r.ete.map(|e| format!("{e:.6e}"))),
            opt(r.p_p.map(|v| v.to_string())),
            opt(r.p.map(|v| v.to_string())),
            r.status
        );
    }
    let failures: Vec<&StageError> = report
        .outcomes
        .iter()
        .filter_map(|o| o.as_ref().err())
        .collect();
    match failures.first() {
        Some(first) => {
            error!("{} of {} cases failed", failures.len(), report.rows.len());
            Err(StageError::new(
                first.stage,
                Error::InvalidParameter(first.error.to_string()),
            ))
        }
        None => Ok(()),
    }
}

fn calibrate(args: CalibrateArgs) -> Result<(), StageError> {
    let mut config = match &args.config {
        Some(path) => CalibrationConfig::from_file(path).map_err(config_error)?,
        None => CalibrationConfig::null_default(),
    };
    if let Some(r) = args.replications {
        config.replications = r;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(l) = args.lambda {
        config.scenario.lambda = l;
    }
    if let Some(a) = args.alpha {
        config.scenario.alpha = a;
    }
    let report = experiment::run_calibration(&config, Some(&args.out))?;
    info!(
        "{} intervals from {} replications",
        report.n_intervals, report.replications
    );
    println!(
        "intervals={} ks_null={} coverage={:.4} naive_coverage={:.4}",
        report.n_intervals,
        report.ks_null.map_or("n/a".into(), |k| format!("{k:.4}")),
        report.coverage,
        report.naive_coverage
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
