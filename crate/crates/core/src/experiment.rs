//! Case runs, sweeps and calibration runs, plus their on-disk outputs.
//!
//! Every case writes into its own directory:
//!
//! ```text
//! <out>/summary.csv        case,lambda,n,m,corr,ete,p_p,p,status
//! <out>/coefficients.csv   ticker,beta,p_value,ci_lo,ci_hi,retained
//! <out>/ci.csv             ticker,beta,ci_lo,ci_hi
//! <out>/tracking.csv       date,benchmark_return,tracked_return
//! <out>/diagnostics.json
//! ```
//!
//! A sweep writes one such directory per case plus a combined `summary.csv`.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{self, CalibrationReport, Scenario};
use crate::error::{Error, Result};
use crate::inference::{self, InferenceConfig, InferenceReport, SigmaSource};
use crate::ingest::{self, BenchmarkMode, DropReport, EventBlocks, ReturnsPanel, Schema};
use crate::lasso;
use crate::tracking::{self, TrackingResult};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// The bundled ten-case sweep.
pub const TEN_CASE_CONFIG: &str = include_str!("../configs/ten_cases.toml");
pub const NULL_CALIBRATION_CONFIG: &str = include_str!("../configs/calibration_null.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    #[default]
    Pooled,
    PerEvent,
}

/// Rows used to compute tracking error and correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    #[default]
    Full,
    Events,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentCase {
    pub case_id: String,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    /// First row of the first event.
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub sigma: SigmaMode,
    /// Rows the Lasso and the inference run on: the event window (default)
    /// or the whole returns panel.
    #[serde(default = "default_fit_window")]
    pub fit_window: Window,
    #[serde(default)]
    pub ete_window: Window,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_tol() -> f64 {
    lasso::DEFAULT_TOL
}

fn default_max_iter() -> usize {
    lasso::DEFAULT_MAX_ITER
}

fn default_fit_window() -> Window {
    Window::Events
}

impl ExperimentCase {
    pub fn new(case_id: impl Into<String>, lambda: f64, n: usize, m: usize) -> Self {
        Self {
            case_id: case_id.into(),
            lambda,
            n,
            m,
            alpha: DEFAULT_ALPHA,
            tol: lasso::DEFAULT_TOL,
            max_iter: lasso::DEFAULT_MAX_ITER,
            seed: 0,
            offset: 0,
            sigma: SigmaMode::Pooled,
            fit_window: Window::Events,
            ete_window: Window::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.case_id.is_empty() || self.case_id.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid case_id {:?}", self.case_id)));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "{}: lambda must be > 0",
                self.case_id
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "{}: alpha must be in (0, 1)",
                self.case_id
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config(format!(
                "{}: need tol > 0 and max_iter >= 1",
                self.case_id
            )));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config(format!(
                "{}: n and m must be positive",
                self.case_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "case")]
    pub cases: Vec<ExperimentCase>,
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn ten_cases() -> Self {
        Self::parse(TEN_CASE_CONFIG).expect("bundled config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::Config("config lists no cases".into()));
        }
        let mut seen = HashSet::new();
        for case in &self.cases {
            case.validate()?;
            if !seen.insert(case.case_id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate case_id {:?}",
                    case.case_id
                )));
            }
        }
        Ok(())
    }
}

/// Where the benchmark series comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkSpec {
    Mode(BenchmarkMode),
    /// A separate long-format price file holding a single series.
    File(PathBuf),
}

impl BenchmarkSpec {
    /// `equal-weight`, `index:<TICKER>`, `auto`, `auto:<TICKER>`, or a path.
    pub fn parse(text: &str) -> Self {
        match text {
            "equal-weight" => Self::Mode(BenchmarkMode::EqualWeight),
            "auto" => Self::Mode(BenchmarkMode::default()),
            _ => {
                if let Some(t) = text.strip_prefix("index:") {
                    Self::Mode(BenchmarkMode::IndexColumn(t.to_string()))
                } else if let Some(t) = text.strip_prefix("auto:") {
                    Self::Mode(BenchmarkMode::Auto(t.to_string()))
                } else {
                    Self::File(PathBuf::from(text))
                }
            }
        }
    }
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self::Mode(BenchmarkMode::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub input: PathBuf,
    pub schema: Schema,
    pub benchmark: BenchmarkSpec,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub returns: ReturnsPanel,
    pub drops: DropReport,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(source: &DataSource) -> std::result::Result<Dataset, StageError> {
    let ingest = |e| StageError::new(Stage::Ingest, e);
    let (panel, drops) = ingest::load_prices(open(&source.input).map_err(ingest)?, &source.schema)
        .map_err(ingest)?;
    let returns = match &source.benchmark {
        BenchmarkSpec::Mode(mode) => ingest::assemble_returns(&panel, mode),
        BenchmarkSpec::File(path) => {
            let file = open(path).map_err(ingest)?;
            let (bench, _) = ingest::load_prices(file, &source.schema).map_err(ingest)?;
            ingest::assemble_with_external(&panel, &bench)
        }
    }
    .map_err(ingest)?;
    Ok(Dataset { returns, drops })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Config,
    Events,
    Inference,
    Tracking,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Ingest => "ingest",
            Stage::Config => "config",
            Stage::Events => "events",
            Stage::Inference => "inference",
            Stage::Tracking => "tracking",
            Stage::Output => "output",
        };
        f.write_str(name)
    }
}

/// An error tagged with the pipeline stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl StageError {
    pub fn new(stage: Stage, error: Error) -> Self {
        Self { stage, error }
    }

    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Ingest | Stage::Config | Stage::Output => 2,
            _ => self.error.exit_code(),
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// One row of `summary.csv`, mirroring the columns of the ten-case table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case: String,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
    pub corr: Option<f64>,
    pub ete: Option<f64>,
    pub p_p: Option<usize>,
    pub p: Option<usize>,
    pub status: String,
}

impl SummaryRow {
    fn failed(case: &ExperimentCase, err: &StageError) -> Self {
        Self {
            case: case.case_id.clone(),
            lambda: case.lambda,
            n: case.n,
            m: case.m,
            corr: None,
            ete: None,
            p_p: None,
            p: None,
            status: format!("error: {err}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub window: Window,
    pub rows: usize,
    pub ete: f64,
    pub corr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub case: ExperimentCase,
    pub summary: SummaryRow,
    pub events: EventBlocks,
    pub inference: InferenceReport,
    /// Tracking of the full Lasso basket.
    pub tracking: TrackingSummary,
    /// Tracking of the basket restricted to retained predictors.
    pub tracking_retained: Option<TrackingSummary>,
    pub notices: Vec<String>,
    #[serde(skip)]
    pub tracked: Vec<f64>,
    #[serde(skip)]
    pub tracking_panel: ReturnsPanel,
}

fn summarize_tracking(
    panel: &ReturnsPanel,
    beta: &ndarray::Array1<f64>,
    window: Window,
) -> Result<(TrackingSummary, Vec<f64>)> {
    match tracking::evaluate_tracking(panel, beta.view()) {
        Ok(TrackingResult {
            tracked, ete, corr, ..
        }) => Ok((
            TrackingSummary {
                window,
                rows: panel.n_samples(),
                ete,
                corr: Some(corr),
            },
            tracked,
        )),
        // constant basket (e.g. nothing selected): ETE is still defined
        Err(Error::InvalidParameter(_)) => {
            let ete = tracking::ete(panel.x.view(), beta.view(), panel.r_b.view())?;
            Ok((
                TrackingSummary {
                    window,
                    rows: panel.n_samples(),
                    ete,
                    corr: None,
                },
                panel.x.dot(beta).to_vec(),
            ))
        }
        Err(e) => Err(e),
    }
}

/// Events → exact inference → tracking for one case.
pub fn run_case(
    case: &ExperimentCase,
    returns: &ReturnsPanel,
) -> std::result::Result<CaseReport, StageError> {
    case.validate()
        .map_err(|e| StageError::new(Stage::Config, e))?;
    let events = ingest::make_events(returns.n_samples(), case.n, case.m, case.offset)
        .map_err(|e| StageError::new(Stage::Events, e))?;
    let span = events.span();
    let window = returns
        .rows(span.clone())
        .map_err(|e| StageError::new(Stage::Events, e))?;
    let fit_panel = match case.fit_window {
        Window::Events => &window,
        Window::Full => returns,
    };
    let base = match case.fit_window {
        Window::Events => span.start,
        Window::Full => 0,
    };
    let local_events = EventBlocks {
        blocks: events
            .blocks
            .iter()
            .map(|b| b.start - base..b.end - base)
            .collect(),
    };

    let mut config = InferenceConfig::new(case.lambda, case.alpha);
    config.tol = case.tol;
    config.max_iter = case.max_iter;
    config.sigma = match case.sigma {
        SigmaMode::Pooled => SigmaSource::Pooled,
        SigmaMode::PerEvent => SigmaSource::PerEvent,
    };
    config.events = Some(local_events);
    let report = inference::run_exact_posi(fit_panel, &config)
        .map_err(|e| StageError::new(Stage::Inference, e))?;

    let tracking_panel = match case.ete_window {
        Window::Full => returns.clone(),
        Window::Events => window,
    };
    let track = |beta: &ndarray::Array1<f64>| {
        summarize_tracking(&tracking_panel, beta, case.ete_window)
            .map_err(|e| StageError::new(Stage::Tracking, e))
    };
    let (tracking, tracked) = track(&report.lasso_beta())?;
    let tracking_retained = if report.p_retained > 0 {
        Some(track(&report.retained_beta())?.0)
    } else {
        None
    };

    let mut notices = report.diagnostics.warnings.clone();
    let status = if report.p_selected == 0 {
        notices.push(format!(
            "no predictors selected: lambda {} is at or above the critical value {:.6e}",
            case.lambda, report.diagnostics.critical_lambda
        ));
        "no-selection"
    } else {
        "ok"
    };
    let summary = SummaryRow {
        case: case.case_id.clone(),
        lambda: case.lambda,
        n: case.n,
        m: case.m,
        corr: tracking.corr,
        ete: Some(tracking.ete),
        p_p: Some(report.p_retained),
        p: Some(report.p_selected),
        status: status.to_string(),
    };
    Ok(CaseReport {
        case: case.clone(),
        summary,
        events,
        inference: report,
        tracking,
        tracking_retained,
        notices,
        tracked,
        tracking_panel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub ticker: String,
    pub beta: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub ticker: String,
    pub beta: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub date: chrono::NaiveDate,
    pub benchmark_return: f64,
    pub tracked_return: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Config(e.to_string()))?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

/// Writes every per-case output into `dir`, creating it if needed.
pub fn write_case_outputs(report: &CaseReport, dir: &Path) -> std::result::Result<(), StageError> {
    let out = |e| StageError::new(Stage::Output, e);
    fs::create_dir_all(dir).map_err(|e| out(Error::io(dir, e)))?;
    write_summary(
        &dir.join("summary.csv"),
        std::slice::from_ref(&report.summary),
    )
    .map_err(out)?;

    let coefficients: Vec<CoefficientRow> = report
        .inference
        .records
        .iter()
        .map(|r| CoefficientRow {
            ticker: r.ticker.clone(),
            beta: r.beta_selected,
            p_value: r.p_value,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            retained: r.retained,
        })
        .collect();
    write_rows(&dir.join("coefficients.csv"), &coefficients).map_err(out)?;
    let ci: Vec<CiRow> = coefficients
        .iter()
        .map(|c| CiRow {
            ticker: c.ticker.clone(),
            beta: c.beta,
            ci_lo: c.ci_lo,
            ci_hi: c.ci_hi,
        })
        .collect();
    write_rows(&dir.join("ci.csv"), &ci).map_err(out)?;

    let tracking = create(&dir.join("tracking.csv")).map_err(out)?;
    tracking::write_tracking_csv(
        tracking,
        &report.tracking_panel,
        ndarray::ArrayView1::from(&report.tracked),
    )
    .map_err(out)?;
    write_json(&dir.join("diagnostics.json"), report).map_err(out)
}

#[derive(Debug)]
pub struct SweepReport {
    pub rows: Vec<SummaryRow>,
    pub outcomes: Vec<std::result::Result<CaseReport, StageError>>,
}

/// Runs every case (in parallel) and, when `out` is given, writes per-case
/// directories and the combined `summary.csv`. A failing case is recorded
/// in its row; the other cases still run.
pub fn run_sweep(
    config: &SweepConfig,
    returns: &ReturnsPanel,
    out: Option<&Path>,
) -> std::result::Result<SweepReport, StageError> {
    config
        .validate()
        .map_err(|e| StageError::new(Stage::Config, e))?;
    let outcomes: Vec<_> = config
        .cases
        .par_iter()
        .map(|case| {
            let report = run_case(case, returns)?;
            if let Some(dir) = out {
                write_case_outputs(&report, &dir.join(&case.case_id))?;
            }
            Ok(report)
        })
        .collect();
    let rows: Vec<SummaryRow> = config
        .cases
        .iter()
        .zip(&outcomes)
        .map(|(case, outcome)| match outcome {
            Ok(r) => r.summary.clone(),
            Err(e) => SummaryRow::failed(case, e),
        })
        .collect();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| StageError::new(Stage::Output, Error::io(dir, e)))?;
        write_summary(&dir.join("summary.csv"), &rows)
            .map_err(|e| StageError::new(Stage::Output, e))?;
    }
    Ok(SweepReport { rows, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    pub scenario: Scenario,
}

impl CalibrationConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn null_default() -> Self {
        Self::parse(NULL_CALIBRATION_CONFIG).expect("bundled config is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub replication: usize,
    pub j: usize,
    pub target: f64,
    pub stat: f64,
    pub p_value: f64,
    pub p_value_at_target: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covers: bool,
}

/// Runs the Monte Carlo calibration; with `out`, writes `calibration.json`
/// and `pvalues.csv`.
pub fn run_calibration(
    config: &CalibrationConfig,
    out: Option<&Path>,
) -> std::result::Result<CalibrationReport, StageError> {
    let report =
        calibrate::calibrate_monte_carlo(&config.scenario, config.replications, config.seed)
            .map_err(|e| {
                let stage = if matches!(e, Error::Config(_)) {
                    Stage::Config
                } else {
                    Stage::Inference
                };
                StageError::new(stage, e)
            })?;
    if let Some(dir) = out {
        let o = |e| StageError::new(Stage::Output, e);
        fs::create_dir_all(dir).map_err(|e| o(Error::io(dir, e)))?;
        write_json(&dir.join("calibration.json"), &report).map_err(o)?;
        let rows: Vec<PValueRow> = report
            .samples
            .iter()
            .map(|s| PValueRow {
                replication: s.replication,
                j: s.j,
                target: s.target,
                stat: s.stat,
                p_value: s.p_value,
                p_value_at_target: s.p_value_at_target,
                ci_lo: s.ci_lo,
                ci_hi: s.ci_hi,
                covers: s.covers(),
            })
            .collect();
        write_rows(&dir.join("pvalues.csv"), &rows).map_err(o)?;
    }
    Ok(report)
}
