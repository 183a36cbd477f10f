//! Price panel ingestion, simple returns, benchmark construction and event
//! blocks.
//!
//! The input is a long-format CSV (one row per `(date, ticker)`), the same
//! layout as the public five-year S&P 500 dumps. Only tickers with a complete
//! history over every date seen in the file are kept; anything dropped is
//! listed in a [`DropReport`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::ops::Range;

use chrono::NaiveDate;
use log::warn;
use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of the long-format price CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub date: String,
    pub ticker: String,
    pub close: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            ticker: "ticker".into(),
            close: "close".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `dates.len() × tickers.len()` close prices.
    pub prices: Array2<f64>,
}

impl PricePanel {
    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTicker {
    pub ticker: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DropReport {
    pub dropped: Vec<DroppedTicker>,
}

impl DropReport {
    pub fn contains(&self, ticker: &str) -> bool {
        self.dropped.iter().any(|d| d.ticker == ticker)
    }

    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty()
    }

    /// Writes the report as CSV with columns `ticker,reason`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["ticker", "reason"])?;
        for d in &self.dropped {
            w.write_record([d.ticker.as_str(), d.reason.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<drop report>", e))?;
        Ok(())
    }
}

/// Reads a long-format price CSV into a rectangular panel.
///
/// Rows whose close cell is empty count as missing data for that ticker.
/// Row numbers in errors are 1-based line numbers of the source, header
/// included.
pub fn load_prices<R: Read>(source: R, schema: &Schema) -> Result<(PricePanel, DropReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow {
                row: 1,
                reason: format!("header has no column {name:?}"),
            })
    };
    let (date_col, ticker_col, close_col) = (
        column(&schema.date)?,
        column(&schema.ticker)?,
        column(&schema.close)?,
    );

    let mut cells: BTreeMap<String, HashMap<NaiveDate, Option<f64>>> = BTreeMap::new();
    let mut all_dates = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| {
            record.get(idx).ok_or_else(|| Error::MalformedRow {
                row,
                reason: format!("missing {name} field"),
            })
        };
        let date_raw = field(date_col, "date")?;
        let date =
            NaiveDate::parse_from_str(date_raw, "%Y-%m-%d").map_err(|e| Error::MalformedRow {
                row,
                reason: format!("bad date {date_raw:?}: {e}"),
            })?;
        let ticker = field(ticker_col, "ticker")?;
        if ticker.is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "empty ticker".into(),
            });
        }
        let close_raw = field(close_col, "close")?;
        let close = if close_raw.is_empty() {
            None
        } else {
            let price: f64 = close_raw.parse().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("bad close {close_raw:?}"),
            })?;
            if !price.is_finite() {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("non-finite close {close_raw:?}"),
                });
            }
            if price <= 0.0 {
                return Err(Error::NonPositivePrice { row, price });
            }
            Some(price)
        };
        all_dates.insert(date);
        let series = cells.entry(ticker.to_string()).or_default();
        if series.insert(date, close).is_some() {
            return Err(Error::DuplicateEntry {
                row,
                date: date.to_string(),
                ticker: ticker.to_string(),
            });
        }
    }

    let dates: Vec<NaiveDate> = all_dates.into_iter().collect();
    let mut report = DropReport::default();
    let mut kept = Vec::new();
    for (ticker, series) in cells {
        let missing = dates
            .iter()
            .filter(|d| !matches!(series.get(d), Some(Some(_))))
            .count();
        if missing > 0 {
            report.dropped.push(DroppedTicker {
                ticker,
                reason: format!("missing {missing} of {} dates", dates.len()),
            });
        } else {
            kept.push((ticker, series));
        }
    }
    if kept.is_empty() || dates.is_empty() {
        return Err(Error::EmptyPanel);
    }
    if !report.is_empty() {
        warn!(
            "dropped {} tickers with incomplete histories",
            report.dropped.len()
        );
    }

    let mut prices = Array2::zeros((dates.len(), kept.len()));
    for (j, (_, series)) in kept.iter().enumerate() {
        for (t, d) in dates.iter().enumerate() {
            // complete by construction
            prices[[t, j]] = series[d].unwrap();
        }
    }
    let tickers = kept.into_iter().map(|(t, _)| t).collect();
    Ok((
        PricePanel {
            dates,
            tickers,
            prices,
        },
        report,
    ))
}

/// Asset returns with the benchmark series they are regressed against.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    /// Date of each return row (the later date of each price pair).
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `T × p` simple returns.
    pub x: Array2<f64>,
    /// Length-`T` benchmark returns.
    pub r_b: Array1<f64>,
}

impl ReturnsPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        x: Array2<f64>,
        r_b: Array1<f64>,
    ) -> Result<Self> {
        if x.nrows() != r_b.len() || x.nrows() != dates.len() || x.ncols() != tickers.len() {
            return Err(Error::DimensionMismatch(format!(
                "x is {}x{}, r_b has {}, {} dates, {} tickers",
                x.nrows(),
                x.ncols(),
                r_b.len(),
                dates.len(),
                tickers.len()
            )));
        }
        Ok(Self {
            dates,
            tickers,
            x,
            r_b,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.x.ncols()
    }

    pub fn rows(&self, range: Range<usize>) -> Result<ReturnsPanel> {
        if range.end > self.n_samples() || range.start > range.end {
            return Err(Error::InsufficientRows {
                needed: range.end,
                available: self.n_samples(),
            });
        }
        Ok(ReturnsPanel {
            dates: self.dates[range.clone()].to_vec(),
            tickers: self.tickers.clone(),
            x: self.x.slice(s![range.clone(), ..]).to_owned(),
            r_b: self.r_b.slice(s![range]).to_owned(),
        })
    }
}

/// Per-period simple returns `p[t+1]/p[t] - 1`, without a benchmark column.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetReturns {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub x: Array2<f64>,
}

pub fn compute_returns(panel: &PricePanel) -> Result<AssetReturns> {
    let t_raw = panel.n_dates();
    if t_raw < 2 {
        return Err(Error::InsufficientRows {
            needed: 2,
            available: t_raw,
        });
    }
    let prev = panel.prices.slice(s![..t_raw - 1, ..]);
    let next = panel.prices.slice(s![1.., ..]);
    let x = &next / &prev - 1.0;
    Ok(AssetReturns {
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        x,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchmarkMode {
    /// Cross-sectional mean of all asset returns.
    EqualWeight,
    /// Returns of the named ticker; that ticker is removed from the predictors.
    IndexColumn(String),
    /// `IndexColumn` if the ticker is present, otherwise `EqualWeight`.
    Auto(String),
}

impl Default for BenchmarkMode {
    fn default() -> Self {
        BenchmarkMode::Auto("SPX".into())
    }
}

/// Benchmark return series for `panel` under `mode`.
pub fn build_benchmark(panel: &PricePanel, mode: &BenchmarkMode) -> Result<Array1<f64>> {
    let returns = compute_returns(panel)?;
    match resolve_mode(panel, mode)? {
        Some(j) => Ok(returns.x.column(j).to_owned()),
        None => Ok(returns
            .x
            .mean_axis(Axis(1))
            .expect("panel has at least one ticker")),
    }
}

fn resolve_mode(panel: &PricePanel, mode: &BenchmarkMode) -> Result<Option<usize>> {
    match mode {
        BenchmarkMode::EqualWeight => Ok(None),
        BenchmarkMode::IndexColumn(t) => panel
            .ticker_index(t)
            .map(Some)
            .ok_or_else(|| Error::MissingBenchmark(t.clone())),
        BenchmarkMode::Auto(t) => match panel.ticker_index(t) {
            Some(j) => Ok(Some(j)),
            None => {
                warn!("benchmark ticker {t:?} not in panel; using equal-weight benchmark");
                Ok(None)
            }
        },
    }
}

/// Returns plus benchmark. In index-column mode the benchmark ticker is
/// removed from the predictor set.
pub fn assemble_returns(panel: &PricePanel, mode: &BenchmarkMode) -> Result<ReturnsPanel> {
    let returns = compute_returns(panel)?;
    match resolve_mode(panel, mode)? {
        Some(j) => {
            let r_b = returns.x.column(j).to_owned();
            let keep: Vec<usize> = (0..returns.x.ncols()).filter(|&k| k != j).collect();
            if keep.is_empty() {
                return Err(Error::EmptyPanel);
            }
            let tickers = keep.iter().map(|&k| returns.tickers[k].clone()).collect();
            ReturnsPanel::new(
                returns.dates,
                tickers,
                returns.x.select(Axis(1), &keep),
                r_b,
            )
        }
        None => {
            let r_b = returns.x.mean_axis(Axis(1)).expect("non-empty panel");
            ReturnsPanel::new(returns.dates, returns.tickers, returns.x, r_b)
        }
    }
}

/// Returns plus a benchmark taken from a separate single-series price panel
/// (the benchmark must cover every date of `panel`).
pub fn assemble_with_external(panel: &PricePanel, benchmark: &PricePanel) -> Result<ReturnsPanel> {
    if benchmark.n_tickers() != 1 {
        return Err(Error::Config(format!(
            "benchmark file must hold one series, found {}",
            benchmark.n_tickers()
        )));
    }
    let lookup: HashMap<NaiveDate, f64> = benchmark
        .dates
        .iter()
        .copied()
        .zip(benchmark.prices.column(0).iter().copied())
        .collect();
    let prices = panel
        .dates
        .iter()
        .map(|d| {
            lookup
                .get(d)
                .copied()
                .ok_or_else(|| Error::Config(format!("benchmark file has no price for {d}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let returns = compute_returns(panel)?;
    let r_b = Array1::from_iter(prices.windows(2).map(|w| w[1] / w[0] - 1.0));
    ReturnsPanel::new(returns.dates, returns.tickers, returns.x, r_b)
}

/// `n` contiguous, disjoint blocks of `m` rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventBlocks {
    pub blocks: Vec<Range<usize>>,
}

impl EventBlocks {
    /// Row range covered by all blocks together.
    pub fn span(&self) -> Range<usize> {
        match (self.blocks.first(), self.blocks.last()) {
            (Some(a), Some(b)) => a.start..b.end,
            _ => 0..0,
        }
    }

    pub fn total_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }
}

pub fn make_events(n_samples: usize, n: usize, m: usize, offset: usize) -> Result<EventBlocks> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter(format!(
            "event count and length must be positive (n = {n}, m = {m})"
        )));
    }
    let needed = offset + n * m;
    if needed > n_samples {
        return Err(Error::InsufficientRows {
            needed,
            available: n_samples,
        });
    }
    let blocks = (0..n)
        .map(|i| offset + i * m..offset + (i + 1) * m)
        .collect();
    Ok(EventBlocks { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn load(text: &str) -> Result<(PricePanel, DropReport)> {
        load_prices(text.as_bytes(), &Schema::default())
    }

    #[test]
    fn complete_panel_passes_through() {
        let (panel, report) = load(
            "date,ticker,close\n\
             2020-01-02,AAA,10\n2020-01-02,BBB,20\n\
             2020-01-03,AAA,11\n2020-01-03,BBB,21\n\
             2020-01-06,AAA,12\n2020-01-06,BBB,22\n",
        )
        .unwrap();
        assert_eq!(panel.n_dates(), 3);
        assert_eq!(panel.n_tickers(), 2);
        assert!(report.is_empty());
        assert_eq!(panel.prices[[2, 1]], 22.0);
    }

    #[test]
    fn rows_may_arrive_unordered() {
        let (panel, _) = load("ticker,close,date\nAAA,11,2020-01-03\nAAA,10,2020-01-02\n").unwrap();
        assert_eq!(panel.dates[0], NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
        assert_eq!(panel.prices.column(0).to_vec(), vec![10.0, 11.0]);
    }

    #[test]
    fn incomplete_ticker_is_dropped_and_reported() {
        let (panel, report) = load(
            "date,ticker,close\n\
             2020-01-02,AAA,10\n2020-01-02,BBB,20\n\
             2020-01-03,BBB,21\n\
             2020-01-06,AAA,12\n2020-01-06,BBB,22\n",
        )
        .unwrap();
        assert_eq!(panel.tickers, vec!["BBB"]);
        assert!(report.contains("AAA"));
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("ticker,reason\nAAA,"));
    }

    #[test]
    fn empty_close_counts_as_missing() {
        let (_, report) = load("date,ticker,close\n2020-01-02,AAA,\n2020-01-02,BBB,1\n").unwrap();
        assert!(report.contains("AAA"));
    }

    #[test]
    fn negative_price_names_row() {
        let err = load("date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,-4.2\n").unwrap_err();
        assert!(
            matches!(err, Error::NonPositivePrice { row: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let err = load("date,ticker,close\n2020-01-02,AAA,10\n2020-01-02,AAA,11\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { row: 3, .. }));
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = load("date,ticker,close\n2020-01-02,AAA,abc\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 2, .. }));
        let err = load("date,ticker,close\n02/01/2020,AAA,1\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 2, .. }));
        let err = load("when,ticker,close\n2020-01-02,AAA,1\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 1, .. }));
    }

    #[test]
    fn all_dropped_is_empty_panel() {
        let err = load("date,ticker,close\n2020-01-02,AAA,1\n2020-01-03,BBB,1\n").unwrap_err();
        assert!(matches!(err, Error::EmptyPanel));
    }

    fn panel(prices: Array2<f64>) -> PricePanel {
        let d0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        PricePanel {
            dates: (0..prices.nrows() as u64)
                .map(|i| d0 + chrono::Days::new(i))
                .collect(),
            tickers: (0..prices.ncols()).map(|j| format!("T{j}")).collect(),
            prices,
        }
    }

    #[test]
    fn simple_returns() {
        let r = compute_returns(&panel(array![
            [100.0, 100.0, 100.0],
            [100.0, 110.0, 50.0],
            [100.0, 110.0, 100.0]
        ]))
        .unwrap();
        assert_eq!(r.x.column(0).to_vec(), vec![0.0, 0.0]);
        assert_abs_diff_eq!(r.x[[0, 1]], 0.10, epsilon = 1e-15);
        assert_eq!(r.x.column(2).to_vec(), vec![-0.5, 1.0]);
        assert_eq!(r.dates.len(), 2);
    }

    #[test]
    fn returns_need_two_dates() {
        assert!(matches!(
            compute_returns(&panel(array![[1.0]])),
            Err(Error::InsufficientRows {
                needed: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn equal_weight_benchmark() {
        let p = panel(array![[100.0, 100.0], [110.0, 90.0]]);
        assert_abs_diff_eq!(
            build_benchmark(&p, &BenchmarkMode::EqualWeight).unwrap()[0],
            0.0,
            epsilon = 1e-15
        );
        let p = panel(array![[100.0, 100.0, 100.0], [103.0, 100.0, 103.0]]);
        assert_abs_diff_eq!(
            build_benchmark(&p, &BenchmarkMode::EqualWeight).unwrap()[0],
            0.02,
            epsilon = 1e-15
        );
    }

    #[test]
    fn index_column_benchmark() {
        let mut p = panel(array![[100.0, 50.0], [110.0, 55.0], [99.0, 60.0]]);
        p.tickers = vec!["AAA".into(), "SPX".into()];
        let rb = build_benchmark(&p, &BenchmarkMode::IndexColumn("SPX".into())).unwrap();
        assert_eq!(rb, compute_returns(&p).unwrap().x.column(1).to_owned());

        let rp = assemble_returns(&p, &BenchmarkMode::Auto("SPX".into())).unwrap();
        assert_eq!(rp.tickers, vec!["AAA"]);
        assert_eq!(rp.r_b, rb);

        assert!(matches!(
            build_benchmark(&p, &BenchmarkMode::IndexColumn("NDX".into())),
            Err(Error::MissingBenchmark(_))
        ));
        let fallback = assemble_returns(&p, &BenchmarkMode::Auto("NDX".into())).unwrap();
        assert_eq!(fallback.n_assets(), 2);
    }

    #[test]
    fn external_benchmark_aligns_dates() {
        let p = panel(array![[100.0], [110.0], [121.0]]);
        let mut b = panel(array![[10.0], [11.0], [12.0], [13.0]]);
        b.tickers = vec!["IDX".into()];
        let rp = assemble_with_external(&p, &b).unwrap();
        assert_abs_diff_eq!(rp.r_b[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(rp.r_b[1], 1.0 / 11.0, epsilon = 1e-15);
    }

    #[test]
    fn event_partitions() {
        let e = make_events(10, 5, 2, 0).unwrap();
        assert_eq!(e.blocks, vec![0..2, 2..4, 4..6, 6..8, 8..10]);
        let e = make_events(10, 2, 3, 1).unwrap();
        assert_eq!(e.blocks, vec![1..4, 4..7]);
        assert_eq!(e.span(), 1..7);
        assert!(matches!(
            make_events(10, 4, 3, 0),
            Err(Error::InsufficientRows {
                needed: 12,
                available: 10
            })
        ));
        assert!(make_events(10, 0, 3, 0).is_err());
    }
}
