//! Tracking quality of a weighted basket against its benchmark.

use std::io::Write;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReturnsPanel;

/// Empirical tracking error `(1/T)‖Xw − r_b‖²`.
pub fn ete(
    x: ArrayView2<'_, f64>,
    w: ArrayView1<'_, f64>,
    r_b: ArrayView1<'_, f64>,
) -> Result<f64> {
    let (t, p) = x.dim();
    if w.len() != p || r_b.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "x is {t}x{p}, w has {}, r_b has {}",
            w.len(),
            r_b.len()
        )));
    }
    if t == 0 {
        return Err(Error::InsufficientRows {
            needed: 1,
            available: 0,
        });
    }
    let diff = x.dot(&w) - r_b;
    Ok(diff.dot(&diff) / t as f64)
}

pub fn pearson_corr(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "series lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientRows {
            needed: 2,
            available: a.len(),
        });
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&u, &v) in a.iter().zip(b.iter()) {
        let (du, dv) = (u - ma, v - mb);
        sab += du * dv;
        saa += du * du;
        sbb += dv * dv;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidParameter(
            "correlation is undefined for a constant series".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    /// `Xw`, aligned with the benchmark.
    pub tracked: Vec<f64>,
    pub benchmark: Vec<f64>,
    pub ete: f64,
    pub corr: f64,
}

pub fn evaluate_tracking(
    panel: &ReturnsPanel,
    beta: ArrayView1<'_, f64>,
) -> Result<TrackingResult> {
    let ete = ete(panel.x.view(), beta, panel.r_b.view())?;
    let tracked: Array1<f64> = panel.x.dot(&beta);
    let corr = pearson_corr(tracked.view(), panel.r_b.view())?;
    Ok(TrackingResult {
        tracked: tracked.to_vec(),
        benchmark: panel.r_b.to_vec(),
        ete,
        corr,
    })
}

/// Plot data: `date,benchmark_return,tracked_return`.
pub fn write_tracking_csv<W: Write>(
    writer: W,
    panel: &ReturnsPanel,
    tracked: ArrayView1<'_, f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "benchmark_return", "tracked_return"])?;
    for ((d, b), t) in panel.dates.iter().zip(panel.r_b.iter()).zip(tracked.iter()) {
        w.write_record([d.to_string(), b.to_string(), t.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<tracking csv>", e))?;
    Ok(())
}
