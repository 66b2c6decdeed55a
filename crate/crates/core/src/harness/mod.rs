//! Experiment drivers: risk curves, log-log fits, CSV and SVG output.
//!
//! Every experiment writes into an output directory:
//!
//! * `risk_curve.csv` — `predictor,rho,k,metric,std_err,n_eval`
//! * `fits.csv` — `predictor,rho,slope,intercept,r_squared,k_min`
//! * `train_log_<model>.csv` — one per trained model
//! * experiment-specific extras and SVG plots.
//!
//! Floating-point values are written with Rust's shortest round-trip
//! formatting, so re-running a cell with the same seed reproduces its CSV row
//! byte for byte.

pub mod check;
pub mod config;
pub mod exp1;
pub mod exp2;
pub mod exp3;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::par::Execution;

pub use config::Config;

pub const RISK_CURVE_HEADER: &str = "predictor,rho,k,metric,std_err,n_eval";
pub const FITS_HEADER: &str = "predictor,rho,slope,intercept,r_squared,k_min";

/// Settings shared by every experiment run.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub exec: Execution,
    pub paper_scale: bool,
}

impl RunContext {
    pub fn new(seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        RunContext {
            seed,
            out_dir: out_dir.into(),
            exec: Execution::available(),
            paper_scale: false,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.path(name);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

/// Sample mean and standard error of the mean (`NaN` error for n < 2).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean and standard error of the per-item differences `a_i - b_i`.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired samples of different sizes ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(mean_se(&d))
}

/// FNV-1a over the bit patterns of a stream of floats; used to prove that
/// paired predictors consumed the same evaluation trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamChecksum(u64);

impl Default for StreamChecksum {
    fn default() -> Self {
        StreamChecksum(0xcbf2_9ce4_8422_2325)
    }
}

impl StreamChecksum {
    pub fn update(&mut self, values: &[f64]) {
        for v in values {
            for byte in v.to_bits().to_le_bytes() {
                self.0 ^= byte as u64;
                self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }

    pub fn of_sequences<'a>(seqs: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut c = StreamChecksum::default();
        for s in seqs {
            c.update(s);
        }
        c
    }

    pub fn value(&self) -> u64 {
        self.0
    }

    pub fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

/// One row of a risk curve.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskRow {
    pub predictor: String,
    /// Noise correlation of the evaluation tasks; `NaN` when not applicable.
    pub rho: f64,
    pub k: usize,
    pub metric: f64,
    pub std_err: f64,
    pub n_eval: usize,
}

impl RiskRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.predictor,
            fmt_f64(self.rho),
            self.k,
            fmt_f64(self.metric),
            fmt_f64(self.std_err),
            self.n_eval
        )
    }
}

/// Shortest round-trip representation (`NaN`, `inf` spelled out).
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:e}")
    }
}

/// Metric-versus-context-length table for one or more predictors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RiskCurve {
    pub rows: Vec<RiskRow>,
}

impl RiskCurve {
    /// Appends a row, enforcing `n_eval >= 1` and strictly increasing `k`
    /// within each `(predictor, rho)` series.
    pub fn push(&mut self, row: RiskRow) -> Result<()> {
        if row.n_eval == 0 {
            return Err(Error::InvalidArgument(format!(
                "risk row for {} at k={} has no evaluations",
                row.predictor, row.k
            )));
        }
        if let Some(prev) = self
            .rows
            .iter()
            .rev()
            .find(|r| r.predictor == row.predictor && same_rho(r.rho, row.rho))
        {
            if prev.k >= row.k {
                return Err(Error::InvalidArgument(format!(
                    "context lengths for {} must increase ({} then {})",
                    row.predictor, prev.k, row.k
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Rows of one series, in insertion (= increasing k) order.
    pub fn series(&self, predictor: &str, rho: f64) -> Vec<&RiskRow> {
        self.rows
            .iter()
            .filter(|r| r.predictor == predictor && same_rho(r.rho, rho))
            .collect()
    }

    /// Distinct `(predictor, rho)` keys in first-appearance order.
    pub fn series_keys(&self) -> Vec<(String, f64)> {
        let mut keys: Vec<(String, f64)> = Vec::new();
        for r in &self.rows {
            if !keys
                .iter()
                .any(|(p, rho)| *p == r.predictor && same_rho(*rho, r.rho))
            {
                keys.push((r.predictor.clone(), r.rho));
            }
        }
        keys
    }

    pub fn get(&self, predictor: &str, rho: f64, k: usize) -> Option<&RiskRow> {
        self.series(predictor, rho).into_iter().find(|r| r.k == k)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RISK_CURVE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`RiskCurve::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(RISK_CURVE_HEADER) {
            return Err(Error::InvalidArgument(
                "risk curve CSV header mismatch".into(),
            ));
        }
        let mut curve = RiskCurve::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::InvalidArgument(format!("malformed row: {line}")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad number {s:?}")))
            };
            let int = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad integer {s:?}")))
            };
            curve.push(RiskRow {
                predictor: f[0].to_string(),
                rho: num(f[1])?,
                k: int(f[2])?,
                metric: num(f[3])?,
                std_err: num(f[4])?,
                n_eval: int(f[5])?,
            })?;
        }
        Ok(curve)
    }
}

fn same_rho(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a == b
}

/// Ordinary least squares of `log metric` on `log k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub predictor: String,
    pub rho: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub k_min: usize,
}

impl FitResult {
    /// Placeholder written when a series has too few usable points.
    pub fn unavailable(predictor: &str, rho: f64, k_min: usize) -> Self {
        FitResult {
            predictor: predictor.to_string(),
            rho,
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
            k_min,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.predictor,
            fmt_f64(self.rho),
            fmt_f64(self.slope),
            fmt_f64(self.intercept),
            fmt_f64(self.r_squared),
            self.k_min
        )
    }
}

pub fn fits_to_csv(fits: &[FitResult]) -> String {
    let mut out = String::from(FITS_HEADER);
    out.push('\n');
    for f in fits {
        out.push_str(&f.csv_line());
        out.push('\n');
    }
    out
}

/// Fits `log(metric) = slope * log(k) + intercept` over the rows of one
/// series with `k >= k_min` and a positive, finite metric.
///
/// Fails when fewer than three rows qualify.
pub fn fit_loglog(rows: &[&RiskRow], k_min: usize) -> Result<FitResult> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot fit an empty series".into()))?;
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.k >= k_min && r.k > 0 && r.metric > 0.0 && r.metric.is_finite())
        .map(|r| ((r.k as f64).ln(), r.metric.ln()))
        .collect();
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "{} has {} usable rows with k >= {k_min}; need 3",
            first.predictor,
            points.len()
        )));
    }
    let (slope, intercept, r_squared) = ols(&points)?;
    Ok(FitResult {
        predictor: first.predictor.clone(),
        rho: first.rho,
        slope,
        intercept,
        r_squared,
        k_min,
    })
}

/// Ordinary least squares `y = slope x + intercept`, returning
/// `(slope, intercept, r_squared)`. A perfectly flat response has R² = 1.
pub fn ols(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("regression needs two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all regressors are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    };
    Ok((slope, intercept, r_squared))
}

/// Fits every series of the curve, writing unavailable fits as `NaN` rows.
pub fn fit_all(curve: &RiskCurve, k_min: usize) -> Vec<FitResult> {
    curve
        .series_keys()
        .into_iter()
        .map(|(p, rho)| {
            fit_loglog(&curve.series(&p, rho), k_min)
                .unwrap_or_else(|_| FitResult::unavailable(&p, rho, k_min))
        })
        .collect()
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; values
/// outside the range land in the edge bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 || !(hi > lo) {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for v in values.iter().filter(|v| v.is_finite()) {
        let idx = ((v - lo) / width).floor();
        let idx = if idx < 0.0 {
            0
        } else {
            (idx as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    counts
}

/// `comparison,mean_diff,std_err,n_eval` rows for paired differences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Comparisons {
    pub rows: Vec<(String, f64, f64, usize)>,
}

pub const COMPARISONS_HEADER: &str = "comparison,mean_diff,std_err,n_eval";

impl Comparisons {
    pub fn add(&mut self, name: &str, a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
        let (m, se) = paired_difference(a, b)?;
        self.rows.push((name.to_string(), m, se, a.len()));
        Ok((m, se))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARISONS_HEADER);
        out.push('\n');
        for (name, m, se, n) in &self.rows {
            let _ = writeln!(out, "{name},{},{},{n}", fmt_f64(*m), fmt_f64(*se));
        }
        out
    }
}

/// `predictor,checksum` lines proving which evaluation stream each
/// predictor consumed.
pub fn checksums_to_csv(sums: &BTreeMap<String, StreamChecksum>) -> String {
    let mut out = String::from("predictor,checksum\n");
    for (p, c) in sums {
        let _ = writeln!(out, "{p},{}", c.hex());
    }
    out
}

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}
