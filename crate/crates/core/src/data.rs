//! Dataset ingestion, sequential splitting, scaling and windowing.
//!
//! The input format ("txt-matrix") is plain text with one time step per
//! line and N comma-separated decimal values per line, optionally
//! gzip-compressed (detected by a `.gz` extension). This matches the
//! distribution format of the solar/electricity/traffic benchmarks.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::time::Duration;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Immutable multivariate panel: `values` is T×N, one column per series.
#[derive(Debug, Clone)]
pub struct TimeSeriesDataset {
    values: Array2<f64>,
    series_names: Vec<String>,
    sample_period: Duration,
}

impl TimeSeriesDataset {
    /// Builds a dataset, enforcing T ≥ 2, N ≥ 2 and the no-NaN invariant.
    pub fn new(
        values: Array2<f64>,
        series_names: Vec<String>,
        sample_period: Duration,
    ) -> Result<Self> {
        let (t, n) = values.dim();
        if t < 2 {
            return Err(Error::Dimension(format!("need at least 2 time steps, got {t}")));
        }
        if n < 2 {
            return Err(Error::Dimension(format!("need at least 2 series, got {n}")));
        }
        if series_names.len() != n {
            return Err(Error::Dimension(format!(
                "{} series names for {n} series",
                series_names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension(
                "dataset contains non-finite values after load".into(),
            ));
        }
        Ok(Self {
            values,
            series_names,
            sample_period,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    pub fn sample_period(&self) -> Duration {
        self.sample_period
    }

    /// Row-range view of the panel as a new dataset (used by splits).
    fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        TimeSeriesDataset::new(
            self.values.slice(ndarray::s![start..end, ..]).to_owned(),
            self.series_names.clone(),
            self.sample_period,
        )
    }
}

/// Fractions of the panel assigned to train/valid/test, in time order.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.6,
            valid_fraction: 0.2,
            test_fraction: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fs = [self.train_fraction, self.valid_fraction, self.test_fraction];
        if fs.iter().any(|f| *f <= 0.0) {
            return Err(Error::Config("split fractions must be positive".into()));
        }
        let sum: f64 = fs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// One supervised sample: an N×L window ending at time `t` and the
/// N-vector target at `t + h`.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub input: Array2<f64>,
    pub target: Array1<f64>,
    pub t: usize,
    pub h: usize,
}

/// Per-series max-abs scaler fit on the training split.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub per_series_scale: Vec<f64>,
}

/// How to treat missing values on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MissingPolicy {
    /// Any NaN is a load error (default; the benchmark files have no gaps).
    Reject,
    /// NaN replaced by the previous value of the same series; a NaN in
    /// the first row is still an error.
    ForwardFill,
}

/// Input file format identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// One time step per line, N comma-separated floats.
    TxtMatrix,
}

/// Loads a txt-matrix file (gzip detected by `.gz` extension).
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<TimeSeriesDataset> {
    load_dataset_with(path, format, MissingPolicy::Reject)
}

pub fn load_dataset_with(
    path: &Path,
    format: DataFormat,
    missing: MissingPolicy,
) -> Result<TimeSeriesDataset> {
    let DataFormat::TxtMatrix = format;
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_txt_matrix(BufReader::new(reader), missing)
}

fn parse_txt_matrix<R: BufRead>(reader: R, missing: MissingPolicy) -> Result<TimeSeriesDataset> {
    let mut rows: Vec<f64> = Vec::new();
    let mut n: Option<usize> = None;
    let mut t = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let start = rows.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric field {:?}", field.trim()),
            })?;
            rows.push(v);
        }
        let width = rows.len() - start;
        match n {
            None => n = Some(width),
            Some(expect) if expect != width => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("ragged row: expected {expect} fields, got {width}"),
                })
            }
            _ => {}
        }
        t += 1;
    }
    let n = n.ok_or(Error::Parse {
        line: 0,
        msg: "empty file".into(),
    })?;
    if n < 2 {
        return Err(Error::Dimension(format!("need at least 2 series, got {n}")));
    }
    let mut values =
        Array2::from_shape_vec((t, n), rows).map_err(|e| Error::Dimension(e.to_string()))?;
    match missing {
        MissingPolicy::Reject => {
            for (i, row) in values.rows().into_iter().enumerate() {
                if row.iter().any(|v| v.is_nan()) {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "missing value (NaN); enable forward-fill imputation to accept".into(),
                    });
                }
            }
        }
        MissingPolicy::ForwardFill => {
            for j in 0..n {
                if values[(0, j)].is_nan() {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("series {j} starts with a missing value; nothing to fill from"),
                    });
                }
                for i in 1..t {
                    if values[(i, j)].is_nan() {
                        values[(i, j)] = values[(i - 1, j)];
                    }
                }
            }
        }
    }
    let names = (0..n).map(|j| format!("s{j}")).collect();
    TimeSeriesDataset::new(values, names, Duration::from_secs(0))
}

/// Sequential, contiguous, non-overlapping split. Train and valid get
/// `floor(fraction · T)` rows; the remainder (latest data) goes to test.
pub fn split(
    ds: &TimeSeriesDataset,
    spec: &SplitSpec,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset)> {
    spec.validate()?;
    let t = ds.len();
    let n_train = (spec.train_fraction * t as f64).floor() as usize;
    let n_valid = (spec.valid_fraction * t as f64).floor() as usize;
    if n_train < 2 || n_valid < 2 || t - n_train - n_valid < 2 {
        return Err(Error::Config(format!(
            "split of T={t} leaves a segment with fewer than 2 rows"
        )));
    }
    Ok((
        ds.slice_rows(0, n_train)?,
        ds.slice_rows(n_train, n_train + n_valid)?,
        ds.slice_rows(n_train + n_valid, t)?,
    ))
}

/// Fits the per-series max-abs scaler; an all-zero series gets scale 1.
pub fn fit_scaler(train: &TimeSeriesDataset) -> Scaler {
    let scale = train
        .values()
        .axis_iter(Axis(1))
        .map(|col| {
            let m = col.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if m == 0.0 {
                1.0
            } else {
                m
            }
        })
        .collect();
    Scaler {
        per_series_scale: scale,
    }
}

impl Scaler {
    pub fn apply(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        let mut values = ds.values().to_owned();
        self.check(ds.n_series())?;
        for (j, s) in self.per_series_scale.iter().enumerate() {
            values.column_mut(j).mapv_inplace(|v| v / s);
        }
        TimeSeriesDataset::new(values, ds.series_names().to_vec(), ds.sample_period())
    }

    pub fn invert(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        let mut values = ds.values().to_owned();
        self.check(ds.n_series())?;
        for (j, s) in self.per_series_scale.iter().enumerate() {
            values.column_mut(j).mapv_inplace(|v| v * s);
        }
        TimeSeriesDataset::new(values, ds.series_names().to_vec(), ds.sample_period())
    }

    /// Rescales one series' predictions back to the original units.
    pub fn invert_series(&self, series: usize, v: f64) -> f64 {
        v * self.per_series_scale[series]
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.per_series_scale.len() != n {
            return Err(Error::Dimension(format!(
                "scaler has {} series, dataset has {n}",
                self.per_series_scale.len()
            )));
        }
        Ok(())
    }
}

/// Number of windows available for a panel of length `t`.
pub fn window_count(t: usize, window: usize, horizon: usize) -> usize {
    (t + 1).saturating_sub(window + horizon)
}

/// Produces all single-step supervised samples: sample `j` has input
/// rows `j .. j+window-1` (stored N×L) and target row `j+window-1+h`.
pub fn make_windows(
    ds: &TimeSeriesDataset,
    window: usize,
    horizon: usize,
) -> Result<Vec<WindowSample>> {
    if window == 0 || horizon == 0 {
        return Err(Error::Config("window and horizon must be at least 1".into()));
    }
    let t = ds.len();
    let count = window_count(t, window, horizon);
    if count == 0 {
        return Err(Error::Config(format!(
            "panel of length {t} has no room for window {window} plus horizon {horizon}"
        )));
    }
    let values = ds.values();
    let n = ds.n_series();
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let end = j + window; // exclusive
        let mut input = Array2::zeros((n, window));
        for (l, row) in values.slice(ndarray::s![j..end, ..]).rows().into_iter().enumerate() {
            for i in 0..n {
                input[(i, l)] = row[i];
            }
        }
        let target = values.row(end - 1 + horizon).to_owned();
        out.push(WindowSample {
            input,
            target,
            t: end - 1,
            h: horizon,
        });
    }
    Ok(out)
}

/// Convenience view of one series.
pub fn series(ds: &TimeSeriesDataset, i: usize) -> ArrayView1<'_, f64> {
    ds.values.column(i)
}
