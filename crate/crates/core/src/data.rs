//! Multivariate time-series containers, the CSV contract, z-score
//! normalization and contiguous train/validation/test splitting.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{column_mean_std, Matrix};

/// Scale floor for near-constant columns.
pub const SCALE_FLOOR: f64 = 1e-8;

/// A `T × m` block of readings, one row per sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    values: Matrix,
    names: Vec<String>,
    sample_period: f64,
    normalized_with: Option<u64>,
}

impl TimeSeriesDataset {
    pub fn new(values: Matrix, names: Vec<String>) -> Result<Self> {
        Self::with_period(values, names, 1.0)
    }

    pub fn with_period(values: Matrix, names: Vec<String>, sample_period: f64) -> Result<Self> {
        if values.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least 2 rows, got {}",
                values.rows()
            )));
        }
        if values.cols() == 0 {
            return Err(Error::InvalidArgument(
                "dataset needs at least one column".into(),
            ));
        }
        check_dim("dataset names", values.cols(), names.len())?;
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate variable name '{n}'"
                )));
            }
        }
        if let Some(i) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "dataset entry at row {}, column {}",
                i / values.cols(),
                names[i % values.cols()]
            )));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        Ok(Self {
            values,
            names,
            sample_period,
            normalized_with: None,
        })
    }

    /// Builds a dataset with generated names `x0, x1, ...`.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        let names = (0..values.cols()).map(|j| format!("x{j}")).collect();
        Self::new(values, names)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Number of sampling instants `T`.
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    /// Number of variables `m`.
    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    /// Fingerprint of the normalization applied to this dataset, if any.
    pub fn normalized_with(&self) -> Option<u64> {
        self.normalized_with
    }

    /// Rows `start..end` as a new dataset (at least two rows).
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{end} invalid for {} rows",
                self.len()
            )));
        }
        let m = self.width();
        let data = self.values.as_slice()[start * m..end * m].to_vec();
        let mut out = Self::with_period(
            Matrix::from_vec(end - start, m, data)?,
            self.names.clone(),
            self.sample_period,
        )?;
        out.normalized_with = self.normalized_with;
        Ok(out)
    }

    /// Stacks datasets with identical columns in order.
    pub fn concat(parts: &[&TimeSeriesDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.names != first.names {
                return Err(Error::InvalidArgument("concat: column names differ".into()));
            }
            data.extend_from_slice(p.values.as_slice());
            rows += p.len();
        }
        let mut out = Self::with_period(
            Matrix::from_vec(rows, first.width(), data)?,
            first.names.clone(),
            first.sample_period,
        )?;
        out.normalized_with = first.normalized_with;
        Ok(out)
    }
}

/// Per-column centering and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Columns whose scale hit [`SCALE_FLOOR`].
    #[serde(default)]
    pub floored: Vec<usize>,
}

impl NormalizationStats {
    /// FNV-1a over the bit patterns of `mean` and `scale`.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.mean.iter().chain(&self.scale) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Column sample means and standard deviations (divisor `T − 1`), with
/// near-constant columns floored at [`SCALE_FLOOR`] and listed in `floored`.
pub fn fit_normalizer(ds: &TimeSeriesDataset) -> NormalizationStats {
    let (mean, std) = column_mean_std(ds.values());
    let mut floored = Vec::new();
    let scale = std
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            if s < SCALE_FLOOR {
                floored.push(j);
                SCALE_FLOOR
            } else {
                s
            }
        })
        .collect();
    NormalizationStats {
        mean,
        scale,
        floored,
    }
}

pub fn normalize(ds: &TimeSeriesDataset, stats: &NormalizationStats) -> Result<TimeSeriesDataset> {
    check_dim("normalize", ds.width(), stats.width())?;
    let mut values = ds.values.clone();
    for t in 0..values.rows() {
        for (j, v) in values.row_mut(t).iter_mut().enumerate() {
            *v = (*v - stats.mean[j]) / stats.scale[j];
        }
    }
    let mut out = TimeSeriesDataset::with_period(values, ds.names.clone(), ds.sample_period)?;
    out.normalized_with = Some(stats.fingerprint());
    Ok(out)
}

pub fn denormalize(
    ds: &TimeSeriesDataset,
    stats: &NormalizationStats,
) -> Result<TimeSeriesDataset> {
    check_dim("denormalize", ds.width(), stats.width())?;
    let mut values = ds.values.clone();
    for t in 0..values.rows() {
        for (j, v) in values.row_mut(t).iter_mut().enumerate() {
            *v = *v * stats.scale[j] + stats.mean[j];
        }
    }
    TimeSeriesDataset::with_period(values, ds.names.clone(), ds.sample_period)
}

/// Fractions of a contiguous three-way split; the test block takes the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

/// Splits into contiguous, ordered train / validation / test blocks.
pub fn split(
    ds: &TimeSeriesDataset,
    spec: SplitSpec,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset)> {
    let (tf, vf) = (spec.train_fraction, spec.validation_fraction);
    if !(tf > 0.0 && tf < 1.0 && vf > 0.0 && vf < 1.0 && tf + vf < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must lie in (0,1) with sum < 1, got {tf} and {vf}"
        )));
    }
    let t = ds.len();
    let n_train = (t as f64 * tf + 1e-9).floor() as usize;
    let n_val = (t as f64 * vf + 1e-9).floor() as usize;
    let n_test = t.saturating_sub(n_train + n_val);
    for (name, n) in [
        ("training", n_train),
        ("validation", n_val),
        ("test", n_test),
    ] {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "split leaves the {name} block with {n} rows (need at least 2)"
            )));
        }
    }
    Ok((
        ds.slice_rows(0, n_train)?,
        ds.slice_rows(n_train, n_train + n_val)?,
        ds.slice_rows(n_train + n_val, t)?,
    ))
}

/// Formats with 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_csv(text: &str) -> Result<TimeSeriesDataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .filter(|h| !h.trim().is_empty())
        .ok_or_else(|| Error::Csv("empty file".into()))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if let Some(j) = names.iter().position(String::is_empty) {
        return Err(Error::Csv(format!(
            "empty variable name in header column {}",
            j + 1
        )));
    }
    let mut seen = HashSet::new();
    for n in &names {
        if !seen.insert(n.as_str()) {
            return Err(Error::Csv(format!("duplicate variable name '{n}'")));
        }
    }

    let mut body: Vec<&str> = lines.collect();
    while body.last().is_some_and(|l| l.trim().is_empty()) {
        body.pop();
    }
    if body.is_empty() {
        return Err(Error::Csv("no data rows".into()));
    }
    let m = names.len();
    let mut data = Vec::with_capacity(body.len() * m);
    for (i, line) in body.iter().enumerate() {
        let row = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m {
            return Err(Error::Csv(format!(
                "ragged row {row}: {} fields, expected {m}",
                fields.len()
            )));
        }
        for (field, name) in fields.iter().zip(&names) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Csv(format!("non-numeric cell at row {row}, column {name}")))?;
            if !v.is_finite() {
                return Err(Error::Csv(format!(
                    "non-finite cell at row {row}, column {name}"
                )));
            }
            data.push(v);
        }
    }
    if body.len() < 2 {
        return Err(Error::Csv(format!(
            "need at least 2 data rows, found {}",
            body.len()
        )));
    }
    TimeSeriesDataset::new(Matrix::from_vec(body.len(), m, data)?, names)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesDataset> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_csv(&text)
}

pub fn to_csv_string(ds: &TimeSeriesDataset) -> String {
    let mut out = ds.names.join(",");
    out.push('\n');
    for row in ds.values.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, to_csv_string(ds).as_bytes())
}

/// Writes through a sibling temporary file and renames it into place, so a
/// crash never leaves a truncated output behind.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
