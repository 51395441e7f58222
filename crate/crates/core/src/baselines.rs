//! PCA and dynamic PCA comparison models: lag augmentation, fitting,
//! parallel analysis, T²/Q statistics, contributions and threshold
//! calibration.

use serde::{Deserialize, Serialize};

use crate::data::{fit_normalizer, TimeSeriesDataset};
use crate::detection::{calibrate_threshold, far};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{nearest_rank_index, sym_eig, Matrix, Rng};

/// Relative size below which an eigenvalue is treated as zero and dropped.
const EIG_REL_FLOOR: f64 = 1e-12;
const FAR_TOLERANCE: f64 = 0.0025;
const BISECTION_ITERS: usize = 64;

/// Fitted PCA model on (possibly lag-augmented) data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `width × a`, orthonormal columns.
    pub loadings: Matrix,
    /// Descending, strictly positive.
    pub eigenvalues: Vec<f64>,
    /// Number of lagged copies appended to each row (0 for plain PCA).
    pub lag: usize,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Width of the (augmented) vectors the model scores.
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Width of the original, un-augmented data.
    pub fn base_width(&self) -> usize {
        self.width() / (self.lag + 1)
    }

    /// Keeps the leading `a` components.
    pub fn truncate(&self, a: usize) -> Result<Self> {
        if a == 0 || a > self.n_components() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {a} of {} components",
                self.n_components()
            )));
        }
        let w = self.width();
        let mut loadings = Matrix::zeros(w, a);
        for i in 0..w {
            loadings
                .row_mut(i)
                .copy_from_slice(&self.loadings.row(i)[..a]);
        }
        Ok(Self {
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            loadings,
            eigenvalues: self.eigenvalues[..a].to_vec(),
            lag: self.lag,
        })
    }

    fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("PCA input width", self.width(), x.len())?;
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    /// Standardized vector `z`, scores `t = Pᵀz` and residual `e = z − P t`.
    fn project(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let z = self.standardize(x)?;
        let mut t = vec![0.0; self.n_components()];
        self.loadings.matvec_t_acc(&z, &mut t);
        let recon = self.loadings.matvec(&t)?;
        let e = z.iter().zip(&recon).map(|(a, b)| a - b).collect();
        Ok((z, t, e))
    }
}

/// Appends `lag` delayed copies: row `t` becomes `[x_{t+lag}, …, x_t]` of
/// the input, so output row 0 corresponds to input time `lag`.
///
/// `lag = 0` returns the dataset unchanged; otherwise names gain
/// `_lag0…_lagL` suffixes.
pub fn dpca_augment(ds: &TimeSeriesDataset, lag: usize) -> Result<TimeSeriesDataset> {
    if lag == 0 {
        return Ok(ds.clone());
    }
    if lag >= ds.len() {
        return Err(Error::InvalidArgument(format!(
            "lag {lag} needs more than {lag} rows, got {}",
            ds.len()
        )));
    }
    let m = ds.width();
    let rows = ds.len() - lag;
    let width = m * (lag + 1);
    let mut data = Vec::with_capacity(rows * width);
    for t in lag..ds.len() {
        for k in 0..=lag {
            data.extend_from_slice(ds.row(t - k));
        }
    }
    let names = (0..=lag)
        .flat_map(|k| ds.names().iter().map(move |n| format!("{n}_lag{k}")))
        .collect();
    TimeSeriesDataset::with_period(
        Matrix::from_vec(rows, width, data)?,
        names,
        ds.sample_period(),
    )
}

/// Sample covariance (divisor `T − 1`) of the columns of `z`.
fn covariance(z: &Matrix) -> Matrix {
    let (n, p) = z.shape();
    let mut mean = vec![0.0; p];
    for row in z.row_iter() {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut c = Matrix::zeros(p, p);
    let mut d = vec![0.0; p];
    for row in z.row_iter() {
        for ((dj, v), m) in d.iter_mut().zip(row).zip(&mean) {
            *dj = v - m;
        }
        for a in 0..p {
            for b in a..p {
                c[(a, b)] += d[a] * d[b];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..p {
        for b in a..p {
            let v = c[(a, b)] / denom;
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    c
}

fn standardized(ds: &TimeSeriesDataset) -> (Vec<f64>, Vec<f64>, Matrix) {
    let stats = fit_normalizer(ds);
    let mut z = ds.values().clone();
    for t in 0..z.rows() {
        for (j, v) in z.row_mut(t).iter_mut().enumerate() {
            *v = (*v - stats.mean[j]) / stats.scale[j];
        }
    }
    (stats.mean, stats.scale, z)
}

fn eigenvalues_desc(z: &Matrix) -> Result<Vec<f64>> {
    Ok(sym_eig(&covariance(z))?.values)
}

/// Full PCA of `ds`: z-score each column, eigendecompose the covariance and
/// keep every component with a numerically positive eigenvalue.
pub fn fit_pca(ds: &TimeSeriesDataset) -> Result<PcaModel> {
    let (mean, scale, z) = standardized(ds);
    let eig = sym_eig(&covariance(&z))?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let a = eig
        .values
        .iter()
        .take_while(|&&v| v > top * EIG_REL_FLOOR && v > 0.0)
        .count();
    if a == 0 {
        return Err(Error::InvalidArgument(
            "PCA on data with zero variance".into(),
        ));
    }
    let w = ds.width();
    let mut loadings = Matrix::zeros(w, a);
    for i in 0..w {
        loadings
            .row_mut(i)
            .copy_from_slice(&eig.vectors.row(i)[..a]);
    }
    Ok(PcaModel {
        mean,
        scale,
        loadings,
        eigenvalues: eig.values[..a].to_vec(),
        lag: 0,
    })
}

/// Full PCA of the lag-augmented data.
pub fn fit_dpca(ds: &TimeSeriesDataset, lag: usize) -> Result<PcaModel> {
    let mut model = fit_pca(&dpca_augment(ds, lag)?)?;
    model.lag = lag;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelAnalysis {
    /// Retained component count (at least 1).
    pub a: usize,
    /// True when no eigenvalue beat its null quantile and `a` was floored at 1.
    pub floored: bool,
    pub eigenvalues: Vec<f64>,
    /// Per-rank null quantiles from the permuted datasets.
    pub null_quantiles: Vec<f64>,
}

/// Parallel analysis with column permutations: `a` is the length of the
/// leading run of real eigenvalues exceeding the `quantile` of the
/// same-rank eigenvalues of `n_draws` independently column-permuted copies.
pub fn parallel_analysis(
    ds: &TimeSeriesDataset,
    n_draws: usize,
    quantile: f64,
    seed: u64,
) -> Result<ParallelAnalysis> {
    if n_draws < 10 {
        return Err(Error::InvalidArgument(format!(
            "n_draws must be >= 10, got {n_draws}"
        )));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile {quantile} outside (0, 1)"
        )));
    }
    let (_, _, z) = standardized(ds);
    let eigenvalues = eigenvalues_desc(&z)?;
    let (n, p) = z.shape();
    let mut rng = Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = (0..p).map(|j| z.col(j)).collect();
    let mut null: Vec<Vec<f64>> = vec![Vec::with_capacity(n_draws); p];
    let mut permuted = Matrix::zeros(n, p);
    for _ in 0..n_draws {
        for (j, c) in columns.iter_mut().enumerate() {
            rng.shuffle(c);
            for (t, v) in c.iter().enumerate() {
                permuted[(t, j)] = *v;
            }
        }
        for (rank, v) in eigenvalues_desc(&permuted)?.into_iter().enumerate() {
            null[rank].push(v);
        }
    }
    let null_quantiles: Vec<f64> = null
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            v[nearest_rank_index(v.len(), quantile)]
        })
        .collect();
    let run = eigenvalues
        .iter()
        .zip(&null_quantiles)
        .take_while(|(real, q)| real > q)
        .count();
    Ok(ParallelAnalysis {
        a: run.max(1),
        floored: run == 0,
        eigenvalues,
        null_quantiles,
    })
}

/// Hotelling `T² = Σ t_i² / λ_i`.
pub fn t2_statistic(x: &[f64], model: &PcaModel) -> Result<f64> {
    let (_, t, _) = model.project(x)?;
    Ok(t.iter()
        .zip(&model.eigenvalues)
        .map(|(ti, l)| ti * ti / l)
        .sum())
}

/// Squared prediction error `Q = ‖z − P Pᵀ z‖²`.
pub fn q_statistic(x: &[f64], model: &PcaModel) -> Result<f64> {
    let (_, _, e) = model.project(x)?;
    Ok(e.iter().map(|v| v * v).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributions {
    /// `Σ_i (t_i/λ_i)·P_ji·z_j`, clipped at zero.
    pub t2: Vec<f64>,
    /// Squared residual `e_j²`.
    pub q: Vec<f64>,
}

/// Per-variable T² and Q contributions over the augmented vector.
pub fn contributions(x: &[f64], model: &PcaModel) -> Result<Contributions> {
    let (z, t, e) = model.project(x)?;
    let weights: Vec<f64> = t
        .iter()
        .zip(&model.eigenvalues)
        .map(|(ti, l)| ti / l)
        .collect();
    let t2 = (0..model.width())
        .map(|j| {
            let s: f64 = model
                .loadings
                .row(j)
                .iter()
                .zip(&weights)
                .map(|(p, w)| p * w)
                .sum();
            (s * z[j]).max(0.0)
        })
        .collect();
    let q = e.iter().map(|v| v * v).collect();
    Ok(Contributions { t2, q })
}

/// Sums the lag blocks of an augmented-width vector per original variable.
pub fn fold_lags(values: &[f64], base_width: usize) -> Vec<f64> {
    let mut out = vec![0.0; base_width];
    for (j, v) in values.iter().enumerate() {
        out[j % base_width] += v;
    }
    out
}

/// Which statistics raise alarms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlarmRule {
    /// Full model: T² only.
    T2,
    /// Reduced model: T² or Q, with thresholds scaled jointly.
    T2OrQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineThresholds {
    pub rule: AlarmRule,
    pub t2: f64,
    pub q: Option<f64>,
    /// Joint factor applied to the percentile thresholds (1 for the T² rule).
    pub scale_factor: f64,
    /// FAR the thresholds achieve on the calibration data.
    pub validation_far: f64,
}

impl BaselineThresholds {
    pub fn alarm(&self, t2: f64, q: f64) -> bool {
        t2 > self.t2 || self.q.is_some_and(|th| q > th)
    }
}

/// One scored step of a baseline monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFrame {
    /// Index into the original (un-augmented) series.
    pub t: usize,
    pub t2: f64,
    pub q: f64,
    pub alarm: bool,
    /// Contributions folded to the original variables.
    pub contributions: Contributions,
}

/// T² and Q of every augmented row of `ds`.
pub fn score_series(model: &PcaModel, ds: &TimeSeriesDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("baseline data width", model.base_width(), ds.width())?;
    let aug = dpca_augment(ds, model.lag)?;
    let mut t2 = Vec::with_capacity(aug.len());
    let mut q = Vec::with_capacity(aug.len());
    for row in aug.values().row_iter() {
        t2.push(t2_statistic(row, model)?);
        q.push(q_statistic(row, model)?);
    }
    Ok((t2, q))
}

/// Nearest-rank thresholds on validation statistics. For [`AlarmRule::T2OrQ`]
/// both percentile thresholds are multiplied by a common factor found by
/// bisection so the combined validation FAR lands within ±0.0025 of `alpha`.
pub fn calibrate_baseline(
    t2_val: &[f64],
    q_val: &[f64],
    alpha: f64,
    rule: AlarmRule,
) -> Result<BaselineThresholds> {
    check_dim("validation Q length", t2_val.len(), q_val.len())?;
    let t2_base = calibrate_threshold(t2_val, alpha)?;
    if rule == AlarmRule::T2 {
        let alarms: Vec<bool> = t2_val.iter().map(|&v| v > t2_base).collect();
        return Ok(BaselineThresholds {
            rule,
            t2: t2_base,
            q: None,
            scale_factor: 1.0,
            validation_far: far(&alarms)?,
        });
    }
    let q_base = calibrate_threshold(q_val, alpha)?;
    let far_at = |c: f64| {
        let hits = t2_val
            .iter()
            .zip(q_val)
            .filter(|&(&t, &q)| t > c * t2_base || q > c * q_base)
            .count();
        hits as f64 / t2_val.len() as f64
    };
    let mut hi = 1.0;
    let mut doublings = 0;
    while far_at(hi) > alpha {
        hi *= 2.0;
        doublings += 1;
        if doublings > BISECTION_ITERS {
            return Err(Error::NotConverged(
                "threshold scale factor has no upper bracket".into(),
            ));
        }
    }
    let mut lo = 0.0;
    let mut chosen = None;
    if (far_at(hi) - alpha).abs() <= FAR_TOLERANCE {
        chosen = Some(hi);
    }
    let mut iter = 0;
    while chosen.is_none() && iter < BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let f = far_at(mid);
        if (f - alpha).abs() <= FAR_TOLERANCE {
            chosen = Some(mid);
        } else if f > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    let c = chosen.ok_or_else(|| {
        Error::NotConverged(format!(
            "joint T²/Q scaling could not reach FAR {alpha} ± {FAR_TOLERANCE} in {BISECTION_ITERS} iterations"
        ))
    })?;
    Ok(BaselineThresholds {
        rule,
        t2: c * t2_base,
        q: Some(c * q_base),
        scale_factor: c,
        validation_far: far_at(c),
    })
}

/// Output of [`calibrate_and_monitor`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub thresholds: BaselineThresholds,
    pub frames: Vec<BaselineFrame>,
}

impl BaselineRun {
    /// Alarm per original time index; the first `lag` steps have no score and
    /// are reported as not alarmed.
    pub fn alarm_series(&self, len: usize) -> Vec<bool> {
        let mut out = vec![false; len];
        for f in &self.frames {
            if f.t < len {
                out[f.t] = f.alarm;
            }
        }
        out
    }
}

/// Calibrates thresholds on `val` and scores every step of `test`.
///
/// Both datasets are raw (un-augmented) series in the units the model was
/// fitted on; augmentation happens here.
pub fn calibrate_and_monitor(
    model: &PcaModel,
    val: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    alpha: f64,
    rule: AlarmRule,
) -> Result<BaselineRun> {
    let (t2_val, q_val) = score_series(model, val)?;
    let thresholds = calibrate_baseline(&t2_val, &q_val, alpha, rule)?;
    check_dim("baseline data width", model.base_width(), test.width())?;
    let aug = dpca_augment(test, model.lag)?;
    let base = model.base_width();
    let frames = aug
        .values()
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let t2 = t2_statistic(row, model)?;
            let q = q_statistic(row, model)?;
            let c = contributions(row, model)?;
            Ok(BaselineFrame {
                t: i + model.lag,
                t2,
                q,
                alarm: thresholds.alarm(t2, q),
                contributions: Contributions {
                    t2: fold_lags(&c.t2, base),
                    q: fold_lags(&c.q, base),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineRun { thresholds, frames })
}
