//! Detection statistics (squared Mahalanobis distance and local density
//! ratio), percentile threshold calibration and FAR/FDR scoring.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{nearest_rank_index, spd_solve, Matrix};
use crate::posterior::PredictiveSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMethod {
    Mahalanobis,
    Ldr,
}

impl std::str::FromStr for DetectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mahalanobis" => Ok(Self::Mahalanobis),
            "ldr" => Ok(Self::Ldr),
            other => Err(Error::InvalidArgument(format!(
                "unknown detection method '{other}' (expected mahalanobis or ldr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub method: DetectionMethod,
    /// Target false alarm rate.
    pub alpha: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub ridge: f64,
    pub eps_dist: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            method: DetectionMethod::Mahalanobis,
            alpha: 0.05,
            k_min: 10,
            k_max: 20,
            ridge: 1e-8,
            eps_dist: 1e-12,
        }
    }
}

impl DetectionConfig {
    /// Checks the configuration against an ensemble of `n_samples`.
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        check_k_range(self.k_min, self.k_max, n_samples)?;
        if !(self.ridge >= 0.0) || !(self.eps_dist > 0.0) {
            return Err(Error::InvalidArgument(
                "need ridge >= 0 and eps_dist > 0".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn check_k_range(k_min: usize, k_max: usize, n_samples: usize) -> Result<()> {
    if k_min < 2 || k_min > k_max {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= k_min <= k_max, got k_min={k_min}, k_max={k_max}"
        )));
    }
    if k_max >= n_samples {
        return Err(Error::InvalidArgument(format!(
            "k_max={k_max} needs at least {} samples, got {n_samples}",
            k_max + 1
        )));
    }
    Ok(())
}

/// `(x − μ)ᵀ (S + ridge·I)⁻¹ (x − μ)` via a Cholesky solve.
pub fn mahalanobis_sq(x: &[f64], mu: &[f64], s: &Matrix, ridge: f64) -> Result<f64> {
    check_dim("mahalanobis_sq mean", x.len(), mu.len())?;
    check_dim("mahalanobis_sq covariance", x.len(), s.rows())?;
    let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let sol = spd_solve(s, &d, ridge)?;
    let m2: f64 = d.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
    Ok(m2.max(0.0))
}

/// Sample indices sorted by `(distance, index)`, truncated to `k`,
/// optionally skipping one index.
fn nearest(dists: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dists.len()).filter(|&i| Some(i) != exclude).collect();
    let cmp = |a: &usize, b: &usize| dists[*a].total_cmp(&dists[*b]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Cumulative sums of floored neighbor distances; entry `j` holds the sum
/// over the `j + 1` nearest.
fn floored_prefix(dists: &[f64], order: &[usize], eps: f64) -> Vec<f64> {
    let mut acc = 0.0;
    order
        .iter()
        .map(|&i| {
            acc += dists[i].max(eps);
            acc
        })
        .collect()
}

/// Local density ratio driven by a pairwise distance function.
///
/// `dx[i]` is the distance from the observation to sample `i`, and
/// `pair(i, buf)` fills `buf` with the distances from sample `i` to every
/// sample. Neighbor sums run in ascending `(distance, index)` order.
fn ldr_core(
    dx: &[f64],
    mut pair: impl FnMut(usize, &mut [f64]),
    k_min: usize,
    k_max: usize,
    eps: f64,
) -> Result<f64> {
    let n = dx.len();
    check_k_range(k_min, k_max, n)?;
    let nx = nearest(dx, k_max, coincident(dx));
    let prefix_x = floored_prefix(dx, &nx, eps);
    let mut buf = vec![0.0; n];
    let prefix_p: Vec<Vec<f64>> = nx
        .iter()
        .map(|&p| {
            pair(p, &mut buf);
            let order = nearest(&buf, k_max, Some(p));
            floored_prefix(&buf, &order, eps)
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    for k in k_min..=k_max {
        let kf = k as f64;
        let f_x = kf / prefix_x[k - 1];
        let mean_p = prefix_p[..k].iter().map(|pre| kf / pre[k - 1]).sum::<f64>() / kf;
        best = best.max(mean_p / f_x);
    }
    Ok(best)
}

/// First sample sitting exactly on the observation; it is left out of the
/// observation's own neighbor set.
fn coincident(dx: &[f64]) -> Option<usize> {
    dx.iter().position(|&d| d == 0.0)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// k-nearest-neighbor density `k / Σ max(d, ε)` at an arbitrary point.
///
/// When `x` coincides with a sample, that sample (the lowest-indexed one) is
/// not its own neighbor.
pub fn knn_density(x: &[f64], samples: &Matrix, k: usize, eps_dist: f64) -> Result<f64> {
    check_dim("knn_density", samples.cols(), x.len())?;
    let d: Vec<f64> = samples.row_iter().map(|r| euclid(x, r)).collect();
    let exclude = coincident(&d);
    knn_density_from(d, k, exclude, eps_dist)
}

/// Density at sample `i`, searching the remaining samples.
pub fn knn_density_at_sample(samples: &Matrix, i: usize, k: usize, eps_dist: f64) -> Result<f64> {
    if i >= samples.rows() {
        return Err(Error::InvalidArgument(format!(
            "sample index {i} out of range"
        )));
    }
    let xi = samples.row(i);
    let d = samples.row_iter().map(|r| euclid(xi, r)).collect();
    knn_density_from(d, k, Some(i), eps_dist)
}

fn knn_density_from(d: Vec<f64>, k: usize, exclude: Option<usize>, eps: f64) -> Result<f64> {
    if k == 0 || k >= d.len() {
        return Err(Error::InvalidArgument(format!(
            "k={k} needs more than {k} samples, got {}",
            d.len()
        )));
    }
    let order = nearest(&d, k, exclude);
    Ok(k as f64 / floored_prefix(&d, &order, eps)[k - 1])
}

/// Maximum over `k ∈ [k_min, k_max]` of the local density ratio of `x`
/// against `samples` (rows).
pub fn ldr(x: &[f64], samples: &Matrix, k_min: usize, k_max: usize, eps_dist: f64) -> Result<f64> {
    check_dim("ldr", samples.cols(), x.len())?;
    let dx: Vec<f64> = samples.row_iter().map(|r| euclid(x, r)).collect();
    ldr_core(
        &dx,
        |p, buf| {
            let sp = samples.row(p);
            for (b, r) in buf.iter_mut().zip(samples.row_iter()) {
                *b = euclid(sp, r);
            }
        },
        k_min,
        k_max,
        eps_dist,
    )
}

/// One-dimensional LDR of scalar `x` against the values in `column`.
pub fn ldr_scalar(
    x: f64,
    column: &[f64],
    k_min: usize,
    k_max: usize,
    eps_dist: f64,
) -> Result<f64> {
    let dx: Vec<f64> = column.iter().map(|v| (x - v).abs()).collect();
    ldr_core(
        &dx,
        |p, buf| {
            let cp = column[p];
            for (b, v) in buf.iter_mut().zip(column) {
                *b = (cp - v).abs();
            }
        },
        k_min,
        k_max,
        eps_dist,
    )
}

/// Detection statistic of observation `x` under the configured method.
pub fn detection_statistic(
    x: &[f64],
    summary: &PredictiveSummary,
    cfg: &DetectionConfig,
) -> Result<f64> {
    match cfg.method {
        DetectionMethod::Mahalanobis => mahalanobis_sq(x, &summary.mean, &summary.cov, cfg.ridge),
        DetectionMethod::Ldr => ldr(x, &summary.samples, cfg.k_min, cfg.k_max, cfg.eps_dist),
    }
}

/// Whether `n` calibration values can resolve a `1 − α` percentile.
pub fn threshold_resolution_ok(n: usize, alpha: f64) -> bool {
    n as f64 >= (1.0 / alpha - 1e-9).ceil()
}

/// Nearest-rank `100(1 − α)`th percentile of the validation statistics.
pub fn calibrate_threshold(validation_stats: &[f64], alpha: f64) -> Result<f64> {
    if validation_stats.is_empty() {
        return Err(Error::InvalidArgument(
            "no validation statistics to calibrate on".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    let mut sorted = validation_stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank_index(sorted.len(), 1.0 - alpha)])
}

/// Alarms raised by strict exceedance.
pub fn alarms(stats: &[f64], threshold: f64) -> Vec<bool> {
    stats.iter().map(|&s| s > threshold).collect()
}

/// Fraction of alarmed samples over a fault-free span.
pub fn far(alarms: &[bool]) -> Result<f64> {
    if alarms.is_empty() {
        return Err(Error::InvalidArgument("FAR over an empty span".into()));
    }
    Ok(alarms.iter().filter(|&&a| a).count() as f64 / alarms.len() as f64)
}

/// Fraction of alarmed samples at indices `>= onset`.
pub fn fdr(alarms: &[bool], onset: usize) -> Result<f64> {
    if onset >= alarms.len() {
        return Err(Error::InvalidArgument(format!(
            "onset {onset} outside series of length {}",
            alarms.len()
        )));
    }
    far(&alarms[onset..])
}

/// One monitored time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorFrame {
    pub t: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub alarm: bool,
    pub identification: Option<crate::identification::IdentificationFrame>,
}

impl MonitorFrame {
    pub fn new(t: usize, statistic: f64, threshold: f64) -> Self {
        Self {
            t,
            statistic,
            threshold,
            alarm: statistic > threshold,
            identification: None,
        }
    }
}
