//! Dense linear algebra, seeded random numbers and order statistics shared by
//! every other module.

mod decomp;
mod matrix;
mod rng;

pub use decomp::{cholesky, cholesky_solve, spd_solve, sym_eig, SpdSolution, SymEig};
pub use matrix::{dot, ensure_finite, norm_sq, Matrix};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Empirical quantile by the nearest-rank rule: sort ascending and take the
/// element at 1-based position `ceil(q·n)`.
///
/// A 1e-9 slack absorbs representation error in `q·n` (so `0.95·100` maps
/// to rank 95, not 96).
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty list".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile {q} outside (0, 1)"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank_index(sorted.len(), q)])
}

/// 0-based index of the nearest-rank order statistic.
pub(crate) fn nearest_rank_index(n: usize, q: f64) -> usize {
    let rank = (q * n as f64 - 1e-9).ceil().max(1.0) as usize;
    rank.min(n) - 1
}

/// Column means and sample standard deviations (divisor `n - 1`).
pub(crate) fn column_mean_std(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, p) = m.shape();
    let mut mean = vec![0.0; p];
    for row in m.row_iter() {
        for (acc, x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);
    let mut var = vec![0.0; p];
    for row in m.row_iter() {
        for ((acc, x), mu) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (x - mu) * (x - mu);
        }
    }
    let denom = (n.max(2) - 1) as f64;
    let std = var.into_iter().map(|v| (v / denom).sqrt()).collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&v, 0.95).unwrap(), 95.0);
        assert_eq!(
            percentile_nearest_rank(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(),
            2.0
        );
        for q in [0.01, 0.5, 0.99] {
            assert_eq!(percentile_nearest_rank(&[7.5], q).unwrap(), 7.5);
        }
        assert!(percentile_nearest_rank(&[], 0.5).is_err());
        assert!(percentile_nearest_rank(&[1.0], 1.0).is_err());
    }
}
