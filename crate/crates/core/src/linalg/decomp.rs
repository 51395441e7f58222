use nalgebra::{DMatrix, SymmetricEigen};

use super::Matrix;
use crate::error::{check_dim, Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const EIG_MAX_ITER: usize = 10_000;
const RIDGE_CAP: f64 = 1e-2;

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector of `values[i]`.
    pub vectors: Matrix,
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
///
/// Each eigenvector is oriented so that its largest-magnitude coordinate is
/// positive (first such coordinate on ties), which makes the output
/// reproducible across runs.
pub fn sym_eig(s: &Matrix) -> Result<SymEig> {
    if !s.is_square() {
        return Err(Error::InvalidArgument(format!(
            "sym_eig needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let scale = s.max_abs().max(1.0);
    if s.asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "sym_eig input not symmetric (asymmetry {:.3e})",
            s.asymmetry()
        )));
    }
    let n = s.rows();
    if n == 0 {
        return Ok(SymEig {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
        });
    }
    let dm = DMatrix::from_row_slice(n, n, s.as_slice());
    let eig = SymmetricEigen::try_new(dm, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::NotConverged(format!("symmetric eigensolver ({n}x{n})")))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut values = Vec::with_capacity(n);
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = sign * v[i];
        }
    }
    Ok(SymEig { values, vectors })
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = s`.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    check_dim("cholesky", s.rows(), s.cols())?;
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Factorization(format!(
                "matrix not positive definite at pivot {j} (value {d:.3e})"
            )));
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_dim("cholesky_solve", l.rows(), b.len())?;
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut v = y[i];
        for k in 0..i {
            v -= l[(i, k)] * y[k];
        }
        y[i] = v / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in (i + 1)..n {
            v -= l[(k, i)] * y[k];
        }
        y[i] = v / l[(i, i)];
    }
    Ok(y)
}

/// Outcome of a ridge-regularized symmetric solve.
#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    /// Ridge that was finally added to the diagonal.
    pub ridge: f64,
}

/// Solves `(s + ridge·I) x = b` through a Cholesky factorization.
///
/// When the factorization fails the ridge is multiplied by ten (starting at
/// 1e-12 when zero) until it reaches 1e-2; failing there is an error.
pub fn spd_solve(s: &Matrix, b: &[f64], ridge: f64) -> Result<SpdSolution> {
    check_dim("spd_solve rows", s.rows(), s.cols())?;
    check_dim("spd_solve rhs", s.rows(), b.len())?;
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let scale = s.max_abs().max(1.0);
    if s.asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "spd_solve input not symmetric (asymmetry {:.3e})",
            s.asymmetry()
        )));
    }
    let mut r = ridge;
    loop {
        let mut shifted = s.clone();
        for i in 0..shifted.rows() {
            shifted[(i, i)] += r;
        }
        match cholesky(&shifted) {
            Ok(l) => {
                let x = cholesky_solve(&l, b)?;
                return Ok(SpdSolution { x, ridge: r });
            }
            Err(e) if r >= RIDGE_CAP => {
                return Err(Error::Factorization(format!(
                    "{e}; ridge escalation exhausted at {r:.1e}"
                )))
            }
            Err(_) => {
                r = if r == 0.0 {
                    1e-12
                } else {
                    (r * 10.0).min(RIDGE_CAP)
                }
            }
        }
    }
}
