//! Independent reference implementations used by the oracle tests and the
//! acceptance run. Each one takes the slow, obvious route.
#![allow(dead_code)]

use brnn_core::linalg::{Matrix, Rng};
use brnn_core::rnn::{
    bptt_gradients, init_params, sample_mask, Activation, DropoutMask, RnnParams, Sequence,
};

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// `A Aᵀ + shift·I`, symmetric positive definite for `shift > 0`.
pub fn random_spd(rng: &mut Rng, m: usize, shift: f64) -> Matrix {
    let a = random_matrix(rng, m, m);
    let mut s = a.matmul(&a.transpose()).unwrap();
    for i in 0..m {
        s[(i, i)] += shift;
    }
    s
}

/// Inverse of a 1×1, 2×2 or 3×3 matrix through the adjugate.
pub fn explicit_inverse(s: &Matrix) -> Matrix {
    let m = s.rows();
    let a = |i: usize, j: usize| s[(i, j)];
    let mut inv = Matrix::zeros(m, m);
    match m {
        1 => inv[(0, 0)] = 1.0 / a(0, 0),
        2 => {
            let det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
            inv[(0, 0)] = a(1, 1) / det;
            inv[(0, 1)] = -a(0, 1) / det;
            inv[(1, 0)] = -a(1, 0) / det;
            inv[(1, 1)] = a(0, 0) / det;
        }
        3 => {
            let cof = |i: usize, j: usize| {
                let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
                let c: Vec<usize> = (0..3).filter(|&k| k != j).collect();
                let minor = a(r[0], c[0]) * a(r[1], c[1]) - a(r[0], c[1]) * a(r[1], c[0]);
                if (i + j).is_multiple_of(2) {
                    minor
                } else {
                    -minor
                }
            };
            let det: f64 = (0..3).map(|j| a(0, j) * cof(0, j)).sum();
            for i in 0..3 {
                for j in 0..3 {
                    inv[(j, i)] = cof(i, j) / det;
                }
            }
        }
        _ => panic!("explicit inverse only for m <= 3"),
    }
    inv
}

pub fn quad_form(d: &[f64], s_inv: &Matrix) -> f64 {
    let m = d.len();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += d[i] * s_inv[(i, j)] * d[j];
        }
    }
    acc
}

/// Textbook two-pass mean and biased covariance.
pub fn two_pass_moments(samples: &Matrix) -> (Vec<f64>, Matrix) {
    let (n, m) = samples.shape();
    let mut mean = vec![0.0; m];
    for row in samples.row_iter() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut cov = Matrix::zeros(m, m);
    for row in samples.row_iter() {
        for a in 0..m {
            for b in 0..m {
                cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    cov.scale(1.0 / n as f64);
    (mean, cov)
}

/// Indices of `d` in ascending `(distance, index)` order, full sort.
fn sorted_indices(d: &[f64], skip: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.len()).filter(|&i| Some(i) != skip).collect();
    idx.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap().then(a.cmp(&b)));
    idx
}

fn density_from(d: &[f64], skip: Option<usize>, k: usize, eps: f64) -> f64 {
    let order = sorted_indices(d, skip);
    let mut sum = 0.0;
    for &i in &order[..k] {
        sum += d[i].max(eps);
    }
    k as f64 / sum
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Brute-force LDR: full distance matrix, every density recomputed per `k`.
/// An observation sitting exactly on a sample does not count that sample
/// (the lowest-indexed coincident one) as a neighbor.
pub fn brute_ldr(x: &[f64], samples: &Matrix, k_min: usize, k_max: usize, eps: f64) -> f64 {
    let n = samples.rows();
    let dx: Vec<f64> = (0..n).map(|i| dist(x, samples.row(i))).collect();
    let pair: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dist(samples.row(i), samples.row(j)))
                .collect()
        })
        .collect();
    brute_ldr_from(&dx, &pair, k_min, k_max, eps)
}

/// Brute-force per-coordinate LDR of one scalar against a sample column.
pub fn brute_ldr_scalar(x: f64, column: &[f64], k_min: usize, k_max: usize, eps: f64) -> f64 {
    let dx: Vec<f64> = column.iter().map(|v| (x - v).abs()).collect();
    let pair: Vec<Vec<f64>> = column
        .iter()
        .map(|a| column.iter().map(|b| (a - b).abs()).collect())
        .collect();
    brute_ldr_from(&dx, &pair, k_min, k_max, eps)
}

fn brute_ldr_from(dx: &[f64], pair: &[Vec<f64>], k_min: usize, k_max: usize, eps: f64) -> f64 {
    let skip = dx.iter().position(|&d| d == 0.0);
    let mut best = f64::NEG_INFINITY;
    for k in k_min..=k_max {
        let kf = k as f64;
        let f_x = density_from(dx, skip, k, eps);
        let neighbors = sorted_indices(dx, skip);
        let mut acc = 0.0;
        for &p in &neighbors[..k] {
            acc += density_from(&pair[p], Some(p), k, eps);
        }
        best = best.max((acc / kf) / f_x);
    }
    best
}

/// Nearest-rank percentile by counting: the smallest sorted value whose
/// 1-based rank `r` satisfies `r ≥ q·n` (with the same 1e-9 slack).
pub fn percentile_oracle(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let target = q * n as f64 - 1e-9;
    let mut r = 1;
    while (r as f64) < target && r < n {
        r += 1;
    }
    sorted[r - 1]
}

/// Characteristic polynomial coefficients `c_0..c_n` (`c_n = 1`) of `det(λI − A)`
/// by the Faddeev–LeVerrier recursion.
pub fn char_poly(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut m = Matrix::zeros(n, n);
    for k in 1..=n {
        let mut next = a.matmul(&m).unwrap();
        for i in 0..n {
            next[(i, i)] += coeffs[n - k + 1];
        }
        m = next;
        let am = a.matmul(&m).unwrap();
        coeffs[n - k] = -am.trace() / k as f64;
    }
    coeffs
}

/// Polynomial with the given roots, coefficients lowest degree first.
pub fn poly_from_roots(roots: &[f64]) -> Vec<f64> {
    let mut c = vec![1.0];
    for &r in roots {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &v) in c.iter().enumerate() {
            next[i + 1] += v;
            next[i] -= r * v;
        }
        c = next;
    }
    c
}

/// Max over parameters of |analytic − numeric| / max(|analytic|, |numeric|, 1e-3),
/// with central differences of step 1e-5.
pub fn gradient_max_rel_error(
    params: &RnnParams,
    mask: &DropoutMask,
    seq: &Sequence,
    lambda: f64,
) -> f64 {
    let h = 1e-5;
    let (_, g) = bptt_gradients(params, mask, seq, lambda).unwrap();
    let analytic: Vec<f64> = [
        g.d_w_s.as_slice(),
        g.d_u_s.as_slice(),
        &g.d_b_s,
        g.d_w_y.as_slice(),
        &g.d_b_y,
    ]
    .concat();
    let loss = |p: &RnnParams| bptt_gradients(p, mask, seq, lambda).unwrap().0;
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for tensor in 0..5 {
        let len = match tensor {
            0 => params.w_s.as_slice().len(),
            1 => params.u_s.as_slice().len(),
            2 => params.b_s.len(),
            3 => params.w_y.as_slice().len(),
            _ => params.b_y.len(),
        };
        for k in 0..len {
            let bump = |delta: f64| {
                let mut p = params.clone();
                let slot = match tensor {
                    0 => &mut p.w_s.as_mut_slice()[k],
                    1 => &mut p.u_s.as_mut_slice()[k],
                    2 => &mut p.b_s[k],
                    3 => &mut p.w_y.as_mut_slice()[k],
                    _ => &mut p.b_y[k],
                };
                *slot += delta;
                loss(&p)
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let a = analytic[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
            idx += 1;
        }
    }
    worst
}

pub fn random_sequence(rng: &mut Rng, steps: usize, m_x: usize) -> Sequence {
    Sequence {
        inputs: random_matrix(rng, steps, m_x),
        targets: random_matrix(rng, steps, m_x),
    }
}

/// Worst gradient error over the 50 random configurations (dims ≤ 5,
/// sequences ≤ 8, activations in rotation).
pub fn gradient_sweep() -> f64 {
    let mut rng = Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let act = Activation::ALL[case % 4];
        let m_x = 1 + rng.below(5);
        let m_s = 1 + rng.below(5);
        let steps = 1 + rng.below(8);
        let mut params = init_params(m_x, m_s, act, rng.next_u64()).unwrap();
        // Nonzero biases keep relu units away from the kink at zero.
        for b in params.b_s.iter_mut().chain(params.b_y.iter_mut()) {
            *b = 0.3 * rng.normal();
        }
        let p_d = [0.0, 0.1, 0.3][case % 3];
        let mask = sample_mask(m_x, m_s, p_d, &mut rng).unwrap();
        let seq = random_sequence(&mut rng, steps, m_x);
        let lambda = [0.0, 1e-4, 0.05][case % 3];
        worst = worst.max(gradient_max_rel_error(&params, &mask, &seq, lambda));
    }
    worst
}

/// `T × m` data with one shared factor carrying ten times the noise variance
/// on every column.
pub fn planted_factor(rng: &mut Rng, t: usize, m: usize) -> brnn_core::data::TimeSeriesDataset {
    let noise = 0.1f64.sqrt();
    let loadings: Vec<f64> = (0..m)
        .map(|_| if rng.below(2) == 0 { 1.0 } else { -1.0 })
        .collect();
    let mut values = Matrix::zeros(t, m);
    for i in 0..t {
        let f = rng.normal();
        for j in 0..m {
            values[(i, j)] = loadings[j] * f + noise * rng.normal();
        }
    }
    brnn_core::data::TimeSeriesDataset::from_matrix(values).unwrap()
}

pub fn white_noise(rng: &mut Rng, t: usize, m: usize) -> brnn_core::data::TimeSeriesDataset {
    brnn_core::data::TimeSeriesDataset::from_matrix(random_matrix(rng, t, m)).unwrap()
}

/// Retained component counts of parallel analysis (50 draws, 95th
/// percentile) over seeds `0..seeds`, for planted-factor and white-noise data.
pub fn parallel_analysis_counts(seeds: u64) -> (Vec<usize>, Vec<usize>) {
    let mut planted = Vec::new();
    let mut white = Vec::new();
    for seed in 0..seeds {
        let mut rng = Rng::seed_from_u64(1000 + seed);
        let pf = planted_factor(&mut rng, 500, 10);
        planted.push(
            brnn_core::baselines::parallel_analysis(&pf, 50, 0.95, seed)
                .unwrap()
                .a,
        );
        let wn = white_noise(&mut rng, 500, 10);
        white.push(
            brnn_core::baselines::parallel_analysis(&wn, 50, 0.95, seed)
                .unwrap()
                .a,
        );
    }
    (planted, white)
}

/// Worst relative error of `mahalanobis_sq` against the adjugate inverse
/// over `cases` random problems with `m ≤ 3`.
pub fn mahalanobis_sweep(cases: usize) -> f64 {
    let mut rng = Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let m = 1 + case % 3;
        let s = random_spd(&mut rng, m, 0.2);
        let x: Vec<f64> = (0..m).map(|_| 2.0 * rng.normal()).collect();
        let mu: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let d: Vec<f64> = x.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let oracle = quad_form(&d, &explicit_inverse(&s));
        let got = brnn_core::detection::mahalanobis_sq(&x, &mu, &s, 0.0).unwrap();
        worst = worst.max((got - oracle).abs() / oracle.max(1.0));
    }
    worst
}

/// Worst deviation of the predictive mean (relative), covariance and std
/// from the textbook two-pass moments plus `τ⁻¹` noise.
pub fn moments_sweep(cases: usize) -> f64 {
    let mut rng = Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let n = 2 + case % 40;
        let m = 1 + case % 5;
        let offset = [0.0, 1e3, -50.0][case % 3];
        let mut samples = random_matrix(&mut rng, n, m);
        samples.as_mut_slice().iter_mut().for_each(|v| *v += offset);
        let tau = 0.5 + case as f64;
        let (mean, mut cov) = two_pass_moments(&samples);
        for i in 0..m {
            cov[(i, i)] += 1.0 / tau;
        }
        let s = brnn_core::posterior::PredictiveSummary::from_samples(samples, tau).unwrap();
        for i in 0..m {
            worst = worst.max((s.mean[i] - mean[i]).abs() / mean[i].abs().max(1.0));
            worst = worst.max((s.std[i] - cov[(i, i)].sqrt()).abs());
            for j in 0..m {
                worst = worst.max((s.cov[(i, j)] - cov[(i, j)]).abs());
            }
        }
    }
    worst
}

/// Number of LDR and per-coordinate LDR values that differ in any bit from
/// the brute-force oracle, over sample sets of at most 64 with frequent ties.
pub fn ldr_mismatches() -> usize {
    let mut rng = Rng::seed_from_u64(3);
    let mut bad = 0;
    for case in 0..60 {
        let n = 22 + rng.below(43);
        let m = 1 + rng.below(4);
        let samples = if case % 2 == 0 {
            random_matrix(&mut rng, n, m)
        } else {
            Matrix::from_vec(n, m, (0..n * m).map(|_| rng.below(5) as f64).collect()).unwrap()
        };
        let x: Vec<f64> = match case % 3 {
            0 => samples.row(rng.below(n)).to_vec(),
            _ => (0..m).map(|_| rng.normal()).collect(),
        };
        let (k_min, k_max) = (2 + rng.below(8), 12 + rng.below(9));
        let got = brnn_core::detection::ldr(&x, &samples, k_min, k_max, 1e-12).unwrap();
        bad += usize::from(got.to_bits() != brute_ldr(&x, &samples, k_min, k_max, 1e-12).to_bits());
    }
    for case in 0..80 {
        let n = 21 + rng.below(44);
        let column: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.normal()).collect()
        } else {
            (0..n).map(|_| rng.below(6) as f64 * 0.5).collect()
        };
        let x = if case % 4 == 1 {
            column[rng.below(n)]
        } else {
            3.0 * rng.normal()
        };
        let got = brnn_core::detection::ldr_scalar(x, &column, 10, 20, 1e-12).unwrap();
        bad += usize::from(got.to_bits() != brute_ldr_scalar(x, &column, 10, 20, 1e-12).to_bits());
    }
    bad
}

/// Number of disagreements between the nearest-rank percentile (and the
/// detection threshold built on it) and the counting oracle.
pub fn percentile_mismatches(cases: usize) -> usize {
    let mut rng = Rng::seed_from_u64(5);
    let mut bad = 0;
    for case in 0..cases {
        let n = 1 + rng.below(300);
        let values: Vec<f64> = if case % 3 == 0 {
            (0..n).map(|_| rng.below(7) as f64).collect()
        } else {
            (0..n).map(|_| rng.normal()).collect()
        };
        let q = [0.95, 0.99, 0.5, 0.9, 0.005][case % 5];
        let oracle = percentile_oracle(&values, q);
        bad +=
            usize::from(brnn_core::linalg::percentile_nearest_rank(&values, q).unwrap() != oracle);
        let alpha = 1.0 - q;
        let th = brnn_core::detection::calibrate_threshold(&values, alpha).unwrap();
        bad += usize::from(th != percentile_oracle(&values, 1.0 - alpha));
    }
    bad
}
