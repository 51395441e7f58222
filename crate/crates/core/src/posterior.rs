//! Monte-Carlo predictive posterior from `N` frozen-mask realizations.
//!
//! Each realization keeps its own dropout mask and hidden state for the
//! whole monitoring session, consumes the observed vector at every step and
//! emits a one-step-ahead prediction. The predictive summary adds the
//! observation-noise variance `τ⁻¹` to the sample moments:
//!
//! ```text
//! μ   = (1/N) Σ ŷ(i)
//! S   = τ⁻¹ I + (1/N) Σ ŷ(i) ŷ(i)ᵀ − μ μᵀ
//! σ_l = sqrt(τ⁻¹ + (1/N) Σ ŷ_l(i)² − μ_l²)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::rnn::{sample_mask, step_in_place, DropoutMask, RnnParams, StepScratch};

/// Default prior length scale.
pub const DEFAULT_LENGTH_SCALE: f64 = 1.0;
/// Default ensemble size.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 400;

/// Model precision `τ = p_d·l² / (2·N_train·λ)`.
pub fn compute_tau(p_d: f64, length_scale: f64, n_train: usize, lambda: f64) -> Result<f64> {
    if !(p_d > 0.0) || !(lambda > 0.0) {
        return Err(Error::InvalidArgument(
            "τ undefined/degenerate for p_d = 0 or λ = 0; supply explicit noise precision".into(),
        ));
    }
    if n_train == 0 || !(length_scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "τ needs N_train >= 1 and l > 0 (got {n_train}, {length_scale})"
        )));
    }
    Ok(p_d * length_scale * length_scale / (2.0 * n_train as f64 * lambda))
}

/// Trained network plus the hyperparameters the posterior needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub params: RnnParams,
    pub p_d: f64,
    pub lambda: f64,
    pub length_scale: f64,
    pub n_train: usize,
    /// Observation-noise precision.
    pub tau: f64,
}

impl RnnModel {
    /// Builds a model, deriving `τ` from the hyperparameters unless an
    /// explicit precision is supplied.
    pub fn new(
        params: RnnParams,
        p_d: f64,
        lambda: f64,
        length_scale: f64,
        n_train: usize,
        tau_override: Option<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let tau = match tau_override {
            Some(t) if t > 0.0 && t.is_finite() => t,
            Some(t) => {
                return Err(Error::InvalidArgument(format!(
                    "τ must be positive, got {t}"
                )))
            }
            None => compute_tau(p_d, length_scale, n_train, lambda)?,
        };
        Ok(Self {
            params,
            p_d,
            lambda,
            length_scale,
            n_train,
            tau,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.input_dim()
    }
}

/// Sample moments of one step's Monte-Carlo predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    /// `N × m`, row `i` from realization `i`.
    pub samples: Matrix,
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub std: Vec<f64>,
    pub tau: f64,
}

impl PredictiveSummary {
    /// Moments of `samples` (biased, divide-by-`N`), plus `τ⁻¹` noise.
    ///
    /// Two passes over deviations from the first sample: the first finds the
    /// mean offset, the second accumulates centered products. Identical
    /// samples therefore give an exactly zero sample covariance.
    pub fn from_samples(samples: Matrix, tau: f64) -> Result<Self> {
        let (n, m) = samples.shape();
        if n == 0 {
            return Err(Error::InvalidArgument("no Monte-Carlo samples".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "τ must be positive, got {tau}"
            )));
        }
        if let Some(i) = (0..n).find(|&i| !samples.row(i).iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite(format!("prediction of realization {i}")));
        }
        let pivot = samples.row(0).to_vec();
        let inv_n = 1.0 / n as f64;
        let mut shift_mean = vec![0.0; m];
        for row in samples.row_iter() {
            for ((acc, x), p) in shift_mean.iter_mut().zip(row).zip(&pivot) {
                *acc += x - p;
            }
        }
        shift_mean.iter_mut().for_each(|v| *v *= inv_n);
        let mut cross = Matrix::zeros(m, m);
        let mut e = vec![0.0; m];
        for row in samples.row_iter() {
            for (((ej, x), p), s) in e.iter_mut().zip(row).zip(&pivot).zip(&shift_mean) {
                *ej = (x - p) - s;
            }
            for a in 0..m {
                if e[a] == 0.0 {
                    continue;
                }
                for b in a..m {
                    cross[(a, b)] += e[a] * e[b];
                }
            }
        }
        let noise = 1.0 / tau;
        let mut cov = Matrix::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let mut c = cross[(a, b)] * inv_n;
                if a == b {
                    c += noise;
                }
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
        let mean = pivot.iter().zip(&shift_mean).map(|(p, s)| p + s).collect();
        let std = (0..m).map(|l| cov[(l, l)].sqrt()).collect();
        Ok(Self {
            samples,
            mean,
            cov,
            std,
            tau,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.rows()
    }
}

/// Masks and hidden states of `N` realizations.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    masks: Vec<DropoutMask>,
    states: Vec<Vec<f64>>,
    steps: usize,
}

/// Samples `n` independent masks; all states start at zero.
pub fn init_ensemble(model: &RnnModel, n: usize, seed: u64) -> Result<EnsembleState> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "ensemble needs N >= 2, got {n}"
        )));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let (m_x, m_s) = (model.params.input_dim(), model.params.state_dim());
    let masks = (0..n)
        .map(|_| sample_mask(m_x, m_s, model.p_d, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleState {
        masks,
        states: vec![vec![0.0; m_s]; n],
        steps: 0,
    })
}

impl EnsembleState {
    pub fn masks(&self) -> &[DropoutMask] {
        &self.masks
    }

    pub fn size(&self) -> usize {
        self.masks.len()
    }

    /// Number of observations consumed so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    /// Zeroes all states, keeping the masks.
    pub fn reset_states(&mut self) {
        self.states.iter_mut().for_each(|s| s.fill(0.0));
        self.steps = 0;
    }

    /// Feeds the observed `x_t` to every realization and summarizes their
    /// predictions for `t + 1`.
    pub fn step(&mut self, model: &RnnModel, x_t: &[f64]) -> Result<PredictiveSummary> {
        let params = &model.params;
        check_dim("ensemble step input", params.input_dim(), x_t.len())?;
        let m_y = params.output_dim();
        let mut samples = Matrix::zeros(self.masks.len(), m_y);
        let mut scratch = StepScratch::new(params.input_dim(), params.state_dim());
        for (i, (mask, s)) in self.masks.iter().zip(self.states.iter_mut()).enumerate() {
            step_in_place(params, mask, x_t, s, samples.row_mut(i), &mut scratch);
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("state of realization {i}")));
            }
        }
        self.steps += 1;
        PredictiveSummary::from_samples(samples, model.tau)
    }

    /// Runs every realization over all rows of `inputs` (in parallel across
    /// realizations) and returns the sample trajectories. Equivalent to
    /// calling [`EnsembleState::step`] once per row.
    pub fn run(&mut self, model: &RnnModel, inputs: &Matrix) -> Result<SampleTrajectories> {
        let params = &model.params;
        check_dim("ensemble run input", params.input_dim(), inputs.cols())?;
        let m_y = params.output_dim();
        let per_realization: Vec<Result<Matrix>> = self
            .masks
            .par_iter()
            .zip(self.states.par_iter_mut())
            .enumerate()
            .map(|(i, (mask, s))| {
                let mut out = Matrix::zeros(inputs.rows(), m_y);
                let mut scratch = StepScratch::new(params.input_dim(), params.state_dim());
                for t in 0..inputs.rows() {
                    step_in_place(params, mask, inputs.row(t), s, out.row_mut(t), &mut scratch);
                }
                if !out.is_finite() || !s.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("state of realization {i}")));
                }
                Ok(out)
            })
            .collect();
        let predictions = per_realization.into_iter().collect::<Result<Vec<_>>>()?;
        self.steps += inputs.rows();
        Ok(SampleTrajectories {
            predictions,
            tau: model.tau,
        })
    }
}

/// Per-realization prediction matrices (`T × m` each) from a batch run.
#[derive(Debug, Clone)]
pub struct SampleTrajectories {
    predictions: Vec<Matrix>,
    tau: f64,
}

impl SampleTrajectories {
    pub fn len(&self) -> usize {
        self.predictions.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_realizations(&self) -> usize {
        self.predictions.len()
    }

    pub fn realization(&self, i: usize) -> &Matrix {
        &self.predictions[i]
    }

    /// `N × m` samples for row `t`.
    pub fn samples_at(&self, t: usize) -> Matrix {
        let m = self.predictions[0].cols();
        let mut data = Vec::with_capacity(self.predictions.len() * m);
        for p in &self.predictions {
            data.extend_from_slice(p.row(t));
        }
        Matrix::from_vec(self.predictions.len(), m, data).expect("consistent shapes")
    }

    pub fn summary_at(&self, t: usize) -> Result<PredictiveSummary> {
        PredictiveSummary::from_samples(self.samples_at(t), self.tau)
    }
}

/// Log of the Monte-Carlo predictive density of each one-step-ahead target,
/// summed over time:
///
/// `Σ_t log[(1/N) Σ_i N(x_{t+1} | ŷ_{t+1}(i), τ⁻¹ I)]`, via log-sum-exp.
pub fn validation_log_likelihood(
    model: &RnnModel,
    series: &Matrix,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("N must be >= 2, got {n}")));
    }
    if !(model.tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "τ must be positive, got {}",
            model.tau
        )));
    }
    if series.rows() < 2 {
        return Err(Error::InvalidArgument("need at least 2 rows".into()));
    }
    let inputs = Matrix::from_vec(
        series.rows() - 1,
        series.cols(),
        series.as_slice()[..(series.rows() - 1) * series.cols()].to_vec(),
    )?;
    let mut ens = init_ensemble(model, n, seed)?;
    let traj = ens.run(model, &inputs)?;
    let preds: Vec<&Matrix> = (0..n).map(|i| traj.realization(i)).collect();
    Ok(mc_log_likelihood(&preds, series, model.tau))
}

/// `preds[i]` row `t` predicts `series` row `t + 1`.
pub(crate) fn mc_log_likelihood(preds: &[&Matrix], series: &Matrix, tau: f64) -> f64 {
    let m = series.cols() as f64;
    let n = preds.len();
    let log_norm = -0.5 * m * libm::log(2.0 * std::f64::consts::PI / tau);
    let log_n = libm::log(n as f64);
    let mut total = 0.0;
    let mut terms = vec![0.0; n];
    for t in 0..series.rows() - 1 {
        let target = series.row(t + 1);
        for (term, p) in terms.iter_mut().zip(preds) {
            let sq: f64 = p
                .row(t)
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            *term = log_norm - 0.5 * tau * sq;
        }
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + libm::log(terms.iter().map(|v| libm::exp(v - top)).sum::<f64>());
        total += lse - log_n;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::{init_params, run_sequence, Activation};

    fn model(p_d: f64, tau: f64) -> RnnModel {
        let params = init_params(3, 5, Activation::Tanh, 21).unwrap();
        RnnModel::new(params, p_d, 1e-4, 1.0, 100, Some(tau)).unwrap()
    }

    #[test]
    fn tau_from_reference_hyperparameters() {
        let tau = compute_tau(0.1, 1.0, 480, 1e-4).unwrap();
        let expected = 0.1 / (2.0 * 480.0 * 1e-4);
        assert!((tau - expected).abs() <= 1e-12 * expected);
        assert!((tau - 1.041_666_666_666_666_7).abs() < 1e-12);
        let doubled = compute_tau(0.1, 1.0, 480, 2e-4).unwrap();
        assert!((doubled - tau / 2.0).abs() < 1e-15);
        let e = compute_tau(0.0, 1.0, 480, 1e-4).unwrap_err().to_string();
        assert!(e.contains("supply explicit noise precision"));
        assert!(compute_tau(0.1, 1.0, 480, 0.0).is_err());
    }

    #[test]
    fn ensemble_masks_are_seeded() {
        let m = model(0.1, 1.0);
        let a = init_ensemble(&m, 20, 5).unwrap();
        let b = init_ensemble(&m, 20, 5).unwrap();
        assert_eq!(a.masks(), b.masks());
        assert!(init_ensemble(&m, 1, 5).is_err());
        let none = init_ensemble(&model(0.0, 1.0), 10, 5).unwrap();
        assert!(none.masks().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_dropout_collapses_to_noise_covariance() {
        let m = model(0.0, 4.0);
        let mut ens = init_ensemble(&m, 8, 1).unwrap();
        let inputs = Matrix::from_rows(&[vec![0.1, 0.2, -0.3], vec![1.0, 0.0, 0.5]]).unwrap();
        let det = run_sequence(&m.params, &ens.masks()[0].clone(), &inputs).unwrap();
        for t in 0..2 {
            let s = ens.step(&m, inputs.row(t)).unwrap();
            assert_eq!(s.cov, {
                let mut c = Matrix::identity(3);
                c.scale(0.25);
                c
            });
            assert_eq!(s.mean, det.row(t));
        }
    }

    #[test]
    fn std_matches_covariance_diagonal() {
        let m = model(0.3, 2.0);
        let mut ens = init_ensemble(&m, 30, 9).unwrap();
        let s = ens.step(&m, &[0.5, -1.0, 0.2]).unwrap();
        for l in 0..3 {
            assert!((s.std[l] * s.std[l] - s.cov[(l, l)]).abs() < 1e-12);
            assert!(s.cov[(l, l)] >= 0.5 - 1e-12);
        }
        assert_eq!(s.cov.asymmetry(), 0.0);
    }

    #[test]
    fn batch_run_equals_stepping() {
        let m = model(0.2, 3.0);
        let inputs = Matrix::from_rows(&[
            vec![0.1, 0.2, -0.3],
            vec![1.0, 0.0, 0.5],
            vec![-0.7, 0.4, 0.0],
        ])
        .unwrap();
        let mut a = init_ensemble(&m, 12, 4).unwrap();
        let mut b = a.clone();
        let traj = a.run(&m, &inputs).unwrap();
        for t in 0..3 {
            let stepped = b.step(&m, inputs.row(t)).unwrap();
            assert_eq!(stepped, traj.summary_at(t).unwrap());
        }
        assert_eq!(a.steps(), 3);
    }

    #[test]
    fn non_finite_sample_names_realization() {
        let mut samples = Matrix::zeros(3, 2);
        samples[(2, 1)] = f64::NAN;
        let e = PredictiveSummary::from_samples(samples, 1.0)
            .unwrap_err()
            .to_string();
        assert!(e.contains("realization 2"), "{e}");
    }

    #[test]
    fn gaussian_at_its_mean() {
        let series = Matrix::from_rows(&[vec![0.0], vec![0.7]]).unwrap();
        let preds = Matrix::from_rows(&[vec![0.7]]).unwrap();
        let ll = mc_log_likelihood(&[&preds, &preds, &preds], &series, 1.0);
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);

        let far = Matrix::from_rows(&[vec![1.7]]).unwrap();
        let farther = Matrix::from_rows(&[vec![2.7]]).unwrap();
        let a = mc_log_likelihood(&[&far, &far], &series, 1.0);
        let b = mc_log_likelihood(&[&farther, &farther], &series, 1.0);
        assert!(ll > a && a > b);
    }
}
