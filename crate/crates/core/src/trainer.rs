//! Mini-batch BPTT with one dropout mask per subsequence, Adam updates,
//! global-norm clipping and model selection by Monte-Carlo validation
//! log-likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::posterior::{validation_log_likelihood, RnnModel, DEFAULT_LENGTH_SCALE};
use crate::rnn::{
    bptt_gradients, init_params, run_sequence, sample_mask, Activation, DropoutMask, Gradients,
    RnnParams, Sequence,
};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub subsequence_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub p_d: f64,
    pub seed: u64,
    pub grad_clip: f64,
    /// Realizations used for the per-epoch validation log-likelihood.
    pub validation_samples: usize,
    pub length_scale: f64,
    /// Explicit observation precision; required when `p_d` or `lambda` is 0.
    pub tau: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            subsequence_len: 32,
            batch_size: 16,
            epochs: 50,
            learning_rate: 1e-3,
            lambda: 1e-4,
            p_d: 0.1,
            seed: 0,
            grad_clip: 5.0,
            validation_samples: 100,
            length_scale: DEFAULT_LENGTH_SCALE,
            tau: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.subsequence_len < 2 {
            return bad(format!(
                "subsequence_len must be >= 2, got {}",
                self.subsequence_len
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return bad("learning_rate and grad_clip must be positive".into());
        }
        if !(self.lambda >= 0.0) || !(0.0..1.0).contains(&self.p_d) {
            return bad(format!(
                "need lambda >= 0 and 0 <= p_d < 1 (got {}, {})",
                self.lambda, self.p_d
            ));
        }
        if self.validation_samples < 2 {
            return bad("validation_samples must be >= 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean regularized objective over the epoch's subsequences (with dropout).
    pub train_loss: Vec<f64>,
    /// Mask-free mean squared error over the training windows after each epoch.
    pub train_mse: Vec<f64>,
    /// Validation log-likelihood after each epoch.
    pub validation_log_likelihood: Vec<f64>,
    /// Mask-free training MSE of the initial parameters.
    pub initial_train_mse: f64,
    /// Index of the epoch whose parameters were kept.
    pub selected_epoch: usize,
}

/// Non-overlapping one-step-ahead windows: inputs are rows `k·len ..
/// k·len + len`, targets the same rows shifted by one. A trailing remainder
/// shorter than `len` is dropped.
pub fn make_subsequences(ds: &TimeSeriesDataset, len: usize) -> Result<Vec<Sequence>> {
    if len == 0 {
        return Err(Error::InvalidArgument(
            "subsequence length must be positive".into(),
        ));
    }
    if ds.len() < len + 1 {
        return Err(Error::InvalidArgument(format!(
            "dataset too short: {} rows, need at least {} for windows of {len}",
            ds.len(),
            len + 1
        )));
    }
    let m = ds.width();
    let values = ds.values().as_slice();
    let count = (ds.len() - 1) / len;
    Ok((0..count)
        .map(|k| {
            let start = k * len;
            Sequence {
                inputs: Matrix::from_vec(len, m, values[start * m..(start + len) * m].to_vec())
                    .expect("window shape"),
                targets: Matrix::from_vec(
                    len,
                    m,
                    values[(start + 1) * m..(start + 1 + len) * m].to_vec(),
                )
                .expect("window shape"),
            }
        })
        .collect())
}

/// Rescales `g` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(g: &mut Gradients, max_norm: f64) -> f64 {
    let norm = g.global_norm();
    if norm > max_norm {
        g.scale(max_norm / norm);
    }
    norm
}

/// Mask-free mean squared error (`(1/T) Σ ‖target − ŷ‖²`, averaged over windows).
pub fn sequence_mse(params: &RnnParams, sequences: &[Sequence]) -> Result<f64> {
    let mask = DropoutMask::keep_all(params.input_dim(), params.state_dim());
    let mut total = 0.0;
    for seq in sequences {
        let pred = run_sequence(params, &mask, &seq.inputs)?;
        let sq: f64 = pred
            .as_slice()
            .iter()
            .zip(seq.targets.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += sq / seq.len() as f64;
    }
    Ok(total / sequences.len().max(1) as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut RnnParams, g: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(ADAM_BETA1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(ADAM_BETA2, f64::from(self.t));
        let grads = g.slices().into_iter().flat_map(|s| s.iter());
        let weights = params.slices_mut().into_iter().flat_map(|s| s.iter_mut());
        for (((w, &gi), m), v) in weights.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Trains an `m_s`-unit network to predict each next row of `train_ds`.
///
/// Both datasets must carry the same normalization fingerprint. Returns the
/// parameters of the epoch with the highest validation log-likelihood.
pub fn train(
    train_ds: &TimeSeriesDataset,
    val_ds: &TimeSeriesDataset,
    m_s: usize,
    activation: Activation,
    cfg: &TrainConfig,
) -> Result<(RnnModel, TrainReport)> {
    cfg.validate()?;
    if train_ds.normalized_with() != val_ds.normalized_with() {
        return Err(Error::InvalidArgument(
            "training and validation data were normalized with different statistics".into(),
        ));
    }
    check_dim("validation width", train_ds.width(), val_ds.width())?;
    if cfg.subsequence_len > train_ds.len() {
        return Err(Error::InvalidArgument(format!(
            "subsequence_len {} exceeds training length {}",
            cfg.subsequence_len,
            train_ds.len()
        )));
    }
    let sequences = make_subsequences(train_ds, cfg.subsequence_len)?;
    let m_x = train_ds.width();
    let n_train = train_ds.len();
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(m_x, m_s, activation, rng.next_u64())?;
    let val_seed = rng.next_u64();
    // Fails early when τ is degenerate and no override is given.
    RnnModel::new(
        params.clone(),
        cfg.p_d,
        cfg.lambda,
        cfg.length_scale,
        n_train,
        cfg.tau,
    )?;

    let mut adam = Adam::new(params.num_params(), cfg.learning_rate);
    let initial_train_mse = sequence_mse(&params, &sequences)?;
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        train_mse: Vec::with_capacity(cfg.epochs),
        validation_log_likelihood: Vec::with_capacity(cfg.epochs),
        initial_train_mse,
        selected_epoch: 0,
    };
    let mut best: Option<(f64, RnnParams)> = None;
    let mut order: Vec<usize> = (0..sequences.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let masks = batch
                .iter()
                .map(|_| sample_mask(m_x, m_s, cfg.p_d, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let results: Vec<Result<(f64, Gradients)>> = batch
                .par_iter()
                .zip(masks.par_iter())
                .map(|(&k, mask)| bptt_gradients(&params, mask, &sequences[k], cfg.lambda))
                .collect();
            let mut total = Gradients::zeros_like(&params);
            for r in results {
                let (loss, g) = r.map_err(|_| Error::Divergence { epoch })?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                epoch_loss += loss;
                total.add_assign(&g);
            }
            total.scale(1.0 / batch.len() as f64);
            clip_global_norm(&mut total, cfg.grad_clip);
            adam.update(&mut params, &total);
        }
        let epoch_loss = epoch_loss / sequences.len() as f64;
        if !epoch_loss.is_finite() || params.validate().is_err() {
            return Err(Error::Divergence { epoch });
        }
        let model = RnnModel::new(
            params.clone(),
            cfg.p_d,
            cfg.lambda,
            cfg.length_scale,
            n_train,
            cfg.tau,
        )?;
        let val_ll =
            validation_log_likelihood(&model, val_ds.values(), cfg.validation_samples, val_seed)
                .map_err(|_| Error::Divergence { epoch })?;
        report.train_loss.push(epoch_loss);
        report
            .train_mse
            .push(sequence_mse(&params, &sequences).map_err(|_| Error::Divergence { epoch })?);
        report.validation_log_likelihood.push(val_ll);
        if best.as_ref().is_none_or(|(b, _)| val_ll > *b) {
            best = Some((val_ll, params.clone()));
            report.selected_epoch = epoch;
        }
    }

    let (_, chosen) = best.expect("at least one epoch");
    let model = RnnModel::new(
        chosen,
        cfg.p_d,
        cfg.lambda,
        cfg.length_scale,
        n_train,
        cfg.tau,
    )?;
    Ok((model, report))
}
