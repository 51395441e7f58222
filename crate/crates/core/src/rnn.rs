//! Elman recurrent cell with frozen variational-dropout masks and exact
//! backpropagation through time.
//!
//! With `c = 1/(1 − p_d)` and masks `z_in`, `z_rec`, `z_out`:
//!
//! ```text
//! s_t = φ(W_s (c·z_in ⊙ x_t) + U_s (c·z_rec ⊙ s_{t−1}) + b_s)
//! ŷ_t = W_y (c·z_out ⊙ s_t) + b_y
//! ```
//!
//! The same mask is used at every step of a sequence. Biases are never
//! masked and never regularized.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Linear,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
    ];

    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Linear => a,
            Activation::Sigmoid => 1.0 / (1.0 + libm::exp(-a)),
            Activation::Tanh => libm::tanh(a),
            Activation::Relu => a.max(0.0),
        }
    }

    /// `φ'(a)` given the pre-activation `a` and output `s = φ(a)`.
    #[inline]
    fn derivative(self, a: f64, s: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Sigmoid => s * (1.0 - s),
            Activation::Tanh => 1.0 - s * s,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation '{other}'"
            ))),
        }
    }
}

/// Weights and biases of a single-layer Elman network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    /// `m_s × m_x` input weights.
    pub w_s: Matrix,
    /// `m_s × m_s` recurrent weights.
    pub u_s: Matrix,
    pub b_s: Vec<f64>,
    /// `m_y × m_s` output weights.
    pub w_y: Matrix,
    pub b_y: Vec<f64>,
    pub activation: Activation,
}

impl RnnParams {
    pub fn input_dim(&self) -> usize {
        self.w_s.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.w_s.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_y.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (ms, mx) = self.w_s.shape();
        let my = self.w_y.rows();
        if ms == 0 || mx == 0 || my == 0 {
            return Err(Error::InvalidArgument(
                "RNN dimensions must be positive".into(),
            ));
        }
        check_dim("U_s rows", ms, self.u_s.rows())?;
        check_dim("U_s cols", ms, self.u_s.cols())?;
        check_dim("b_s", ms, self.b_s.len())?;
        check_dim("W_y cols", ms, self.w_y.cols())?;
        check_dim("b_y", my, self.b_y.len())?;
        if !(self.w_s.is_finite()
            && self.u_s.is_finite()
            && self.w_y.is_finite()
            && self.b_s.iter().chain(&self.b_y).all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite("RNN parameters".into()));
        }
        Ok(())
    }

    /// `‖W_s‖² + ‖W_y‖² + ‖U_s‖²` (Frobenius).
    pub fn weight_norm_sq(&self) -> f64 {
        self.w_s.frobenius_sq() + self.w_y.frobenius_sq() + self.u_s.frobenius_sq()
    }

    pub(crate) fn slices(&self) -> [&[f64]; 5] {
        [
            self.w_s.as_slice(),
            self.u_s.as_slice(),
            &self.b_s,
            self.w_y.as_slice(),
            &self.b_y,
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_s.as_mut_slice(),
            self.u_s.as_mut_slice(),
            &mut self.b_s,
            self.w_y.as_mut_slice(),
            &mut self.b_y,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

/// Glorot-uniform weights, zero biases; `m_y = m_x`.
pub fn init_params(m_x: usize, m_s: usize, activation: Activation, seed: u64) -> Result<RnnParams> {
    if m_x == 0 || m_s == 0 {
        return Err(Error::InvalidArgument(
            "m_x and m_s must be at least 1".into(),
        ));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut glorot = |rows: usize, cols: usize| {
        let r = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_range(-r, r)).collect();
        Matrix::from_vec(rows, cols, data).expect("shape matches")
    };
    let w_s = glorot(m_s, m_x);
    let u_s = glorot(m_s, m_s);
    let w_y = glorot(m_x, m_s);
    Ok(RnnParams {
        w_s,
        u_s,
        b_s: vec![0.0; m_s],
        w_y,
        b_y: vec![0.0; m_x],
        activation,
    })
}

/// Binary masks for the input, recurrent and pre-output sites, frozen for
/// the lifetime of one sequence or Monte-Carlo realization.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DropoutMask {
    z_in: Vec<bool>,
    z_rec: Vec<bool>,
    z_out: Vec<bool>,
    p_bits: u64,
}

impl DropoutMask {
    /// Mask that keeps every unit (no dropout).
    pub fn keep_all(m_x: usize, m_s: usize) -> Self {
        Self {
            z_in: vec![true; m_x],
            z_rec: vec![true; m_s],
            z_out: vec![true; m_s],
            p_bits: 0f64.to_bits(),
        }
    }

    /// Builds a mask from explicit keep flags.
    pub fn from_parts(
        z_in: Vec<bool>,
        z_rec: Vec<bool>,
        z_out: Vec<bool>,
        p_d: f64,
    ) -> Result<Self> {
        check_p(p_d)?;
        check_dim("mask recurrent/output sizes", z_rec.len(), z_out.len())?;
        Ok(Self {
            z_in,
            z_rec,
            z_out,
            p_bits: p_d.to_bits(),
        })
    }

    pub fn p_d(&self) -> f64 {
        f64::from_bits(self.p_bits)
    }

    pub fn z_in(&self) -> &[bool] {
        &self.z_in
    }

    pub fn z_rec(&self) -> &[bool] {
        &self.z_rec
    }

    pub fn z_out(&self) -> &[bool] {
        &self.z_out
    }

    /// Inverted-dropout rescale `1/(1 − p_d)`.
    #[inline]
    pub fn keep_scale(&self) -> f64 {
        1.0 / (1.0 - self.p_d())
    }

    fn check_against(&self, params: &RnnParams) -> Result<()> {
        check_dim("mask input size", params.input_dim(), self.z_in.len())?;
        check_dim("mask recurrent size", params.state_dim(), self.z_rec.len())?;
        check_dim("mask output size", params.state_dim(), self.z_out.len())
    }
}

fn check_p(p_d: f64) -> Result<()> {
    if p_d >= 1.0 {
        return Err(Error::InvalidArgument(
            "degenerate dropout: all units dropped (p_d must be < 1)".into(),
        ));
    }
    if !(p_d >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability {p_d} < 0"
        )));
    }
    Ok(())
}

/// Each entry is dropped independently with probability `p_d`.
pub fn sample_mask(m_x: usize, m_s: usize, p_d: f64, rng: &mut Rng) -> Result<DropoutMask> {
    check_p(p_d)?;
    let mut draw = |n: usize| (0..n).map(|_| rng.uniform() >= p_d).collect::<Vec<bool>>();
    let z_in = draw(m_x);
    let z_rec = draw(m_s);
    let z_out = draw(m_s);
    Ok(DropoutMask {
        z_in,
        z_rec,
        z_out,
        p_bits: p_d.to_bits(),
    })
}

/// Hidden state of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnState {
    pub s: Vec<f64>,
}

impl RnnState {
    pub fn zeros(m_s: usize) -> Self {
        Self { s: vec![0.0; m_s] }
    }
}

#[inline]
fn masked_into(out: &mut [f64], v: &[f64], z: &[bool], c: f64) {
    for ((o, &x), &keep) in out.iter_mut().zip(v).zip(z) {
        *o = if keep { c * x } else { 0.0 };
    }
}

/// Reusable buffers for allocation-free stepping.
#[derive(Debug, Clone)]
pub(crate) struct StepScratch {
    xm: Vec<f64>,
    sm: Vec<f64>,
    hm: Vec<f64>,
    rec: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(m_x: usize, m_s: usize) -> Self {
        Self {
            xm: vec![0.0; m_x],
            sm: vec![0.0; m_s],
            hm: vec![0.0; m_s],
            rec: vec![0.0; m_s],
        }
    }
}

/// Advances `s` in place and writes the prediction into `y`. Returns the
/// pre-activation in `pre` when requested. Dimensions are the caller's duty.
#[inline]
pub(crate) fn step_in_place(
    params: &RnnParams,
    mask: &DropoutMask,
    x: &[f64],
    s: &mut [f64],
    y: &mut [f64],
    scratch: &mut StepScratch,
) {
    let c = mask.keep_scale();
    masked_into(&mut scratch.xm, x, &mask.z_in, c);
    masked_into(&mut scratch.sm, s, &mask.z_rec, c);
    params.w_s.matvec_into(&scratch.xm, s);
    params.u_s.matvec_into(&scratch.sm, &mut scratch.rec);
    for ((si, r), b) in s.iter_mut().zip(&scratch.rec).zip(&params.b_s) {
        *si = params.activation.apply(*si + r + b);
    }
    masked_into(&mut scratch.hm, s, &mask.z_out, c);
    params.w_y.matvec_into(&scratch.hm, y);
    for (yi, b) in y.iter_mut().zip(&params.b_y) {
        *yi += b;
    }
}

/// One masked forward step: returns the new state and the prediction.
pub fn forward_step(
    params: &RnnParams,
    mask: &DropoutMask,
    x_t: &[f64],
    s_prev: &RnnState,
) -> Result<(RnnState, Vec<f64>)> {
    mask.check_against(params)?;
    check_dim("forward_step input", params.input_dim(), x_t.len())?;
    check_dim("forward_step state", params.state_dim(), s_prev.s.len())?;
    let mut s = s_prev.s.clone();
    let mut y = vec![0.0; params.output_dim()];
    let mut scratch = StepScratch::new(params.input_dim(), params.state_dim());
    step_in_place(params, mask, x_t, &mut s, &mut y, &mut scratch);
    if !s.iter().chain(&y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("recurrent state exploded".into()));
    }
    Ok((RnnState { s }, y))
}

/// Input/target pairs of one training sequence (row `t` of each matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Gradient of the regularized loss, shaped like [`RnnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_w_s: Matrix,
    pub d_u_s: Matrix,
    pub d_b_s: Vec<f64>,
    pub d_w_y: Matrix,
    pub d_b_y: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &RnnParams) -> Self {
        Self {
            d_w_s: Matrix::zeros(params.w_s.rows(), params.w_s.cols()),
            d_u_s: Matrix::zeros(params.u_s.rows(), params.u_s.cols()),
            d_b_s: vec![0.0; params.b_s.len()],
            d_w_y: Matrix::zeros(params.w_y.rows(), params.w_y.cols()),
            d_b_y: vec![0.0; params.b_y.len()],
        }
    }

    pub(crate) fn slices(&self) -> [&[f64]; 5] {
        [
            self.d_w_s.as_slice(),
            self.d_u_s.as_slice(),
            &self.d_b_s,
            self.d_w_y.as_slice(),
            &self.d_b_y,
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.d_w_s.as_mut_slice(),
            self.d_u_s.as_mut_slice(),
            &mut self.d_b_s,
            self.d_w_y.as_mut_slice(),
            &mut self.d_b_y,
        ]
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|g| g.is_finite()))
    }
}

/// Loss and exact gradients over one sequence:
///
/// `(1/T) Σ_t ‖target_t − ŷ_t‖² + λ (‖W_s‖² + ‖W_y‖² + ‖U_s‖²)`
///
/// starting from the zero state with `mask` frozen across all steps.
pub fn bptt_gradients(
    params: &RnnParams,
    mask: &DropoutMask,
    sequence: &Sequence,
    lambda: f64,
) -> Result<(f64, Gradients)> {
    mask.check_against(params)?;
    let steps = sequence.len();
    if steps == 0 {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let (m_x, m_s, m_y) = (params.input_dim(), params.state_dim(), params.output_dim());
    check_dim("sequence inputs", m_x, sequence.inputs.cols())?;
    check_dim("sequence targets", m_y, sequence.targets.cols())?;
    check_dim("sequence length", steps, sequence.targets.rows())?;

    let c = mask.keep_scale();
    let act = params.activation;

    // Forward pass, caching masked inputs, pre-activations and states.
    let mut xm = Matrix::zeros(steps, m_x);
    let mut pre = Matrix::zeros(steps, m_s);
    let mut states = Matrix::zeros(steps + 1, m_s); // row 0 is s_0 = 0
    let mut resid = Matrix::zeros(steps, m_y);
    let mut sm = vec![0.0; m_s];
    let mut rec = vec![0.0; m_s];
    let mut hm = vec![0.0; m_s];
    let mut y = vec![0.0; m_y];
    let mut sq_err = 0.0;
    for t in 0..steps {
        masked_into(xm.row_mut(t), sequence.inputs.row(t), &mask.z_in, c);
        masked_into(&mut sm, states.row(t), &mask.z_rec, c);
        params.w_s.matvec_into(xm.row(t), pre.row_mut(t));
        params.u_s.matvec_into(&sm, &mut rec);
        for ((a, r), b) in pre.row_mut(t).iter_mut().zip(&rec).zip(&params.b_s) {
            *a += r + b;
        }
        let (a_row, s_next) = (pre.row(t).to_vec(), states.row_mut(t + 1));
        for (s, a) in s_next.iter_mut().zip(&a_row) {
            *s = act.apply(*a);
        }
        masked_into(&mut hm, states.row(t + 1), &mask.z_out, c);
        params.w_y.matvec_into(&hm, &mut y);
        for (((r, yi), b), target) in resid
            .row_mut(t)
            .iter_mut()
            .zip(&y)
            .zip(&params.b_y)
            .zip(sequence.targets.row(t))
        {
            *r = yi + b - target;
            sq_err += *r * *r;
        }
    }
    let loss = sq_err / steps as f64 + lambda * params.weight_norm_sq();
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss (recurrent state exploded)".into()));
    }

    // Reverse accumulation.
    let mut g = Gradients::zeros_like(params);
    let mut ds_next = vec![0.0; m_s]; // dL/ds_t arriving from step t+1
    let mut dh = vec![0.0; m_s];
    let mut da = vec![0.0; m_s];
    let mut dy = vec![0.0; m_y];
    let coef = 2.0 / steps as f64;
    for t in (0..steps).rev() {
        for (d, r) in dy.iter_mut().zip(resid.row(t)) {
            *d = coef * r;
        }
        masked_into(&mut hm, states.row(t + 1), &mask.z_out, c);
        g.d_w_y.rank1_acc(1.0, &dy, &hm);
        for (gb, d) in g.d_b_y.iter_mut().zip(&dy) {
            *gb += d;
        }
        dh.iter_mut().for_each(|v| *v = 0.0);
        params.w_y.matvec_t_acc(&dy, &mut dh);
        let s_t = states.row(t + 1);
        for j in 0..m_s {
            let ds = if mask.z_out[j] { c * dh[j] } else { 0.0 } + ds_next[j];
            da[j] = ds * act.derivative(pre[(t, j)], s_t[j]);
        }
        g.d_w_s.rank1_acc(1.0, &da, xm.row(t));
        masked_into(&mut sm, states.row(t), &mask.z_rec, c);
        g.d_u_s.rank1_acc(1.0, &da, &sm);
        for (gb, d) in g.d_b_s.iter_mut().zip(&da) {
            *gb += d;
        }
        rec.iter_mut().for_each(|v| *v = 0.0);
        params.u_s.matvec_t_acc(&da, &mut rec);
        for j in 0..m_s {
            ds_next[j] = if mask.z_rec[j] { c * rec[j] } else { 0.0 };
        }
    }
    if lambda > 0.0 {
        let reg = |grad: &mut Matrix, w: &Matrix| {
            for (gv, wv) in grad.as_mut_slice().iter_mut().zip(w.as_slice()) {
                *gv += 2.0 * lambda * wv;
            }
        };
        reg(&mut g.d_w_s, &params.w_s);
        reg(&mut g.d_u_s, &params.u_s);
        reg(&mut g.d_w_y, &params.w_y);
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((loss, g))
}

/// Runs a whole input sequence from the zero state; row `t` of the result
/// is the prediction made after consuming row `t` of `inputs`.
pub fn run_sequence(params: &RnnParams, mask: &DropoutMask, inputs: &Matrix) -> Result<Matrix> {
    mask.check_against(params)?;
    check_dim("run_sequence inputs", params.input_dim(), inputs.cols())?;
    let mut s = vec![0.0; params.state_dim()];
    let mut out = Matrix::zeros(inputs.rows(), params.output_dim());
    let mut scratch = StepScratch::new(params.input_dim(), params.state_dim());
    for t in 0..inputs.rows() {
        step_in_place(
            params,
            mask,
            inputs.row(t),
            &mut s,
            out.row_mut(t),
            &mut scratch,
        );
    }
    if !out.is_finite() || !s.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("recurrent state exploded".into()));
    }
    Ok(out)
}
