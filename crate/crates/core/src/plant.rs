//! Synthetic closed-loop plant: a linear state-space process under
//! decoupled PI control, with injectable faults and ground-truth labels from
//! a noise-free twin trajectory.
//!
//! ```text
//! x_{k+1} = A x_k + B (u_k + d_k) + w_k
//! y_k     = h(C x_k) + v_k + b_k          (h: identity or mild saturation)
//! e_k     = r − y_k[0..n_mv]
//! I_k     = I_{k−1} + e_k
//! u_k     = u_ss + G0⁻¹ (Kp e_k + Ki I_k)
//! ```
//!
//! The first `n_mv` measurements are controlled; `G0 = C_c (I − A)⁻¹ B` is the
//! steady-state gain from inputs to controlled outputs. Recorded rows are
//! `[y_k ∥ u_k + ν_k]`, where `ν_k` is valve-position readback noise.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

const MAX_CLOSED_LOOP_RADIUS: f64 = 0.98;
const BURN_IN: usize = 200;
const TRUTH_BAND: f64 = 2.0;
const LYAPUNOV_MAX_DOUBLINGS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputNonlinearity {
    None,
    /// `dev ↦ s·tanh(dev / s)` on measurement deviations, `s` four NOC stds.
    MildSaturation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub n_state: usize,
    pub n_meas: usize,
    pub n_mv: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub kp: f64,
    pub ki: f64,
    /// Process-noise std per state.
    pub process_noise: f64,
    /// Sensor-noise std per measurement.
    pub sensor_noise: Vec<f64>,
    /// Readback-noise std per manipulated variable.
    pub mv_noise: Vec<f64>,
    /// Steady-state manipulated-variable values.
    pub u_ss: Vec<f64>,
    pub nonlinearity: OutputNonlinearity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    None,
    Controllable,
    BackToControl,
    Uncontrollable,
}

impl std::str::FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "controllable" => Ok(Self::Controllable),
            "back_to_control" => Ok(Self::BackToControl),
            "uncontrollable" => Ok(Self::Uncontrollable),
            other => Err(Error::InvalidArgument(format!(
                "unknown fault kind '{other}' (expected none, controllable, back_to_control or uncontrollable)"
            ))),
        }
    }
}

/// A fault injected from `onset` (recorded time index) onward.
///
/// `magnitude` is in NOC stds of `target_channel`, a recorded channel index:
/// an uncontrolled measurement for sensor faults, a manipulated variable for
/// actuator faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub kind: FaultKind,
    pub onset: usize,
    pub magnitude: f64,
    pub target_channel: usize,
    /// Steps after onset within which measurements must be back in band
    /// (back-to-control only).
    pub recovery_horizon: usize,
}

impl FaultScenario {
    pub fn none() -> Self {
        Self {
            kind: FaultKind::None,
            onset: 1,
            magnitude: 0.0,
            target_channel: 0,
            recovery_horizon: 0,
        }
    }

    /// Reference scenario of each kind for the default plant layout.
    pub fn reference(kind: FaultKind, onset: usize) -> Self {
        let (magnitude, target_channel, recovery_horizon) = match kind {
            FaultKind::None => (0.0, 0, 0),
            FaultKind::Controllable => (0.8, 13, 0),
            FaultKind::BackToControl => (3.0, 11, 500),
            FaultKind::Uncontrollable => (5.0, 7, 0),
        };
        Self {
            kind,
            onset,
            magnitude,
            target_channel,
            recovery_horizon,
        }
    }
}

/// Simulated run with per-step ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub dataset: TimeSeriesDataset,
    /// Noise-free twin outside the NOC band on any channel.
    pub truth: Vec<bool>,
    /// Channels outside the band, per step.
    pub affected: Vec<Vec<usize>>,
    /// Analytic NOC std of every recorded channel.
    pub noc_std: Vec<f64>,
    /// Noise-free twin trajectory (recorded layout).
    pub noise_free: Matrix,
    /// Nominal operating point of every recorded channel.
    pub nominal: Vec<f64>,
}

impl LabeledDataset {
    /// Truth sidecar: `t,truth,affected` with `;`-joined channel indices.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("t,truth,affected\n");
        for (t, (flag, aff)) in self.truth.iter().zip(&self.affected).enumerate() {
            let joined: Vec<String> = aff.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{t},{},{}", u8::from(*flag), joined.join(";"));
        }
        out
    }

    pub fn write_truth(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.truth_csv().as_bytes())
    }
}

/// Parsed truth sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthTable {
    pub truth: Vec<bool>,
    pub affected: Vec<Vec<usize>>,
}

impl TruthTable {
    /// First faulty step, if any.
    pub fn onset(&self) -> Option<usize> {
        self.truth.iter().position(|&t| t)
    }
}

pub fn parse_truth_csv(text: &str) -> Result<TruthTable> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "t,truth,affected" => {}
        _ => {
            return Err(Error::Csv(
                "truth file must start with 't,truth,affected'".into(),
            ))
        }
    }
    let mut truth = Vec::new();
    let mut affected = Vec::new();
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Csv(format!(
                "truth row {}: expected 3 fields",
                i + 1
            )));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| Error::Csv(format!("truth row {}: bad time index", i + 1)))?;
        if t != i {
            return Err(Error::Csv(format!(
                "truth row {}: time index {t} out of order",
                i + 1
            )));
        }
        truth.push(match fields[1] {
            "0" => false,
            "1" => true,
            _ => {
                return Err(Error::Csv(format!(
                    "truth row {}: flag must be 0 or 1",
                    i + 1
                )))
            }
        });
        let aff = if fields[2].is_empty() {
            Vec::new()
        } else {
            fields[2]
                .split(';')
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Csv(format!("truth row {}: bad channel index", i + 1)))
                })
                .collect::<Result<Vec<usize>>>()?
        };
        affected.push(aff);
    }
    Ok(TruthTable { truth, affected })
}

fn to_dm(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_dm(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Derived closed-loop quantities shared by simulation and analysis.
struct Loop {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    /// Inverse steady-state gain.
    g: DMatrix<f64>,
    x_ss: Vec<f64>,
    y_ss: Vec<f64>,
}

impl PlantConfig {
    pub fn n_channels(&self) -> usize {
        self.n_meas + self.n_mv
    }

    pub fn channel_names(&self) -> Vec<String> {
        (0..self.n_meas)
            .map(|i| format!("y{i}"))
            .chain((0..self.n_mv).map(|i| format!("u{i}")))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let (n, p, q) = (self.n_state, self.n_meas, self.n_mv);
        let shapes_ok = self.a.shape() == (n, n)
            && self.b.shape() == (n, q)
            && self.c.shape() == (p, n)
            && self.sensor_noise.len() == p
            && self.mv_noise.len() == q
            && self.u_ss.len() == q;
        if !shapes_ok || q == 0 || q > p {
            return Err(Error::InvalidArgument(
                "plant matrices/noise vectors inconsistent with (n_state, n_meas, n_mv)".into(),
            ));
        }
        let noise_ok = self.process_noise > 0.0
            && self
                .sensor_noise
                .iter()
                .chain(&self.mv_noise)
                .all(|&s| s > 0.0);
        if !noise_ok {
            return Err(Error::InvalidArgument(
                "plant noise stds must be positive".into(),
            ));
        }
        Ok(())
    }

    fn build_loop(&self) -> Result<Loop> {
        self.validate()?;
        let a = to_dm(&self.a);
        let b = to_dm(&self.b);
        let c = to_dm(&self.c);
        let n = self.n_state;
        let q = self.n_mv;
        let ima_inv = (DMatrix::identity(n, n) - &a)
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("I − A is singular".into()))?;
        let g0 = c.rows(0, q) * &ima_inv * &b;
        let g = g0
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("steady-state gain is singular".into()))?;
        let u = nalgebra::DVector::from_column_slice(&self.u_ss);
        let x_ss = &ima_inv * &b * u;
        let y_ss = &c * &x_ss;
        Ok(Loop {
            a,
            b,
            c,
            g,
            x_ss: x_ss.iter().copied().collect(),
            y_ss: y_ss.iter().copied().collect(),
        })
    }

    /// Closed-loop transition on `[x − x_ss; I_{k−1}]`.
    fn closed_loop_matrix(&self, lp: &Loop) -> DMatrix<f64> {
        let n = self.n_state;
        let q = self.n_mv;
        let cc = lp.c.rows(0, q).into_owned();
        let bg = &lp.b * &lp.g;
        let mut m = DMatrix::zeros(n + q, n + q);
        let top_left = &lp.a - (self.kp + self.ki) * &bg * &cc;
        m.view_mut((0, 0), (n, n)).copy_from(&top_left);
        m.view_mut((0, n), (n, q)).copy_from(&(self.ki * &bg));
        m.view_mut((n, 0), (q, n)).copy_from(&(-&cc));
        m.view_mut((n, n), (q, q))
            .copy_from(&DMatrix::identity(q, q));
        m
    }

    /// Spectral radius of the closed loop.
    pub fn closed_loop_radius(&self) -> Result<f64> {
        let lp = self.build_loop()?;
        Ok(spectral_radius(&self.closed_loop_matrix(&lp)))
    }

    /// Errors unless the closed loop is stable with radius below 0.98.
    pub fn check_stable(&self) -> Result<f64> {
        let rho = self.closed_loop_radius()?;
        if !(rho < MAX_CLOSED_LOOP_RADIUS) {
            return Err(Error::UnstablePlant(rho));
        }
        Ok(rho)
    }

    /// Stationary std of every recorded channel under the linear loop.
    pub fn noc_std(&self) -> Result<Vec<f64>> {
        let lp = self.build_loop()?;
        let rho = spectral_radius(&self.closed_loop_matrix(&lp));
        if !(rho < MAX_CLOSED_LOOP_RADIUS) {
            return Err(Error::UnstablePlant(rho));
        }
        let (n, p, q) = (self.n_state, self.n_meas, self.n_mv);
        let acl = self.closed_loop_matrix(&lp);
        let kpi = self.kp + self.ki;
        // Noise input map for [w; v]: w drives x directly, the controlled
        // sensors' noise enters through the error signal.
        let mut bn = DMatrix::zeros(n + q, n + p);
        bn.view_mut((0, 0), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        let bg = &lp.b * &lp.g;
        bn.view_mut((0, n), (n, q)).copy_from(&(-kpi * &bg));
        bn.view_mut((n, n), (q, q))
            .copy_from(&(-DMatrix::identity(q, q)));
        let mut cov_n = DMatrix::zeros(n + p, n + p);
        for i in 0..n {
            cov_n[(i, i)] = self.process_noise * self.process_noise;
        }
        for j in 0..p {
            cov_n[(n + j, n + j)] = self.sensor_noise[j] * self.sensor_noise[j];
        }
        let qmat = &bn * &cov_n * bn.transpose();
        let state_cov = lyapunov(&acl, &qmat)?;
        // Recorded channels as a map of [z; w; v].
        let cc = lp.c.rows(0, q).into_owned();
        let mut out_map = DMatrix::zeros(p + q, 2 * n + q + p);
        out_map.view_mut((0, 0), (p, n)).copy_from(&lp.c);
        out_map
            .view_mut((0, 2 * n + q), (p, p))
            .copy_from(&DMatrix::identity(p, p));
        out_map
            .view_mut((p, 0), (q, n))
            .copy_from(&(-kpi * &lp.g * &cc));
        out_map
            .view_mut((p, n), (q, q))
            .copy_from(&(self.ki * &lp.g));
        out_map
            .view_mut((p, 2 * n + q), (q, q))
            .copy_from(&(-kpi * &lp.g));
        // Joint covariance of [z; w; v]: z_k is independent of the current w_k,
        // and the current v_k.
        let dim = 2 * n + q + p;
        let mut joint = DMatrix::zeros(dim, dim);
        joint.view_mut((0, 0), (n + q, n + q)).copy_from(&state_cov);
        joint
            .view_mut((n + q, n + q), (n + p, n + p))
            .copy_from(&cov_n);
        let y_cov = &out_map * joint * out_map.transpose();
        Ok((0..p + q)
            .map(|i| {
                let readback = if i >= p {
                    self.mv_noise[i - p].powi(2)
                } else {
                    0.0
                };
                (y_cov[(i, i)] + readback).sqrt()
            })
            .collect())
    }
}

/// Solves `P = A P Aᵀ + Q` by doubling.
fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    let mut ak = a.clone();
    for _ in 0..LYAPUNOV_MAX_DOUBLINGS {
        let next = &p + &ak * &p * ak.transpose();
        let change = (&next - &p).abs().max();
        p = next;
        ak = &ak * &ak;
        if change <= 1e-15 * p.abs().max().max(1.0) {
            return Ok(p);
        }
    }
    Err(Error::NotConverged("discrete Lyapunov equation".into()))
}

/// Gram–Schmidt orthonormalization of a square Gaussian matrix.
fn random_orthogonal(n: usize, rng: &mut Rng) -> DMatrix<f64> {
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut j = 0;
    while j < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for k in 0..j {
            let d: f64 = (0..n).map(|i| v[i] * q[(i, k)]).sum();
            for (i, vi) in v.iter_mut().enumerate() {
                *vi -= d * q[(i, k)];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for (i, vi) in v.iter().enumerate() {
                q[(i, j)] = vi / norm;
            }
            j += 1;
        }
    }
    q
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Seed of the plant used by the acceptance experiments and CLI defaults.
pub const REFERENCE_PLANT_SEED: u64 = 0;

/// Reference plant: 8 states, 10 measurements (first 4 controlled), 4
/// manipulated variables, open-loop spectral radius 0.9.
///
/// `A = Q·blockdiag(two damped rotations, four real poles)·Qᵀ` with random
/// orthogonal `Q`; `B`, `C` Gaussian. Candidates are redrawn (same seed
/// stream) until the steady-state gain is well conditioned and the closed
/// loop is stable.
pub fn default_plant(seed: u64) -> PlantConfig {
    let (n, p, q) = (8, 10, 4);
    let mut rng = Rng::with_stream(seed, 0x0070_6c61_6e74);
    loop {
        let mut d = DMatrix::<f64>::zeros(n, n);
        for blk in 0..2 {
            let r = if blk == 0 {
                0.9
            } else {
                rng.uniform_range(0.5, 0.85)
            };
            let th = rng.uniform_range(0.2, 1.2);
            let (s, c) = (libm::sin(th), libm::cos(th));
            let i = 2 * blk;
            d[(i, i)] = r * c;
            d[(i, i + 1)] = -r * s;
            d[(i + 1, i)] = r * s;
            d[(i + 1, i + 1)] = r * c;
        }
        for i in 4..n {
            d[(i, i)] = rng.uniform_range(0.2, 0.85);
        }
        let qm = random_orthogonal(n, &mut rng);
        let a = from_dm(&(&qm * d * qm.transpose()));
        let b = gaussian(n, q, 0.5, &mut rng);
        let c = gaussian(p, n, 1.0 / (n as f64).sqrt(), &mut rng);
        let u_ss = (0..q).map(|_| rng.normal()).collect();
        let cfg = PlantConfig {
            n_state: n,
            n_meas: p,
            n_mv: q,
            a,
            b,
            c,
            kp: 0.5,
            ki: 0.065,
            process_noise: 0.1,
            sensor_noise: vec![0.02; p],
            mv_noise: vec![0.05; q],
            u_ss,
            nonlinearity: OutputNonlinearity::None,
        };
        let Ok(lp) = cfg.build_loop() else { continue };
        let sv = lp.g.clone().svd(false, false).singular_values;
        let cond = sv.max() / sv.min();
        if cond > 20.0 {
            continue;
        }
        match cfg.check_stable() {
            Ok(rho) if rho > 0.5 => return cfg,
            _ => continue,
        }
    }
}

fn validate_scenario(cfg: &PlantConfig, sc: &FaultScenario, t_len: usize) -> Result<()> {
    if sc.kind == FaultKind::None {
        return Ok(());
    }
    let bad = |msg: String| Err(Error::InvalidArgument(msg));
    if sc.onset < 1 || t_len <= sc.onset + 50 {
        return bad(format!(
            "fault onset {} must satisfy 1 <= onset and onset + 50 < T = {t_len}",
            sc.onset
        ));
    }
    if !sc.magnitude.is_finite() {
        return bad("fault magnitude must be finite".into());
    }
    let (p, q) = (cfg.n_meas, cfg.n_mv);
    match sc.kind {
        FaultKind::Uncontrollable => {
            if !(q..p).contains(&sc.target_channel) {
                return bad(format!(
                    "uncontrollable faults target an uncontrolled measurement (channels {q}..{})",
                    p - 1
                ));
            }
            if sc.magnitude.abs() < 5.0 {
                return bad("uncontrollable faults need |magnitude| >= 5".into());
            }
        }
        FaultKind::Controllable | FaultKind::BackToControl => {
            if !(p..p + q).contains(&sc.target_channel) {
                return bad(format!(
                    "actuator faults target a manipulated variable (channels {p}..{})",
                    p + q - 1
                ));
            }
            if sc.kind == FaultKind::Controllable && sc.magnitude.abs() > 1.0 {
                return bad("controllable faults need |magnitude| <= 1".into());
            }
            if sc.kind == FaultKind::BackToControl {
                if sc.magnitude.abs() < 3.0 {
                    return bad("back-to-control faults need |magnitude| >= 3".into());
                }
                if sc.onset + sc.recovery_horizon >= t_len {
                    return bad("recovery horizon extends past the end of the run".into());
                }
            }
        }
        FaultKind::None => {}
    }
    Ok(())
}

struct Noise<'a> {
    rng: Option<&'a mut Rng>,
}

impl Noise<'_> {
    fn draw(&mut self, std: f64) -> f64 {
        match self.rng.as_deref_mut() {
            Some(r) => std * r.normal(),
            None => 0.0,
        }
    }
}

/// Runs the loop for `t_len` recorded steps (after a burn-in from the
/// operating point); `rng = None` gives the noise-free twin.
fn run(
    cfg: &PlantConfig,
    lp: &Loop,
    sc: &FaultScenario,
    noc_std: &[f64],
    t_len: usize,
    rng: Option<&mut Rng>,
) -> Matrix {
    let (n, p, q) = (cfg.n_state, cfg.n_meas, cfg.n_mv);
    let mut noise = Noise { rng };
    let mut x = lp.x_ss.clone();
    let mut integ = vec![0.0; q];
    let mut out = Matrix::zeros(t_len, p + q);
    let fault_value = sc.magnitude * noc_std.get(sc.target_channel).copied().unwrap_or(0.0);
    let sat: Vec<f64> = noc_std[..p].iter().map(|s| 4.0 * s).collect();
    let mut y = vec![0.0; p];
    let mut u = vec![0.0; q];
    for k in 0..BURN_IN + t_len {
        let t = k.checked_sub(BURN_IN);
        let active = t.is_some_and(|t| t >= sc.onset) && sc.kind != FaultKind::None;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut dev: f64 = (0..n).map(|j| lp.c[(i, j)] * x[j]).sum::<f64>() - lp.y_ss[i];
            if cfg.nonlinearity == OutputNonlinearity::MildSaturation {
                dev = sat[i] * libm::tanh(dev / sat[i]);
            }
            *yi = lp.y_ss[i] + dev + noise.draw(cfg.sensor_noise[i]);
        }
        if active && sc.kind == FaultKind::Uncontrollable {
            y[sc.target_channel] += fault_value;
        }
        let e: Vec<f64> = (0..q).map(|i| lp.y_ss[i] - y[i]).collect();
        for (acc, ei) in integ.iter_mut().zip(&e) {
            *acc += ei;
        }
        for (i, ui) in u.iter_mut().enumerate() {
            let corr: f64 = (0..q)
                .map(|j| lp.g[(i, j)] * (cfg.kp * e[j] + cfg.ki * integ[j]))
                .sum();
            *ui = cfg.u_ss[i] + corr;
        }
        let mut u_applied = u.clone();
        if active && matches!(sc.kind, FaultKind::Controllable | FaultKind::BackToControl) {
            u_applied[sc.target_channel - p] += fault_value;
        }
        let w: Vec<f64> = (0..n).map(|_| noise.draw(cfg.process_noise)).collect();
        let readback: Vec<f64> = (0..q).map(|i| noise.draw(cfg.mv_noise[i])).collect();
        if let Some(t) = t {
            let row = out.row_mut(t);
            row[..p].copy_from_slice(&y);
            for i in 0..q {
                row[p + i] = u[i] + readback[i];
            }
        }
        let mut next = w;
        for (i, nx) in next.iter_mut().enumerate() {
            *nx += (0..n).map(|j| lp.a[(i, j)] * x[j]).sum::<f64>()
                + (0..q).map(|j| lp.b[(i, j)] * u_applied[j]).sum::<f64>();
        }
        x = next;
    }
    out
}

/// Simulates `t_len` recorded steps of `cfg` under `scenario`.
pub fn simulate(
    cfg: &PlantConfig,
    scenario: &FaultScenario,
    t_len: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if t_len < 2 {
        return Err(Error::InvalidArgument(format!("need T >= 2, got {t_len}")));
    }
    cfg.check_stable()?;
    validate_scenario(cfg, scenario, t_len)?;
    let lp = cfg.build_loop()?;
    let noc_std = cfg.noc_std()?;
    let mut rng = Rng::seed_from_u64(seed);
    let data = run(cfg, &lp, scenario, &noc_std, t_len, Some(&mut rng));
    let twin = run(cfg, &lp, scenario, &noc_std, t_len, None);
    let nominal: Vec<f64> = lp.y_ss.iter().chain(&cfg.u_ss).copied().collect();
    let mut truth = Vec::with_capacity(t_len);
    let mut affected = Vec::with_capacity(t_len);
    for row in twin.row_iter() {
        let aff: Vec<usize> = (0..row.len())
            .filter(|&j| (row[j] - nominal[j]).abs() > TRUTH_BAND * noc_std[j])
            .collect();
        truth.push(!aff.is_empty());
        affected.push(aff);
    }
    let dataset = TimeSeriesDataset::new(data, cfg.channel_names())?;
    Ok(LabeledDataset {
        dataset,
        truth,
        affected,
        noc_std,
        noise_free: twin,
        nominal,
    })
}
