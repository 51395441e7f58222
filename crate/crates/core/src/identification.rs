//! Per-variable deviation scores, their thresholds, identification-plot
//! export and fault-propagation ordering.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, write_atomic};
use crate::detection::ldr_scalar;
use crate::error::{check_dim, Error, Result};
use crate::linalg::nearest_rank_index;
use crate::posterior::PredictiveSummary;

/// Which per-variable score drives identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Signed standardized deviation `(x − μ) / σ`.
    Deviation,
    /// Per-coordinate local density ratio.
    Ldr,
}

/// How per-variable thresholds are derived from validation scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Separate lower/upper thresholds per variable (lower only for signed scores).
    PerVariable,
    /// One threshold pair shared by every variable, from pooled scores.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentificationConfig {
    pub score: ScoreKind,
    pub mode: ThresholdMode,
    /// Use a lower threshold for signed scores too; off means `D > upper` only.
    pub two_sided: bool,
    /// Significance level per variable.
    pub alpha_id: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            score: ScoreKind::Deviation,
            mode: ThresholdMode::PerVariable,
            two_sided: true,
            alpha_id: 0.01,
        }
    }
}

/// Per-variable scores and flags at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationFrame {
    pub t: usize,
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
}

/// Thresholds per variable; `lower` is present only for the two-sided rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarThresholds {
    pub lower: Option<Vec<f64>>,
    pub upper: Vec<f64>,
}

impl VarThresholds {
    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    /// Flag of variable `l`: outside `[lower, upper]`, or above `upper`
    /// when one-sided. Boundary values never flag.
    pub fn flag(&self, l: usize, score: f64) -> bool {
        let above = score > self.upper[l];
        match &self.lower {
            Some(lo) => above || score < lo[l],
            None => above,
        }
    }

    pub fn flags(&self, scores: &[f64]) -> Result<Vec<bool>> {
        check_dim("identification flags", self.dim(), scores.len())?;
        Ok(scores
            .iter()
            .enumerate()
            .map(|(l, &s)| self.flag(l, s))
            .collect())
    }
}

/// Signed deviations `D^l = (x^l − μ^l) / σ^l`.
pub fn deviation_scores(x: &[f64], summary: &PredictiveSummary) -> Result<Vec<f64>> {
    check_dim("deviation_scores", summary.dim(), x.len())?;
    Ok(x.iter()
        .zip(&summary.mean)
        .zip(&summary.std)
        .map(|((xi, mu), s)| (xi - mu) / s)
        .collect())
}

/// Local density ratio of each coordinate of `x` against its own sample column.
pub fn ldr_per_variable(
    x: &[f64],
    summary: &PredictiveSummary,
    k_min: usize,
    k_max: usize,
    eps_dist: f64,
) -> Result<Vec<f64>> {
    check_dim("ldr_per_variable", summary.dim(), x.len())?;
    (0..x.len())
        .map(|l| ldr_scalar(x[l], &summary.samples.col(l), k_min, k_max, eps_dist))
        .collect()
}

/// Scores under the configured kind.
pub fn identification_scores(
    x: &[f64],
    summary: &PredictiveSummary,
    kind: ScoreKind,
    k_min: usize,
    k_max: usize,
    eps_dist: f64,
) -> Result<Vec<f64>> {
    match kind {
        ScoreKind::Deviation => deviation_scores(x, summary),
        ScoreKind::Ldr => ldr_per_variable(x, summary, k_min, k_max, eps_dist),
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    sorted[nearest_rank_index(sorted.len(), q)]
}

/// Nearest-rank thresholds from validation scores (`frames × m`).
///
/// Signed scores with `two_sided` get the `α/2` and `1 − α/2` quantiles;
/// every other combination gets the `1 − α` quantile as an upper bound.
pub fn calibrate_var_thresholds(
    validation_scores: &[Vec<f64>],
    cfg: &IdentificationConfig,
) -> Result<VarThresholds> {
    let alpha = cfg.alpha_id;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha_id {alpha} outside (0, 1)"
        )));
    }
    let needed = (1.0 / alpha - 1e-9).ceil() as usize;
    if validation_scores.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "identification thresholds at alpha_id={alpha} need {needed} validation frames, got {}",
            validation_scores.len()
        )));
    }
    let m = validation_scores[0].len();
    for row in validation_scores {
        check_dim("validation scores", m, row.len())?;
    }
    let two_sided = cfg.two_sided && cfg.score == ScoreKind::Deviation;
    let columns: Vec<Vec<f64>> = match cfg.mode {
        ThresholdMode::PerVariable => (0..m)
            .map(|l| validation_scores.iter().map(|r| r[l]).collect())
            .collect(),
        ThresholdMode::Global => vec![validation_scores.iter().flatten().copied().collect()],
    };
    let mut lower = Vec::with_capacity(columns.len());
    let mut upper = Vec::with_capacity(columns.len());
    for mut c in columns {
        c.sort_by(f64::total_cmp);
        if two_sided {
            lower.push(quantile_sorted(&c, alpha / 2.0));
            upper.push(quantile_sorted(&c, 1.0 - alpha / 2.0));
        } else {
            upper.push(quantile_sorted(&c, 1.0 - alpha));
        }
    }
    if cfg.mode == ThresholdMode::Global {
        upper = vec![upper[0]; m];
        if two_sided {
            lower = vec![lower[0]; m];
        }
    }
    Ok(VarThresholds {
        lower: two_sided.then_some(lower),
        upper,
    })
}

/// Fault-propagation order: `(variable, first flagged t)` sorted by time,
/// ties by variable index, unflagged variables omitted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationOrder {
    pub entries: Vec<(usize, usize)>,
}

impl PropagationOrder {
    pub fn variables(&self) -> Vec<usize> {
        self.entries.iter().map(|&(v, _)| v).collect()
    }

    pub fn position(&self, variable: usize) -> Option<usize> {
        self.entries.iter().position(|&(v, _)| v == variable)
    }
}

pub fn propagation_order(frames: &[IdentificationFrame]) -> PropagationOrder {
    let m = frames.first().map_or(0, |f| f.flags.len());
    let mut first: Vec<Option<usize>> = vec![None; m];
    for f in frames {
        for (l, &flag) in f.flags.iter().enumerate().take(m) {
            if flag && first[l].is_none() {
                first[l] = Some(f.t);
            }
        }
    }
    let mut entries: Vec<(usize, usize)> = first
        .into_iter()
        .enumerate()
        .filter_map(|(l, t)| t.map(|t| (l, t)))
        .collect();
    entries.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    PropagationOrder { entries }
}

/// CSV grid with one row per variable and one column per time index.
///
/// The header row is `variable,t_0,…`; each following row starts with the
/// variable name. `cell(j, l)` renders frame `j`, variable `l`.
pub fn grid_csv(
    times: &[usize],
    names: &[String],
    cell: impl Fn(usize, usize) -> String,
) -> String {
    let mut out = String::from("variable");
    for t in times {
        let _ = write!(out, ",{t}");
    }
    out.push('\n');
    for (l, name) in names.iter().enumerate() {
        out.push_str(name);
        for j in 0..times.len() {
            out.push(',');
            out.push_str(&cell(j, l));
        }
        out.push('\n');
    }
    out
}

/// Identification-plot grids as `(scores_csv, flags_csv)`; see [`grid_csv`].
pub fn idplot_grids(frames: &[IdentificationFrame], names: &[String]) -> Result<(String, String)> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument(
            "identification plot needs at least one frame".into(),
        ));
    }
    let m = names.len();
    for f in frames {
        check_dim("identification frame scores", m, f.scores.len())?;
        check_dim("identification frame flags", m, f.flags.len())?;
    }
    let times: Vec<usize> = frames.iter().map(|f| f.t).collect();
    let scores = grid_csv(&times, names, |j, l| fmt_f64(frames[j].scores[l]));
    let flags = grid_csv(&times, names, |j, l| {
        if frames[j].flags[l] { "1" } else { "0" }.to_string()
    });
    Ok((scores, flags))
}

/// Writes the score grid to `scores_path` and the 0/1 flag grid to `flags_path`.
pub fn export_idplot(
    frames: &[IdentificationFrame],
    names: &[String],
    scores_path: impl AsRef<Path>,
    flags_path: impl AsRef<Path>,
) -> Result<()> {
    let (scores, flags) = idplot_grids(frames, names)?;
    write_atomic(scores_path, scores.as_bytes())?;
    write_atomic(flags_path, flags.as_bytes())
}

/// Variable names, time indices and one score row per variable.
pub type IdplotGrid = (Vec<String>, Vec<usize>, Vec<Vec<f64>>);

/// Reads a score grid back as `(names, time indices, rows)`.
pub fn parse_idplot(text: &str) -> Result<IdplotGrid> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Csv("empty file".into()))?;
    let times = header
        .split(',')
        .skip(1)
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Csv(format!("bad time index '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut names = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let mut cells = line.split(',');
        names.push(cells.next().unwrap_or_default().to_string());
        let row = cells
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::Csv(format!("non-numeric cell in row {}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        check_dim("identification plot row", times.len(), row.len())?;
        rows.push(row);
    }
    Ok((names, times, rows))
}
