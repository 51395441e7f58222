//! Offline calibration and online monitoring with a trained network:
//! ensemble prediction, detection statistic, per-variable scores and flags.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::detection::{calibrate_threshold, DetectionConfig, DetectionMethod, MonitorFrame};
use crate::detection::{detection_statistic, far, fdr};
use crate::error::{check_dim, Error, Result};
use crate::identification::{
    calibrate_var_thresholds, identification_scores, propagation_order, IdentificationConfig,
    IdentificationFrame, PropagationOrder, VarThresholds,
};
use crate::posterior::{init_ensemble, RnnModel, DEFAULT_ENSEMBLE_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorConfig {
    pub detection: DetectionConfig,
    pub identification: IdentificationConfig,
    pub ensemble_size: usize,
    pub ensemble_seed: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            identification: IdentificationConfig::default(),
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            ensemble_seed: 0,
        }
    }
}

/// Detection statistic and per-variable scores for steps `1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSeries {
    /// `times[i]` is the row index of the observation scored at position `i`.
    pub times: Vec<usize>,
    pub statistics: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
}

/// Runs a fresh ensemble over `ds` (normalized) and scores every one-step-
/// ahead prediction against the observation it targets.
pub fn score_series(
    model: &RnnModel,
    ds: &TimeSeriesDataset,
    cfg: &MonitorConfig,
) -> Result<ScoredSeries> {
    check_dim("monitored data width", model.dim(), ds.width())?;
    cfg.detection.validate(cfg.ensemble_size)?;
    let mut ensemble = init_ensemble(model, cfg.ensemble_size, cfg.ensemble_seed)?;
    let inputs = ds.slice_rows(0, ds.len() - 1)?;
    let traj = ensemble.run(model, inputs.values())?;
    let results: Vec<Result<(f64, Vec<f64>)>> = (0..traj.len())
        .into_par_iter()
        .map(|i| {
            let summary = traj.summary_at(i)?;
            let x = ds.row(i + 1);
            let stat = detection_statistic(x, &summary, &cfg.detection)?;
            let d = &cfg.detection;
            let scores = identification_scores(
                x,
                &summary,
                cfg.identification.score,
                d.k_min,
                d.k_max,
                d.eps_dist,
            )?;
            Ok((stat, scores))
        })
        .collect();
    let mut statistics = Vec::with_capacity(results.len());
    let mut scores = Vec::with_capacity(results.len());
    for r in results {
        let (s, v) = r?;
        statistics.push(s);
        scores.push(v);
    }
    Ok(ScoredSeries {
        times: (1..ds.len()).collect(),
        statistics,
        scores,
    })
}

/// Everything fixed at calibration time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub method: DetectionMethod,
    pub alpha: f64,
    pub detection: f64,
    pub identification: IdentificationConfig,
    pub variables: VarThresholds,
    /// Number of validation statistics the thresholds were drawn from.
    pub calibration_size: usize,
}

/// Calibrates detection and identification thresholds on validation data.
pub fn calibrate(
    model: &RnnModel,
    val: &TimeSeriesDataset,
    cfg: &MonitorConfig,
) -> Result<Thresholds> {
    let scored = score_series(model, val, cfg)?;
    let detection = calibrate_threshold(&scored.statistics, cfg.detection.alpha)?;
    let variables = calibrate_var_thresholds(&scored.scores, &cfg.identification)?;
    Ok(Thresholds {
        method: cfg.detection.method,
        alpha: cfg.detection.alpha,
        detection,
        identification: cfg.identification.clone(),
        variables,
        calibration_size: scored.statistics.len(),
    })
}

/// Applies calibrated thresholds to every scored step of `test`.
pub fn monitor(
    model: &RnnModel,
    thresholds: &Thresholds,
    test: &TimeSeriesDataset,
    cfg: &MonitorConfig,
) -> Result<Vec<MonitorFrame>> {
    if cfg.detection.method != thresholds.method || cfg.identification != thresholds.identification
    {
        return Err(Error::InvalidArgument(
            "monitoring configuration differs from the one the thresholds were calibrated with"
                .into(),
        ));
    }
    let scored = score_series(model, test, cfg)?;
    scored
        .times
        .iter()
        .zip(scored.statistics)
        .zip(scored.scores)
        .map(|((&t, stat), scores)| {
            let flags = thresholds.variables.flags(&scores)?;
            let mut frame = MonitorFrame::new(t, stat, thresholds.detection);
            frame.identification = Some(IdentificationFrame { t, scores, flags });
            Ok(frame)
        })
        .collect()
}

/// Identification frames at or after `start`.
pub fn identification_frames(frames: &[MonitorFrame], start: usize) -> Vec<IdentificationFrame> {
    frames
        .iter()
        .filter(|f| f.t >= start)
        .filter_map(|f| f.identification.clone())
        .collect()
}

/// Propagation order over the frames at or after `start`.
pub fn propagation_from(frames: &[MonitorFrame], start: usize) -> PropagationOrder {
    propagation_order(&identification_frames(frames, start))
}

/// Detection performance of a monitored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    /// FAR over frames before the onset (all frames without one).
    pub far: Option<f64>,
    pub fdr: Option<f64>,
    /// First alarm at or after the onset, minus the onset.
    pub delay: Option<usize>,
    pub alarms: usize,
    pub frames: usize,
}

/// `times`/`alarms` are the monitored frames; `onset` the first faulty time.
pub fn summarize(
    times: &[usize],
    alarms: &[bool],
    onset: Option<usize>,
) -> Result<DetectionSummary> {
    check_dim("alarm series", times.len(), alarms.len())?;
    let split = onset.map_or(times.len(), |o| times.partition_point(|&t| t < o));
    let far_v = if split > 0 {
        Some(far(&alarms[..split])?)
    } else {
        None
    };
    let (fdr_v, delay) = match onset {
        Some(o) if split < times.len() => (
            Some(fdr(alarms, split)?),
            (split..times.len())
                .find(|&i| alarms[i])
                .map(|i| times[i] - o),
        ),
        _ => (None, None),
    };
    Ok(DetectionSummary {
        far: far_v,
        fdr: fdr_v,
        delay,
        alarms: alarms.iter().filter(|&&a| a).count(),
        frames: alarms.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_splits_at_onset() {
        let times: Vec<usize> = (1..11).collect();
        let alarms = [
            false, true, false, false, false, false, true, true, false, true,
        ];
        let s = summarize(&times, &alarms, Some(6)).unwrap();
        assert_eq!(s.far, Some(0.2));
        assert_eq!(s.fdr, Some(0.6));
        assert_eq!(s.delay, Some(1));
        let none = summarize(&times, &alarms, None).unwrap();
        assert_eq!(none.far, Some(0.4));
        assert_eq!(none.fdr, None);
    }
}
