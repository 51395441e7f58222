//! The six pipeline commands. Each reads its inputs, writes its outputs
//! atomically under the output directory and returns a short log.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use brnn_core::baselines::{
    calibrate_and_monitor, dpca_augment, fit_dpca, parallel_analysis, AlarmRule, BaselineRun,
};
use brnn_core::data::{fmt_f64, load_csv, normalize, write_atomic, write_csv, TimeSeriesDataset};
use brnn_core::identification::{export_idplot, grid_csv};
use brnn_core::monitor::{calibrate, identification_frames, monitor, propagation_from, summarize};
use brnn_core::plant::{
    default_plant, parse_truth_csv, simulate, FaultKind, FaultScenario, TruthTable,
};
use brnn_core::trainer::train;
use serde::{Deserialize, Serialize};

use crate::artifact::{write_json, ModelArtifact, ThresholdsFile};
use crate::config::{BaselineVariant, RunConfig};
use crate::error::{CliError, CliResult};

/// Per-run summary consumed by the report command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub method: String,
    pub scenario: String,
    pub frames: usize,
    pub alarms: usize,
    pub onset: Option<usize>,
    pub far: Option<f64>,
    pub fdr: Option<f64>,
    pub delay: Option<usize>,
    /// `(variable, first flagged t)` ascending; empty for baselines.
    pub propagation: Vec<(String, usize)>,
    pub notes: Vec<String>,
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load_dataset(path: &Path) -> CliResult<TimeSeriesDataset> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    load_csv(path).map_err(|e| CliError::format(path, e))
}

/// `<dir>/<stem>.truth.csv` next to a data file.
pub fn sidecar_path(data: &Path) -> PathBuf {
    let stem = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    data.with_file_name(format!("{stem}.truth.csv"))
}

/// Truth table from an explicit path, else from the sidecar if present.
fn load_truth(data: &Path, explicit: Option<&Path>, rows: usize) -> CliResult<Option<TruthTable>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let p = sidecar_path(data);
            if !p.is_file() {
                return Ok(None);
            }
            p
        }
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let table = parse_truth_csv(&text).map_err(|e| CliError::format(&path, e))?;
    if table.truth.len() != rows {
        return Err(CliError::Usage(format!(
            "truth file {} has {} rows but the data has {rows}",
            path.display(),
            table.truth.len()
        )));
    }
    Ok(Some(table))
}

fn scenario_name(explicit: Option<&str>, test: &Path) -> String {
    explicit.map(str::to_string).unwrap_or_else(|| {
        test.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    })
}

fn check_variables(path: &Path, expected: &[String], got: &[String]) -> CliResult<()> {
    if expected != got {
        return Err(CliError::Usage(format!(
            "{}: columns [{}] do not match the model's variables [{}]",
            path.display(),
            got.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<String> {
    let s = &cfg.simulate;
    let plant = default_plant(s.plant_seed()?);
    let scenario = if s.fault == FaultKind::None {
        FaultScenario::none()
    } else {
        let mut sc = FaultScenario::reference(s.fault, s.onset);
        if let Some(m) = s.magnitude {
            sc.magnitude = m;
        }
        if let Some(c) = s.target_channel {
            sc.target_channel = c;
        }
        sc
    };
    let run = simulate(&plant, &scenario, s.t, s.seed).map_err(|e| match e {
        brnn_core::Error::InvalidArgument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    create_dir(&cfg.out)?;
    let data_path = cfg.out.join(format!("{}.csv", s.name));
    let truth_path = sidecar_path(&data_path);
    write_csv(&run.dataset, &data_path)?;
    run.write_truth(&truth_path)?;
    Ok(format!(
        "wrote {} rows to {} and {}\n",
        run.dataset.len(),
        data_path.display(),
        truth_path.display()
    ))
}

/// Refuses training data with any faulty row in its truth sidecar.
fn guard_noc(path: &Path, ds: &TimeSeriesDataset) -> CliResult<()> {
    if let Some(table) = load_truth(path, None, ds.len())? {
        if let Some(t) = table.onset() {
            return Err(CliError::Usage(format!(
                "{} contains faulty rows (first at t={t}); training needs normal operating data",
                path.display()
            )));
        }
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, train_path: &Path, val_path: &Path) -> CliResult<String> {
    let train_raw = load_dataset(train_path)?;
    let val_raw = load_dataset(val_path)?;
    guard_noc(train_path, &train_raw)?;
    guard_noc(val_path, &val_raw)?;
    check_variables(val_path, train_raw.names(), val_raw.names())?;
    let stats = brnn_core::data::fit_normalizer(&train_raw);
    let tr = normalize(&train_raw, &stats)?;
    let va = normalize(&val_raw, &stats)?;
    let (model, report) = train(
        &tr,
        &va,
        cfg.model.state_dim,
        cfg.model.activation,
        &cfg.train,
    )?;
    let artifact = ModelArtifact::new(
        model,
        train_raw.names().to_vec(),
        stats,
        cfg.monitor.ensemble_seed,
    );
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("model.json"), &artifact)?;
    write_json(&cfg.out.join("train_report.json"), &report)?;
    Ok(format!(
        "trained {} epochs, kept epoch {} (validation log-likelihood {:.3}), tau {}\n",
        report.validation_log_likelihood.len(),
        report.selected_epoch,
        report.validation_log_likelihood[report.selected_epoch],
        artifact.model.tau
    ))
}

pub fn cmd_calibrate(cfg: &RunConfig, model_path: &Path, val_path: &Path) -> CliResult<String> {
    let artifact = ModelArtifact::load(model_path)?;
    let val_raw = load_dataset(val_path)?;
    check_variables(val_path, &artifact.variables, val_raw.names())?;
    let val = normalize(&val_raw, &artifact.normalization)?;
    let mut mcfg = cfg.monitor.clone();
    mcfg.ensemble_seed = artifact.ensemble_seed;
    let thresholds = calibrate(&artifact.model, &val, &mcfg)?;
    let file = ThresholdsFile::new(artifact.variables.clone(), &mcfg, thresholds);
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("thresholds.json"), &file)?;
    Ok(format!(
        "detection threshold {:.6} from {} validation steps\n",
        file.thresholds.detection, file.thresholds.calibration_size
    ))
}

pub fn cmd_monitor(
    model_path: &Path,
    thresholds_path: &Path,
    test_path: &Path,
    truth_path: Option<&Path>,
    scenario: Option<&str>,
    out: &Path,
) -> CliResult<String> {
    let artifact = ModelArtifact::load(model_path)?;
    let th = ThresholdsFile::load(thresholds_path)?;
    check_variables(thresholds_path, &artifact.variables, &th.variables)?;
    let test_raw = load_dataset(test_path)?;
    check_variables(test_path, &artifact.variables, test_raw.names())?;
    let truth = load_truth(test_path, truth_path, test_raw.len())?;
    let test = normalize(&test_raw, &artifact.normalization)?;
    let mcfg = th.monitor_config(artifact.ensemble_seed);
    let frames = monitor(&artifact.model, &th.thresholds, &test, &mcfg)?;

    let names = &artifact.variables;
    let mut csv = String::from("t,statistic,threshold,alarm");
    for n in names {
        let _ = write!(csv, ",{n}_score");
    }
    for n in names {
        let _ = write!(csv, ",{n}_flag");
    }
    csv.push('\n');
    for f in &frames {
        let _ = write!(
            csv,
            "{},{},{},{}",
            f.t,
            fmt_f64(f.statistic),
            fmt_f64(f.threshold),
            flag(f.alarm)
        );
        if let Some(id) = &f.identification {
            for s in &id.scores {
                let _ = write!(csv, ",{}", fmt_f64(*s));
            }
            for b in &id.flags {
                let _ = write!(csv, ",{}", flag(*b));
            }
        }
        csv.push('\n');
    }
    create_dir(out)?;
    write_atomic(out.join("monitor.csv"), csv.as_bytes())?;
    export_idplot(
        &identification_frames(&frames, 0),
        names,
        out.join("idplot_scores.csv"),
        out.join("idplot_flags.csv"),
    )?;

    let times: Vec<usize> = frames.iter().map(|f| f.t).collect();
    let alarms: Vec<bool> = frames.iter().map(|f| f.alarm).collect();
    let onset = truth.as_ref().and_then(TruthTable::onset);
    let det = summarize(&times, &alarms, onset)?;
    let order = propagation_from(&frames, onset.unwrap_or(0));
    let method = match th.thresholds.method {
        brnn_core::detection::DetectionMethod::Mahalanobis => "brnn-m2",
        brnn_core::detection::DetectionMethod::Ldr => "brnn-ldr",
    };
    let summary = RunSummary {
        method: method.into(),
        scenario: scenario_name(scenario, test_path),
        frames: det.frames,
        alarms: det.alarms,
        onset,
        far: det.far,
        fdr: det.fdr,
        delay: det.delay,
        propagation: order
            .entries
            .iter()
            .map(|&(v, t)| (names[v].clone(), t))
            .collect(),
        notes: Vec::new(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(format!("{} frames, {} alarms\n", det.frames, det.alarms))
}

pub struct BaselineInputs<'a> {
    pub train: &'a Path,
    pub validation: &'a Path,
    pub test: &'a Path,
    pub truth: Option<&'a Path>,
    pub scenario: Option<&'a str>,
}

fn baseline_csv(run: &BaselineRun) -> String {
    let mut csv = String::from("t,t2,q,t2_threshold,q_threshold,alarm\n");
    let q_th = run.thresholds.q.map_or_else(|| "n/a".to_string(), fmt_f64);
    for f in &run.frames {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            f.t,
            fmt_f64(f.t2),
            fmt_f64(f.q),
            fmt_f64(run.thresholds.t2),
            q_th,
            flag(f.alarm)
        );
    }
    csv
}

pub fn cmd_baseline(cfg: &RunConfig, inputs: &BaselineInputs) -> CliResult<String> {
    let train_raw = load_dataset(inputs.train)?;
    let val_raw = load_dataset(inputs.validation)?;
    let test_raw = load_dataset(inputs.test)?;
    guard_noc(inputs.train, &train_raw)?;
    check_variables(inputs.validation, train_raw.names(), val_raw.names())?;
    check_variables(inputs.test, train_raw.names(), test_raw.names())?;
    let truth = load_truth(inputs.test, inputs.truth, test_raw.len())?;
    let onset = truth.as_ref().and_then(TruthTable::onset);
    let names = train_raw.names().to_vec();
    let b = &cfg.baseline;
    let mut log = String::new();
    for v in &b.variants {
        let variant = BaselineVariant::parse(v)?;
        let lag = if variant.dynamic { b.lag } else { 0 };
        let full = fit_dpca(&train_raw, lag)?;
        let mut notes = vec![format!("augmented width {}", full.width())];
        let (model, rule) = if variant.reduced {
            let pa = parallel_analysis(
                &dpca_augment(&train_raw, lag)?,
                b.pa_draws,
                b.pa_quantile,
                b.pa_seed,
            )?;
            if pa.floored {
                notes.push("parallel analysis retained no component; using a=1".into());
            }
            notes.push(format!(
                "retained components a={}",
                pa.a.min(full.n_components())
            ));
            (
                full.truncate(pa.a.min(full.n_components()))?,
                AlarmRule::T2OrQ,
            )
        } else {
            notes.push(format!("retained components a={}", full.n_components()));
            notes.push("Q statistic inactive (a=m)".into());
            (full, AlarmRule::T2)
        };
        let run = calibrate_and_monitor(&model, &val_raw, &test_raw, b.alpha, rule)?;
        notes.push(format!(
            "validation FAR {:.4} (threshold scale {:.6})",
            run.thresholds.validation_far, run.thresholds.scale_factor
        ));

        let dir = cfg.out.join(variant.name());
        create_dir(&dir)?;
        write_atomic(dir.join("monitor.csv"), baseline_csv(&run).as_bytes())?;
        let times: Vec<usize> = run.frames.iter().map(|f| f.t).collect();
        let t2c = grid_csv(&times, &names, |j, l| {
            fmt_f64(run.frames[j].contributions.t2[l])
        });
        let qc = grid_csv(&times, &names, |j, l| {
            fmt_f64(run.frames[j].contributions.q[l])
        });
        write_atomic(dir.join("contrib_t2.csv"), t2c.as_bytes())?;
        write_atomic(dir.join("contrib_q.csv"), qc.as_bytes())?;
        let alarms: Vec<bool> = run.frames.iter().map(|f| f.alarm).collect();
        let det = summarize(&times, &alarms, onset)?;
        let summary = RunSummary {
            method: variant.name().into(),
            scenario: scenario_name(inputs.scenario, inputs.test),
            frames: det.frames,
            alarms: det.alarms,
            onset,
            far: det.far,
            fdr: det.fdr,
            delay: det.delay,
            propagation: Vec::new(),
            notes: notes.clone(),
        };
        write_json(&dir.join("summary.json"), &summary)?;
        let mut text = String::new();
        for n in &notes {
            let _ = writeln!(text, "{}: {n}", variant.name());
        }
        write_atomic(dir.join("log.txt"), text.as_bytes())?;
        log.push_str(&text);
    }
    Ok(log)
}
