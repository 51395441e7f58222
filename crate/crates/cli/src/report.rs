//! Comparison table across monitored runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use brnn_core::data::write_atomic;

use crate::artifact::read_json;
use crate::commands::RunSummary;
use crate::error::{CliError, CliResult};

/// Summary files named by `inputs`: a file is taken as is, a directory
/// contributes its own `summary.json` and those of its direct subdirectories.
pub fn collect_summaries(inputs: &[PathBuf]) -> CliResult<Vec<RunSummary>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_file() {
            files.push(input.clone());
            continue;
        }
        if !input.is_dir() {
            return Err(CliError::Usage(format!(
                "report input {} does not exist",
                input.display()
            )));
        }
        let own = input.join("summary.json");
        if own.is_file() {
            files.push(own);
        }
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| CliError::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("summary.json").is_file())
            .collect();
        subdirs.sort();
        files.extend(subdirs.into_iter().map(|d| d.join("summary.json")));
    }
    if files.is_empty() {
        return Err(CliError::Usage(
            "no summary.json found in the report inputs".into(),
        ));
    }
    let mut runs = files
        .iter()
        .map(|f| read_json::<RunSummary>(f))
        .collect::<CliResult<Vec<_>>>()?;
    runs.sort_by(|a, b| (&a.scenario, &a.method).cmp(&(&b.scenario, &b.method)));
    runs.dedup_by(|a, b| a.scenario == b.scenario && a.method == b.method);
    Ok(runs)
}

fn rate(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |r| format!("{r:.4}"))
}

fn delay(v: Option<usize>) -> String {
    v.map_or_else(|| "n/a".into(), |d| d.to_string())
}

pub fn report_csv(runs: &[RunSummary]) -> String {
    let mut out = String::from("method,scenario,far,fdr,delay\n");
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method,
            r.scenario,
            rate(r.far),
            rate(r.fdr),
            delay(r.delay)
        );
    }
    out
}

pub fn report_text(runs: &[RunSummary]) -> String {
    let header = ["method", "scenario", "FAR", "FDR", "delay"];
    let rows: Vec<[String; 5]> = runs
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.scenario.clone(),
                rate(r.far),
                rate(r.fdr),
                delay(r.delay),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header, &mut out);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(
        &rule.iter().map(String::as_str).collect::<Vec<_>>(),
        &mut out,
    );
    for row in &rows {
        line(
            &row.iter().map(String::as_str).collect::<Vec<_>>(),
            &mut out,
        );
    }
    let with_order: Vec<&RunSummary> = runs.iter().filter(|r| !r.propagation.is_empty()).collect();
    if !with_order.is_empty() {
        out.push_str("\npropagation order (variable, first flagged t)\n");
        for r in with_order {
            let _ = writeln!(out, "{} / {}:", r.method, r.scenario);
            for (i, (v, t)) in r.propagation.iter().enumerate() {
                let _ = writeln!(out, "  {:>3}. {v} t={t}", i + 1);
            }
        }
    }
    out
}

pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> CliResult<String> {
    let runs = collect_summaries(inputs)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let text = report_text(&runs);
    write_atomic(out.join("report.csv"), report_csv(&runs).as_bytes())?;
    write_atomic(out.join("report.txt"), text.as_bytes())?;
    Ok(text)
}
