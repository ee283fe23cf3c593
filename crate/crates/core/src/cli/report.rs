//! Collects `eval` outputs into a side-by-side table.

use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{Error, Result};

/// Row names of the summary table, in order.
pub const TABLE_ROWS: [&str; 6] = ["MSE", "R2", "p_acc", "rho", "FDA", "delta_r"];

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_reports(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Every `report.json` under `dir`, in path order, labelled by its `label`
/// field (or its directory name).
pub fn collect_reports(dir: &Path) -> Result<Vec<(String, Value)>> {
    let mut paths = Vec::new();
    find_reports(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::NoReports(dir.to_path_buf()));
    }
    paths
        .into_iter()
        .map(|p| {
            let v: Value = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
            let label = match v.get("label").and_then(Value::as_str) {
                Some(l) => l.to_string(),
                None => p.parent().and_then(|d| d.file_name()).map_or("report".into(), |n| n.to_string_lossy().into_owned()),
            };
            Ok((label, v))
        })
        .collect()
}

fn lookup<'a>(v: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(v, |v, k| v.get(*k))
}

fn number(v: Option<&Value>) -> String {
    match v.and_then(Value::as_f64) {
        Some(x) => format!("{x:.6}"),
        None => "NA".into(),
    }
}

fn cell(report: &Value, row: &str) -> String {
    let recon = |field: &str| {
        lookup(report, &["reconstruction", field]).or_else(|| lookup(report, &["modality", "reconstruction", field]))
    };
    match row {
        "MSE" => number(recon("mse")),
        "R2" => number(recon("r2")),
        "p_acc" => number(lookup(report, &["modality", "p_acc"])),
        "rho" => match lookup(report, &["modality", "rho"]) {
            Some(r) if r.get("infinite").and_then(Value::as_bool) == Some(true) => "inf".into(),
            Some(r) => number(r.get("value")),
            None => "NA".into(),
        },
        "FDA" => number(lookup(report, &["modality", "fda"])),
        "delta_r" => number(lookup(report, &["modality", "delta_recall"])),
        _ => "NA".into(),
    }
}

/// CSV with one row per metric and one column per report. Missing values
/// print as `NA`.
pub fn render_table(reports: &[(String, Value)]) -> String {
    let mut s = String::from("metric");
    for (label, _) in reports {
        s.push(',');
        s.push_str(label);
    }
    s.push('\n');
    for row in TABLE_ROWS {
        s.push_str(row);
        for (_, r) in reports {
            s.push(',');
            s.push_str(&cell(r, row));
        }
        s.push('\n');
    }
    s
}

/// The same table as Markdown.
pub fn render_summary(reports: &[(String, Value)]) -> String {
    let mut s = String::from("| metric |");
    for (label, _) in reports {
        s.push_str(&format!(" {label} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(reports.len()));
    s.push('\n');
    for row in TABLE_ROWS {
        s.push_str(&format!("| {row} |"));
        for (_, r) in reports {
            s.push_str(&format!(" {} |", cell(r, row)));
        }
        s.push('\n');
    }
    s
}
