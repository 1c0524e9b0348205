//! Report files: full JSON, a flat CSV grid and a markdown table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::MetricReport;

use super::run::{BenchReport, Method};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown];

    fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
        }
    }
}

pub const CSV_HEADER: &str = "task,method,seed,rollouts,masked_fd,mpd,int_violation,path_length,error";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per cell; floats are written in shortest round-trip form.
pub fn report_csv(report: &BenchReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for c in &report.cells {
        let m = c.mean.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            csv_escape(&c.task),
            serde_json::to_value(c.method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            c.seed,
            c.rollouts,
            opt(m.and_then(|m| m.masked_fd)),
            opt(m.map(|m| m.mpd)),
            opt(m.map(|m| m.int_violation)),
            opt(m.map(|m| m.path_length)),
            csv_escape(c.error.as_deref().unwrap_or(""))
        );
    }
    out
}

type MetricFn = fn(&MetricReport) -> Option<f64>;

const METRICS: [(&str, MetricFn); 4] = [
    ("Masked F.D.", |m| m.masked_fd),
    ("M.P.D.", |m| Some(m.mpd)),
    ("IntViolation", |m| Some(m.int_violation)),
    ("A.P.L.", |m| Some(m.path_length)),
];

/// Metric-by-method rows with one column per task.
pub fn report_markdown(report: &BenchReport) -> String {
    let mut tasks: Vec<&str> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for c in &report.cells {
        if !tasks.contains(&c.task.as_str()) {
            tasks.push(&c.task);
        }
        if !methods.contains(&c.method) {
            methods.push(c.method);
        }
    }
    let mut out = String::from("| Metric | Method |");
    for t in &tasks {
        let _ = write!(out, " {t} |");
    }
    out.push_str("\n|---|---|");
    for _ in &tasks {
        out.push_str("---|");
    }
    out.push('\n');
    for (name, get) in METRICS {
        for &method in &methods {
            let _ = write!(out, "| {name} | {} |", method.label());
            for t in &tasks {
                let cell = report.cell(t, method);
                let text = match cell {
                    None => "-".to_string(),
                    Some(c) if c.error.is_some() => "ERR".to_string(),
                    Some(c) => match c.mean.as_ref().and_then(get) {
                        Some(v) => format!("{v:.3}"),
                        None => "NA".to_string(),
                    },
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
    }
    let _ = write!(out, "\nMask rule: {}.\n", report.mask_rule);
    out
}

/// Writes the requested formats into `dir`, returning the written paths.
pub fn emit_report(report: &BenchReport, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &format in formats {
        let body = match format {
            ReportFormat::Json => serde_json::to_string_pretty(report)?,
            ReportFormat::Csv => report_csv(report),
            ReportFormat::Markdown => report_markdown(report),
        };
        let path = dir.join(format.file_name());
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
