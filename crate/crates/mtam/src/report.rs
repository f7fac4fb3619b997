//! Text outputs: metric reports, loss traces and configuration echoes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use mtam_core::metrics::{CutoffMetrics, MetricReport};
use mtam_core::train::TraceRow;

use crate::error::{CliError, Result};

pub const METRICS_FORMAT: &str = "mtam-metrics/1";

/// `key=value` lines, one per fact, in a fixed order. Wall time is not
/// written.
pub fn format_metrics(report: &MetricReport, source: &str) -> String {
    let mut out = String::new();
    writeln!(out, "format={METRICS_FORMAT}").unwrap();
    writeln!(out, "source={source}").unwrap();
    writeln!(out, "n_users={}", report.n_users).unwrap();
    for c in &report.cutoffs {
        writeln!(out, "hr@{}={}", c.k, c.hr).unwrap();
        writeln!(out, "ndcg@{}={}", c.k, c.ndcg).unwrap();
    }
    out
}

/// Inverse of [`format_metrics`]; the wall time comes back as zero.
pub fn parse_metrics(text: &str) -> Result<MetricReport> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(l) if l == format!("format={METRICS_FORMAT}") => {}
        _ => {
            return Err(CliError::Compatibility(format!(
                "metrics file is not {METRICS_FORMAT}"
            )))
        }
    }
    let bad = |l: &str| CliError::Data(format!("bad metrics line {l:?}"));
    let mut n_users = None;
    let mut cutoffs: Vec<CutoffMetrics> = Vec::new();
    for line in lines {
        let (key, value) = line.split_once('=').ok_or_else(|| bad(line))?;
        if key == "n_users" {
            n_users = Some(value.parse().map_err(|_| bad(line))?);
            continue;
        }
        let Some((metric, k)) = key.split_once('@') else {
            continue;
        };
        let k: usize = k.parse().map_err(|_| bad(line))?;
        let v: f64 = value.parse().map_err(|_| bad(line))?;
        let entry = match cutoffs.iter_mut().find(|c| c.k == k) {
            Some(c) => c,
            None => {
                cutoffs.push(CutoffMetrics {
                    k,
                    hr: 0.0,
                    ndcg: 0.0,
                });
                cutoffs.last_mut().unwrap()
            }
        };
        match metric {
            "hr" => entry.hr = v,
            "ndcg" => entry.ndcg = v,
            _ => return Err(bad(line)),
        }
    }
    Ok(MetricReport {
        cutoffs,
        n_users: n_users.ok_or_else(|| CliError::Data("metrics file lacks n_users".into()))?,
        wall_time: 0.0,
    })
}

/// Tab-separated `iteration, epoch, lr, loss, grad_norm` with a header.
pub fn format_trace(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration\tepoch\tlr\tloss\tgrad_norm\n");
    for r in trace {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.iteration, r.epoch, r.lr, r.loss, r.grad_norm
        )
        .unwrap();
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, text).map_err(CliError::io(path))
}

/// Pretty JSON of the effective configuration of a command.
pub fn write_echo<T: Serialize>(path: &Path, echo: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(echo).expect("echo serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Human-readable table for standard output.
pub fn render_metrics(report: &MetricReport) -> String {
    let mut out = format!("{:>6} {:>8} {:>8}\n", "K", "HR", "NDCG");
    for c in &report.cutoffs {
        writeln!(out, "{:>6} {:>8.4} {:>8.4}", c.k, c.hr, c.ndcg).unwrap();
    }
    writeln!(out, "{} users, {:.2}s", report.n_users, report.wall_time).unwrap();
    out
}
