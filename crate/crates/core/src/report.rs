//! Tables built from one or more finished suites.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::orchestrator::{MetricStats, SuiteSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// A finished suite plus the label used as its column header.
#[derive(Debug, Clone)]
pub struct LabelledSuite {
    pub label: String,
    pub summary: SuiteSummary,
}

/// Reads `summary.json` from a run directory (or the file itself).
pub fn load_suite(path: &Path) -> Result<LabelledSuite> {
    let file = if path.is_dir() {
        path.join("summary.json")
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let summary: SuiteSummary = serde_json::from_str(&text)?;
    let label = summary.name.clone().unwrap_or_else(|| {
        let stem = if path.is_dir() {
            path
        } else {
            path.parent().unwrap_or(path)
        };
        stem.file_name()
            .map_or_else(|| stem.display().to_string(), |n| n.to_string_lossy().into_owned())
    });
    Ok(LabelledSuite { label, summary })
}

#[derive(Serialize)]
struct JsonEntry<'a> {
    label: &'a str,
    dataset_hash: &'a str,
    failures: usize,
    uc_pct_pooled: Option<f64>,
    stats: &'a std::collections::BTreeMap<String, MetricStats>,
}

pub fn render(suites: &[LabelledSuite], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => Ok(render_csv(suites)),
        ReportFormat::Json => {
            let entries: Vec<_> = suites
                .iter()
                .map(|s| JsonEntry {
                    label: &s.label,
                    dataset_hash: &s.summary.dataset_hash,
                    failures: s.summary.failures,
                    uc_pct_pooled: s.summary.uc_pct_pooled,
                    stats: &s.summary.stats,
                })
                .collect();
            Ok(serde_json::to_string_pretty(&entries)?)
        }
        ReportFormat::Markdown => Ok(render_markdown(suites)),
    }
}

fn render_csv(suites: &[LabelledSuite]) -> String {
    let mut out = String::from("run,metric,mean,std,min,max\n");
    for s in suites {
        for (metric, st) in &s.summary.stats {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.label,
                metric,
                format_f64(st.mean),
                format_f64(st.std),
                format_f64(st.min),
                format_f64(st.max)
            );
        }
    }
    out
}

fn cell(suite: &SuiteSummary, metric: &str, digits: usize) -> String {
    match suite.stats.get(metric) {
        Some(st) => format!("{:.digits$} (±{:.digits$})", st.mean, st.std),
        None => "-".into(),
    }
}

fn plain(suite: &SuiteSummary, metric: &str, digits: usize) -> String {
    suite
        .stats
        .get(metric)
        .map_or_else(|| "-".into(), |st| format!("{:.digits$}", st.mean))
}

fn row(out: &mut String, name: &str, cells: impl Iterator<Item = String>) {
    let _ = write!(out, "| {name} |");
    for c in cells {
        let _ = write!(out, " {c} |");
    }
    out.push('\n');
}

fn grid(suite: &SuiteSummary, prefix: &str) -> (usize, usize) {
    let mut q = 0;
    let mut n = 0;
    for key in suite.stats.keys() {
        if let Some(rest) = key.strip_prefix(prefix) {
            if let Some((qs, ns)) = rest.split_once("_x") {
                q = q.max(qs.parse().unwrap_or(0));
                n = n.max(ns.parse().unwrap_or(0));
            }
        }
    }
    (q, n)
}

/// Fit means per cluster and state in both modes, parameter errors, then
/// rounds, cluster counts, MW% and UC%; one column per suite.
fn render_markdown(suites: &[LabelledSuite]) -> String {
    let mut out = String::new();
    let header = |out: &mut String, title: &str| {
        let _ = writeln!(out, "### {title}\n");
        row(out, "metric", suites.iter().map(|s| s.label.clone()));
        row(out, "---", suites.iter().map(|_| "---".to_string()));
    };
    for (mode, title) in [("pred", "Prediction fit"), ("sim", "Simulation fit")] {
        let prefix = format!("fit_{mode}_q");
        let (q, n) = suites
            .iter()
            .map(|s| grid(&s.summary, &prefix))
            .fold((0, 0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        if q == 0 {
            continue;
        }
        header(&mut out, title);
        for qi in 1..=q {
            for ni in 1..=n {
                let key = format!("{prefix}{qi}_x{ni}");
                row(
                    &mut out,
                    &format!("P{ni} cluster {qi}"),
                    suites.iter().map(|s| cell(&s.summary, &key, 3)),
                );
            }
        }
        out.push('\n');
    }
    let clusters = suites
        .iter()
        .flat_map(|s| s.summary.stats.keys())
        .filter_map(|k| k.strip_prefix("e_q").and_then(|q| q.parse::<usize>().ok()))
        .max()
        .unwrap_or(0);
    header(&mut out, "Parameters and clustering");
    for qi in 1..=clusters {
        let key = format!("e_q{qi}");
        row(
            &mut out,
            &format!("e cluster {qi}"),
            suites.iter().map(|s| cell(&s.summary, &key, 3)),
        );
    }
    row(&mut out, "R", suites.iter().map(|s| plain(&s.summary, "rounds", 1)));
    row(
        &mut out,
        "K before merge",
        suites.iter().map(|s| plain(&s.summary, "k_before_merge", 1)),
    );
    row(&mut out, "K", suites.iter().map(|s| plain(&s.summary, "k_final", 1)));
    row(&mut out, "MW%", suites.iter().map(|s| plain(&s.summary, "mw_pct", 1)));
    row(
        &mut out,
        "UC% (pooled)",
        suites.iter().map(|s| {
            s.summary
                .uc_pct_pooled
                .map_or_else(|| "-".into(), |v| format!("{v:.1}"))
        }),
    );
    row(
        &mut out,
        "failures",
        suites.iter().map(|s| s.summary.failures.to_string()),
    );
    out
}
