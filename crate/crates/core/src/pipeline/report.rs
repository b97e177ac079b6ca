use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{EpochReport, REPORTS_FILE};
use crate::data::jsonl::read_jsonl;
use crate::error::{Error, Result};
use crate::intrinsic::icat;
use crate::plot::{line_chart, Series};

/// Reports of one run directory.
pub fn load_reports(dir: &Path) -> Result<Vec<EpochReport>> {
    let path = dir.join(REPORTS_FILE);
    if !path.exists() {
        return Err(Error::MissingReports(format!(
            "no {REPORTS_FILE} in {}",
            dir.display()
        )));
    }
    read_jsonl(path)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderSummary {
    pub table: PathBuf,
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
    pub notices: Vec<String>,
}

#[derive(Serialize)]
struct Row<'a> {
    series: &'a str,
    epoch: usize,
    ss: f64,
    lms: f64,
    icat: f64,
    cs: Option<f64>,
}

fn csv_write<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Series name -> epoch -> report. Series are variants, prefixed with the
/// run directory name when several runs are rendered together.
fn collect(run_dirs: &[PathBuf]) -> Result<BTreeMap<String, BTreeMap<usize, EpochReport>>> {
    let mut series: BTreeMap<String, BTreeMap<usize, EpochReport>> = BTreeMap::new();
    for dir in run_dirs {
        let prefix = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        for r in load_reports(dir)? {
            let name = if run_dirs.len() > 1 {
                format!("{prefix}/{}", r.variant)
            } else {
                r.variant.to_string()
            };
            series.entry(name).or_default().insert(r.epoch, r);
        }
    }
    if series.is_empty() {
        return Err(Error::MissingReports("report files are empty".into()));
    }
    Ok(series)
}

/// Writes `reports.csv`, `summary.csv` (last epoch of each series, ICAT
/// recomputed) and, when there is more than one epoch, SS/LMS/ICAT/CS plots.
pub fn render_reports(run_dirs: &[PathBuf], out: &Path) -> Result<RenderSummary> {
    let series = collect(run_dirs)?;
    let epochs: BTreeSet<usize> = series.values().flat_map(|s| s.keys().copied()).collect();
    let mut gaps = Vec::new();
    for (name, reports) in &series {
        for e in &epochs {
            if !reports.contains_key(e) {
                gaps.push(format!("{name}@{e}"));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::MissingReports(gaps.join(", ")));
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    let mut last = Vec::new();
    for (name, reports) in &series {
        for r in reports.values() {
            rows.push(Row {
                series: name,
                epoch: r.epoch,
                ss: r.intrinsic.ss,
                lms: r.intrinsic.lms,
                icat: r.intrinsic.icat,
                cs: r.intrinsic.cs,
            });
        }
        let r = reports.values().next_back().expect("non-empty series");
        last.push(Row {
            series: name,
            epoch: r.epoch,
            ss: r.intrinsic.ss,
            lms: r.intrinsic.lms,
            icat: icat(r.intrinsic.ss, r.intrinsic.lms)?,
            cs: r.intrinsic.cs,
        });
    }
    let mut summary = RenderSummary {
        table: out.join("reports.csv"),
        summary: out.join("summary.csv"),
        ..Default::default()
    };
    csv_write(&summary.table, &rows)?;
    csv_write(&summary.summary, &last)?;

    if epochs.len() < 2 {
        let notice = "single epoch: plots skipped".to_string();
        log::info!("{notice}");
        summary.notices.push(notice);
        return Ok(summary);
    }
    type Metric = fn(&EpochReport) -> Option<f64>;
    let metrics: [(&str, &str, Option<f64>, Metric); 4] = [
        ("ss", "SS (50 = unbiased)", Some(50.0), |r| {
            Some(r.intrinsic.ss)
        }),
        ("lms", "LMS (higher is better)", None, |r| {
            Some(r.intrinsic.lms)
        }),
        ("icat", "ICAT (higher is better)", None, |r| {
            Some(r.intrinsic.icat)
        }),
        ("cs", "CS (50 = unbiased)", Some(50.0), |r| r.intrinsic.cs),
    ];
    for (key, title, reference, metric) in metrics {
        let lines: Vec<Series> = series
            .iter()
            .map(|(name, reports)| Series {
                name,
                points: reports
                    .values()
                    .filter_map(|r| metric(r).map(|v| (r.epoch as f64, v)))
                    .collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        if lines.is_empty() {
            summary
                .notices
                .push(format!("no {key} values: plot skipped"));
            continue;
        }
        let path = out.join(format!("{key}.svg"));
        line_chart(&path, title, key, &lines, reference)?;
        summary.plots.push(path);
    }
    Ok(summary)
}
