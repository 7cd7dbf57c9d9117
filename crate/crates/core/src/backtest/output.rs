use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{BacktestOutput, MethodResult};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::timefmt;

pub const RESULTS_FILE: &str = "results.csv";
pub const HOURLY_FILE: &str = "hourly_coverage.csv";
pub const INTERVALS_FILE: &str = "intervals.csv";
pub const METRICS_FILE: &str = "metrics.json";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish<W: Write>(wtr: csv::Writer<W>, path: &Path) -> Result<()> {
    wtr.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// One scored (region, method, level) cell.
#[derive(Debug, Clone, Copy)]
pub struct ReportRef<'a> {
    pub region: &'a str,
    pub method: &'a str,
    pub report: &'a MetricReport,
    pub utc_offset: i32,
}

impl<'a> ReportRef<'a> {
    pub fn of(out: &'a BacktestOutput) -> Vec<ReportRef<'a>> {
        out.results
            .iter()
            .map(|r| ReportRef {
                region: &r.region,
                method: r.method.as_str(),
                report: &r.report,
                utc_offset: out.utc_offsets.get(&r.region).copied().unwrap_or(0),
            })
            .collect()
    }
}

/// `region,method,level,picp,aiw,ws`, one row per report.
pub fn write_results<W: Write>(w: W, reports: &[ReportRef<'_>]) -> Result<csv::Writer<W>> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["region", "method", "level", "picp", "aiw", "ws"])?;
    for r in reports {
        wtr.write_record([
            r.region.to_string(),
            r.method.to_string(),
            r.report.level().to_string(),
            r.report.picp.to_string(),
            r.report.aiw.to_string(),
            r.report.winkler.to_string(),
        ])?;
    }
    Ok(wtr)
}

/// `region,method,level,hour,coverage,count` with local hours 0..23.
pub fn write_hourly<W: Write>(w: W, reports: &[ReportRef<'_>]) -> Result<csv::Writer<W>> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["region", "method", "level", "hour", "coverage", "count"])?;
    for r in reports {
        for h in 0..24 {
            wtr.write_record([
                r.region.to_string(),
                r.method.to_string(),
                r.report.level().to_string(),
                h.to_string(),
                r.report.hourly.coverage[h].map(|c| c.to_string()).unwrap_or_default(),
                r.report.hourly.counts[h].to_string(),
            ])?;
        }
    }
    Ok(wtr)
}

/// `region,method,level,timestamp,lower,upper,realized` in capacity units.
pub fn write_intervals<W: Write>(w: W, results: &[MethodResult]) -> Result<csv::Writer<W>> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["region", "method", "level", "timestamp", "lower", "upper", "realized"])?;
    for r in results {
        let level = r.report.level().to_string();
        for row in r.series.rows() {
            wtr.write_record([
                r.region.as_str(),
                r.method.as_str(),
                level.as_str(),
                timefmt::format(row.timestamp).as_str(),
                row.lower.to_string().as_str(),
                row.upper.to_string().as_str(),
                row.realized.to_string().as_str(),
            ])?;
        }
    }
    Ok(wtr)
}

#[derive(Serialize)]
struct MetricsEntry<'a> {
    region: &'a str,
    method: &'a str,
    level: f64,
    alpha: f64,
    picp: f64,
    aiw: f64,
    ws: f64,
    count: usize,
    hourly_coverage: [Option<f64>; 24],
    hourly_counts: [usize; 24],
    utc_offset: i32,
}

/// Writes `results.csv`, `hourly_coverage.csv` and `metrics.json` into `dir`.
pub fn write_report_files(reports: &[ReportRef<'_>], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(RESULTS_FILE);
    finish(write_results(create(&p)?, reports)?, &p)?;
    let p = dir.join(HOURLY_FILE);
    finish(write_hourly(create(&p)?, reports)?, &p)?;

    let entries: Vec<MetricsEntry> = reports
        .iter()
        .map(|r| MetricsEntry {
            region: r.region,
            method: r.method,
            level: r.report.level(),
            alpha: r.report.alpha,
            picp: r.report.picp,
            aiw: r.report.aiw,
            ws: r.report.winkler,
            count: r.report.count,
            hourly_coverage: r.report.hourly.coverage,
            hourly_counts: r.report.hourly.counts,
            utc_offset: r.utc_offset,
        })
        .collect();
    let p = dir.join(METRICS_FILE);
    let mut w = create(&p)?;
    serde_json::to_writer_pretty(&mut w, &entries)?;
    w.write_all(b"\n").map_err(|e| Error::io(&p, e))?;
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok([RESULTS_FILE, HOURLY_FILE, METRICS_FILE].into_iter().map(|f| dir.join(f)).collect())
}

/// Writes the report files plus `intervals.csv`; paths come back in a fixed order.
pub fn write_outputs(out: &BacktestOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = write_report_files(&ReportRef::of(out), dir)?;
    let p = dir.join(INTERVALS_FILE);
    finish(write_intervals(create(&p)?, &out.results)?, &p)?;
    paths.push(p);
    Ok(paths)
}
