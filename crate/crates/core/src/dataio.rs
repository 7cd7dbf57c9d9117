//! Loading, validating and writing observation, forecast and site files.
//!
//! File layouts (all CSV with a header row, timestamps ISO-8601 UTC):
//!
//! | file               | header                                          |
//! |--------------------|-------------------------------------------------|
//! | observations       | `timestamp,site_id,value`                       |
//! | site forecasts     | `timestamp,site_id,level,value`                 |
//! | system forecasts   | `timestamp,region,level,value`                  |
//! | site metadata      | `site_id,capacity_mw,latitude,longitude,region` |

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::{ObservationSeries, QuantileCurve};
use crate::timefmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteMeta {
    pub site_id: String,
    pub capacity_mw: f64,
    pub latitude: f64,
    pub longitude: f64,
    pub region: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CoverageReport {
    pub observation_rows: usize,
    pub site_forecast_rows: usize,
    pub system_forecast_rows: usize,
    pub site_rows: usize,
    pub first_hour: Option<DateTime<Utc>>,
    pub last_hour: Option<DateTime<Utc>>,
    pub hours: usize,
    pub present_observations: usize,
    pub present_site_curves: usize,
    pub missing_observations: Vec<(String, DateTime<Utc>)>,
    pub missing_site_curves: Vec<(String, DateTime<Utc>)>,
    pub missing_system_curves: Vec<(String, DateTime<Utc>)>,
    pub repaired_curves: usize,
    pub clamped_observations: usize,
}

impl CoverageReport {
    pub fn summary(&self) -> String {
        let span = match (self.first_hour, self.last_hour) {
            (Some(a), Some(b)) => format!("{} .. {}", timefmt::format(a), timefmt::format(b)),
            _ => "empty".to_string(),
        };
        format!(
            "rows: observations {}, site forecasts {}, system forecasts {}, sites {}\n\
             span: {span} ({} hours)\n\
             observations present {} / missing {}\n\
             site curves present {} / missing {}\n\
             system curves missing {}\n\
             repaired curves {}, clamped observations {}",
            self.observation_rows,
            self.site_forecast_rows,
            self.system_forecast_rows,
            self.site_rows,
            self.hours,
            self.present_observations,
            self.missing_observations.len(),
            self.present_site_curves,
            self.missing_site_curves.len(),
            self.missing_system_curves.len(),
            self.repaired_curves,
            self.clamped_observations,
        )
    }
}

/// Everything a backtest reads, validated and indexed by site.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    /// Metadata order, sorted by site id.
    pub sites: Vec<SiteMeta>,
    pub observations: BTreeMap<String, ObservationSeries>,
    /// Per site, sorted by timestamp.
    pub site_curves: BTreeMap<String, Vec<QuantileCurve>>,
    /// Per region, sorted by timestamp.
    pub system_curves: BTreeMap<String, Vec<QuantileCurve>>,
    pub report: CoverageReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundlePaths {
    pub observations: PathBuf,
    pub site_forecasts: PathBuf,
    pub system_forecasts: Option<PathBuf>,
    pub sites: PathBuf,
}

impl BundlePaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            observations: dir.join("obs.csv"),
            site_forecasts: dir.join("site_forecasts.csv"),
            system_forecasts: Some(dir.join("system_forecasts.csv")),
            sites: dir.join("sites.csv"),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(rdr: &mut csv::Reader<impl Read>, want: &[&str], file: &str) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != want {
        return Err(Error::Malformed(vec![format!(
            "{file}: line 1: expected header {}, found {}",
            want.join(","),
            got.join(",")
        )]));
    }
    Ok(())
}

fn field_f64(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<f64, String> {
    let s = rec.get(i).ok_or_else(|| format!("missing {name}"))?.trim();
    let v: f64 = s.parse().map_err(|_| format!("bad {name} {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {name}"))
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn read_sites<R: Read>(r: R) -> Result<Vec<SiteMeta>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    check_header(&mut rdr, &["site_id", "capacity_mw", "latitude", "longitude", "region"], "sites")?;
    let mut errors = Vec::new();
    let mut sites: Vec<SiteMeta> = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let parsed = (|| {
            if rec.len() != 5 {
                return Err(format!("expected 5 fields, found {}", rec.len()));
            }
            let capacity_mw = field_f64(&rec, 1, "capacity_mw")?;
            if capacity_mw <= 0.0 {
                return Err(format!("capacity {capacity_mw} must be positive"));
            }
            Ok(SiteMeta {
                site_id: rec[0].to_string(),
                capacity_mw,
                latitude: field_f64(&rec, 2, "latitude")?,
                longitude: field_f64(&rec, 3, "longitude")?,
                region: rec[4].to_string(),
            })
        })();
        match parsed {
            Ok(s) if !seen.insert(s.site_id.clone()) => errors.push(format!("sites: line {line}: duplicate site {}", s.site_id)),
            Ok(s) => sites.push(s),
            Err(e) => errors.push(format!("sites: line {line}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Malformed(errors));
    }
    sites.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    Ok(sites)
}

struct RawObservations {
    rows: usize,
    by_site: BTreeMap<String, BTreeMap<DateTime<Utc>, f64>>,
}

fn read_observations<R: Read>(r: R, sites: &BTreeMap<&str, &SiteMeta>, errors: &mut Vec<String>) -> Result<RawObservations> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    check_header(&mut rdr, &["timestamp", "site_id", "value"], "observations")?;
    let mut by_site: BTreeMap<String, BTreeMap<DateTime<Utc>, f64>> = BTreeMap::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        rows += 1;
        let line = line_of(&rec);
        if rec.len() != 3 {
            errors.push(format!("observations: line {line}: expected 3 fields, found {}", rec.len()));
            continue;
        }
        let site = &rec[1];
        if !sites.contains_key(site) {
            return Err(Error::UnknownSite(site.to_string()));
        }
        let ts = match timefmt::parse(&rec[0]) {
            Ok(ts) => ts,
            Err(e) => {
                errors.push(format!("observations: line {line}: {e}"));
                continue;
            }
        };
        match field_f64(&rec, 2, "value") {
            Ok(v) => {
                if by_site.entry(site.to_string()).or_default().insert(ts, v).is_some() {
                    errors.push(format!("observations: line {line}: duplicate ({site}, {})", timefmt::format(ts)));
                }
            }
            Err(e) => errors.push(format!("observations: line {line}: {e}")),
        }
    }
    Ok(RawObservations { rows, by_site })
}

type RawKnots = BTreeMap<(String, DateTime<Utc>), Vec<(f64, f64, u64)>>;

fn read_quantiles<R: Read>(
    r: R,
    key_column: &str,
    file: &str,
    known: &dyn Fn(&str) -> bool,
    errors: &mut Vec<String>,
) -> Result<(usize, RawKnots)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    check_header(&mut rdr, &["timestamp", key_column, "level", "value"], file)?;
    let mut knots: RawKnots = BTreeMap::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        rows += 1;
        let line = line_of(&rec);
        if rec.len() != 4 {
            errors.push(format!("{file}: line {line}: expected 4 fields, found {}", rec.len()));
            continue;
        }
        let key = &rec[1];
        if !known(key) {
            return match key_column {
                "region" => Err(Error::Malformed(vec![format!("{file}: line {line}: unknown region {key:?}")])),
                _ => Err(Error::UnknownSite(key.to_string())),
            };
        }
        let parsed = (|| {
            let ts = timefmt::parse(&rec[0]).map_err(|e| e.to_string())?;
            Ok::<_, String>((ts, field_f64(&rec, 2, "level")?, field_f64(&rec, 3, "value")?))
        })();
        match parsed {
            Ok((ts, level, value)) => knots.entry((key.to_string(), ts)).or_default().push((level, value, line)),
            Err(e) => errors.push(format!("{file}: line {line}: {e}")),
        }
    }
    Ok((rows, knots))
}

fn build_curves(
    raw: RawKnots,
    support_hi: &dyn Fn(&str) -> f64,
    file: &str,
    errors: &mut Vec<String>,
) -> (BTreeMap<String, Vec<QuantileCurve>>, usize) {
    let mut out: BTreeMap<String, Vec<QuantileCurve>> = BTreeMap::new();
    let mut repaired = 0;
    for ((key, ts), knots) in raw {
        let pairs: Vec<(f64, f64)> = knots.iter().map(|k| (k.0, k.1)).collect();
        match QuantileCurve::validate_and_repair(&pairs, 0.0, support_hi(&key)) {
            Ok(c) => {
                repaired += c.repaired() as usize;
                out.entry(key.clone()).or_default().push(c.with_site(key).with_timestamp(ts));
            }
            Err(e) => errors.push(format!(
                "{file}: line {}: curve ({key}, {}): {e}",
                knots[0].2,
                timefmt::format(ts)
            )),
        }
    }
    (out, repaired)
}

/// Reads and validates all input files. Malformed rows are collected and
/// reported together; an unknown site id aborts immediately.
pub fn load_bundle(paths: &BundlePaths) -> Result<DatasetBundle> {
    let sites = read_sites(open(&paths.sites)?)?;
    let by_id: BTreeMap<&str, &SiteMeta> = sites.iter().map(|s| (s.site_id.as_str(), s)).collect();
    let regions: BTreeMap<&str, f64> = sites.iter().fold(BTreeMap::new(), |mut m, s| {
        *m.entry(s.region.as_str()).or_insert(0.0) += s.capacity_mw;
        m
    });

    let mut errors = Vec::new();
    let obs = read_observations(open(&paths.observations)?, &by_id, &mut errors)?;
    let (site_rows, site_knots) = read_quantiles(
        open(&paths.site_forecasts)?,
        "site_id",
        "site forecasts",
        &|k| by_id.contains_key(k),
        &mut errors,
    )?;
    let (system_rows, system_knots) = match &paths.system_forecasts {
        Some(p) => read_quantiles(open(p)?, "region", "system forecasts", &|k| regions.contains_key(k), &mut errors)?,
        None => (0, BTreeMap::new()),
    };
    let (site_curves, site_repaired) = build_curves(site_knots, &|k| by_id[k].capacity_mw, "site forecasts", &mut errors);
    let (system_curves, system_repaired) = build_curves(system_knots, &|k| regions[k], "system forecasts", &mut errors);
    if !errors.is_empty() {
        return Err(Error::Malformed(errors));
    }

    let mut clamped = 0;
    let mut observations = BTreeMap::new();
    for (site, points) in obs.by_site {
        let cap = by_id[site.as_str()].capacity_mw;
        let points: Vec<_> = points
            .into_iter()
            .map(|(ts, v)| {
                let c = v.clamp(0.0, cap);
                clamped += (c != v) as usize;
                (ts, c)
            })
            .collect();
        observations.insert(site.clone(), ObservationSeries::new(site, points, cap)?);
    }

    let mut bundle = DatasetBundle {
        sites,
        observations,
        site_curves,
        system_curves,
        report: CoverageReport::default(),
    };
    bundle.report = bundle.report_for(obs.rows, site_rows, system_rows, site_repaired + system_repaired);
    bundle.report.clamped_observations = clamped;
    Ok(bundle)
}

impl DatasetBundle {
    pub(crate) fn report_for(
        &self,
        observation_rows: usize,
        site_forecast_rows: usize,
        system_forecast_rows: usize,
        repaired_curves: usize,
    ) -> CoverageReport {
        let mut report = CoverageReport {
            observation_rows,
            site_forecast_rows,
            system_forecast_rows,
            site_rows: self.sites.len(),
            repaired_curves,
            ..Default::default()
        };
        let Some((first, last)) = self.span() else {
            return report;
        };
        report.first_hour = Some(first);
        report.last_hour = Some(last);
        let (h0, h1) = (timefmt::hour_index(first), timefmt::hour_index(last));
        report.hours = (h1 - h0 + 1) as usize;

        for site in &self.sites {
            let obs: BTreeSet<i64> = self
                .observations
                .get(&site.site_id)
                .map(|s| s.points().iter().map(|p| timefmt::hour_index(p.0)).collect())
                .unwrap_or_default();
            let curves: BTreeSet<i64> = self
                .site_curves
                .get(&site.site_id)
                .map(|cs| cs.iter().map(|c| timefmt::hour_index(c.timestamp())).collect())
                .unwrap_or_default();
            for h in h0..=h1 {
                let ts = timefmt::from_hour_index(h);
                if obs.contains(&h) {
                    report.present_observations += 1;
                } else {
                    report.missing_observations.push((site.site_id.clone(), ts));
                }
                if curves.contains(&h) {
                    report.present_site_curves += 1;
                } else {
                    report.missing_site_curves.push((site.site_id.clone(), ts));
                }
            }
        }
        for (region, cs) in &self.system_curves {
            let have: BTreeSet<i64> = cs.iter().map(|c| timefmt::hour_index(c.timestamp())).collect();
            for h in h0..=h1 {
                if !have.contains(&h) {
                    report.missing_system_curves.push((region.clone(), timefmt::from_hour_index(h)));
                }
            }
        }
        report
    }

    /// First and last hour with any observation or site curve.
    pub fn span(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let obs = self.observations.values().flat_map(|s| s.points().iter().map(|p| p.0));
        let curves = self.site_curves.values().flat_map(|cs| cs.iter().map(|c| c.timestamp()));
        let (mut lo, mut hi): (Option<DateTime<Utc>>, Option<DateTime<Utc>>) = (None, None);
        for ts in obs.chain(curves) {
            lo = Some(lo.map_or(ts, |l| l.min(ts)));
            hi = Some(hi.map_or(ts, |h| h.max(ts)));
        }
        lo.zip(hi)
    }

    pub fn regions(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.sites.iter().map(|s| s.region.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn capacity(&self) -> f64 {
        self.sites.iter().map(|s| s.capacity_mw).sum()
    }

    /// Restricts the bundle to the sites of one region.
    pub fn select_region(&self, region: &str) -> Result<DatasetBundle> {
        let sites: Vec<SiteMeta> = self.sites.iter().filter(|s| s.region == region).cloned().collect();
        if sites.is_empty() {
            return Err(Error::UnknownRegion {
                requested: region.to_string(),
                available: self.regions(),
            });
        }
        let keep: BTreeSet<&str> = sites.iter().map(|s| s.site_id.as_str()).collect();
        let observations = self
            .observations
            .iter()
            .filter(|(k, _)| keep.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let site_curves = self
            .site_curves
            .iter()
            .filter(|(k, _)| keep.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let system_curves = self
            .system_curves
            .iter()
            .filter(|(k, _)| k.as_str() == region)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut out = DatasetBundle {
            sites,
            observations,
            site_curves,
            system_curves,
            report: CoverageReport::default(),
        };
        let repaired = out
            .site_curves
            .values()
            .chain(out.system_curves.values())
            .flatten()
            .filter(|c| c.repaired())
            .count();
        let obs_rows = out.observations.values().map(|s| s.points().len()).sum();
        let site_rows = out.site_curves.values().flatten().map(|c| c.levels().len()).sum();
        let sys_rows = out.system_curves.values().flatten().map(|c| c.levels().len()).sum();
        out.report = out.report_for(obs_rows, site_rows, sys_rows, repaired);
        Ok(out)
    }

    /// Writes the four input files into `dir` using the names of
    /// [`BundlePaths::in_dir`]. The system file is skipped when empty.
    pub fn write_dir(&self, dir: &Path) -> Result<BundlePaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = BundlePaths::in_dir(dir);
        self.write_sites(create(&paths.sites)?)?;
        self.write_observations(create(&paths.observations)?)?;
        write_curves(create(&paths.site_forecasts)?, "site_id", &self.site_curves)?;
        if self.system_curves.is_empty() {
            paths.system_forecasts = None;
        } else if let Some(p) = &paths.system_forecasts {
            write_curves(create(p)?, "region", &self.system_curves)?;
        }
        Ok(paths)
    }

    pub fn write_sites<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["site_id", "capacity_mw", "latitude", "longitude", "region"])?;
        for s in &self.sites {
            wtr.write_record([
                s.site_id.clone(),
                s.capacity_mw.to_string(),
                s.latitude.to_string(),
                s.longitude.to_string(),
                s.region.clone(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<sites>", e))?;
        Ok(())
    }

    pub fn write_observations<W: Write>(&self, w: W) -> Result<()> {
        let mut rows: Vec<(DateTime<Utc>, &str, f64)> = self
            .observations
            .iter()
            .flat_map(|(site, s)| s.points().iter().map(move |p| (p.0, site.as_str(), p.1)))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["timestamp", "site_id", "value"])?;
        for (ts, site, v) in rows {
            wtr.write_record([timefmt::format(ts), site.to_string(), v.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<observations>", e))?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_curves<W: Write>(w: W, key_column: &str, curves: &BTreeMap<String, Vec<QuantileCurve>>) -> Result<()> {
    let mut all: Vec<&QuantileCurve> = curves.values().flatten().collect();
    all.sort_by(|a, b| a.timestamp().cmp(&b.timestamp()).then(a.site_id().cmp(b.site_id())));
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["timestamp", key_column, "level", "value"])?;
    for c in all {
        let ts = timefmt::format(c.timestamp());
        for (level, value) in c.knots() {
            wtr.write_record([ts.clone(), c.site_id().to_string(), level.to_string(), value.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<forecasts>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    /// Two sites, 48 hours, 3 quantile levels each.
    fn fixture(dir: &Path, skip_obs: Option<(usize, usize)>, corrupt: &[(usize, usize)]) -> BundlePaths {
        let sites = "site_id,capacity_mw,latitude,longitude,region\n\
                     a,10,40.0,-90.0,MISO\n\
                     b,20,41.0,-91.0,MISO\n\
                     c,5,30.0,-97.0,ERCOT\n";
        let mut obs = String::from("timestamp,site_id,value\n");
        let mut fc = String::from("timestamp,site_id,level,value\n");
        let mut sys = String::from("timestamp,region,level,value\n");
        for h in 0..48 {
            let ts = timefmt::format(timefmt::from_hour_index(430_000 + h as i64));
            for (si, (site, cap)) in [("a", 10.0), ("b", 20.0), ("c", 5.0)].iter().enumerate() {
                if skip_obs != Some((si, h)) {
                    obs.push_str(&format!("{ts},{site},{}\n", cap * 0.5));
                }
                let bad = corrupt.contains(&(si, h));
                for (l, f) in [(0.1, 0.2), (0.5, 0.5), (0.9, 0.8)] {
                    let v = if bad && l == 0.5 { cap * 0.1 } else { cap * f };
                    fc.push_str(&format!("{ts},{site},{l},{v}\n"));
                }
            }
            for (l, v) in [(0.1, 8.0), (0.5, 15.0), (0.9, 24.0)] {
                sys.push_str(&format!("{ts},MISO,{l},{v}\n"));
            }
        }
        BundlePaths {
            observations: write(dir, "obs.csv", &obs),
            site_forecasts: write(dir, "sf.csv", &fc),
            system_forecasts: Some(write(dir, "sys.csv", &sys)),
            sites: write(dir, "sites.csv", sites),
        }
    }

    #[test]
    fn clean_fixture_has_no_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let b = load_bundle(&fixture(dir.path(), None, &[])).unwrap();
        assert_eq!(b.report.hours, 48);
        assert!(b.report.missing_observations.is_empty());
        assert!(b.report.missing_site_curves.is_empty());
        assert!(b.report.missing_system_curves.is_empty());
        assert_eq!(b.report.present_observations, 3 * 48);
        assert_eq!(b.report.repaired_curves, 0);
        assert_eq!(b.system_curves["MISO"].len(), 48);
    }

    #[test]
    fn gap_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let b = load_bundle(&fixture(dir.path(), Some((1, 7)), &[])).unwrap();
        assert_eq!(
            b.report.missing_observations,
            vec![("b".to_string(), timefmt::from_hour_index(430_007))]
        );
        assert_eq!(
            b.report.missing_observations.len() + b.report.present_observations,
            b.sites.len() * b.report.hours
        );
    }

    #[test]
    fn crossing_quantiles_counted() {
        let dir = tempfile::tempdir().unwrap();
        let b = load_bundle(&fixture(dir.path(), None, &[(0, 3), (2, 10), (1, 40)])).unwrap();
        assert_eq!(b.report.repaired_curves, 3);
    }

    #[test]
    fn malformed_rows_all_reported() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), None, &[]);
        let mut obs = std::fs::read_to_string(&paths.observations).unwrap();
        obs.push_str("2019-01-01T00:30:00Z,a,1\nnot-a-time,a,1\n2019-02-01T00:00:00Z,a,abc\n");
        std::fs::write(&paths.observations, obs).unwrap();
        match load_bundle(&paths) {
            Err(Error::Malformed(errs)) => {
                assert_eq!(errs.len(), 3, "{errs:?}");
                assert!(errs[0].contains("line 146"));
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_site_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), None, &[]);
        let mut obs = std::fs::read_to_string(&paths.observations).unwrap();
        obs.push_str("2019-01-01T00:00:00Z,zzz,1\n");
        std::fs::write(&paths.observations, obs).unwrap();
        assert!(matches!(load_bundle(&paths), Err(Error::UnknownSite(s)) if s == "zzz"));
    }

    #[test]
    fn region_selection() {
        let dir = tempfile::tempdir().unwrap();
        let b = load_bundle(&fixture(dir.path(), None, &[])).unwrap();
        let miso = b.select_region("MISO").unwrap();
        assert_eq!(miso.sites.len(), 2);
        assert_eq!(miso.observations.len(), 2);
        assert_eq!(miso.capacity(), 30.0);
        assert!(miso.system_curves.contains_key("MISO"));
        match b.select_region("PJM") {
            Err(Error::UnknownRegion { available, .. }) => assert_eq!(available, vec!["ERCOT", "MISO"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let b = load_bundle(&fixture(dir.path(), Some((0, 5)), &[])).unwrap();
        let out = tempfile::tempdir().unwrap();
        let paths = b.write_dir(out.path()).unwrap();
        let again = load_bundle(&paths).unwrap();
        assert_eq!(again, b);
    }
}
