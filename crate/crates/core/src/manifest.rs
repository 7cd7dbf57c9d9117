//! Run manifests: everything needed to reproduce an output directory.
//!
//! A manifest records the command, its full configuration, the SHA-256 of
//! every input and output file and the per-day decisions taken during a
//! backtest. It carries no wall-clock time, so identical runs produce
//! identical manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{
    run_backtest, write_outputs, write_report_files, CorrelationFit, GammaSelection, ProtocolConfig, ReportRef,
    SkippedDay,
};
use crate::dataio::{load_bundle, BundlePaths, CoverageReport};
use crate::error::{Error, Result};
use crate::metrics::{level_of, IntervalRow, IntervalSeries, MetricReport};
use crate::synth::{generate, SynthSpec};
use crate::timefmt;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn digest(role: &str, path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        role: role.to_string(),
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
    })
}

/// Output digests are keyed by file name so that the output directory
/// itself does not enter the manifest.
fn output_digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().map(PathBuf::from).unwrap_or_else(|| p.clone());
            Ok(FileDigest {
                role: "output".into(),
                path: name,
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSummary {
    pub sites: usize,
    pub hours: usize,
    pub repaired_curves: usize,
    pub clamped_observations: usize,
    pub missing_observations: usize,
    pub missing_site_curves: usize,
    pub missing_system_curves: usize,
}

impl DataSummary {
    pub fn from_report(r: &CoverageReport) -> Self {
        Self {
            sites: r.site_rows,
            hours: r.hours,
            repaired_curves: r.repaired_curves,
            clamped_observations: r.clamped_observations,
            missing_observations: r.missing_observations.len(),
            missing_site_curves: r.missing_site_curves.len(),
            missing_system_curves: r.missing_system_curves.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsArgs {
    /// Used when the interval file has no `level` column.
    pub alpha: Option<f64>,
    pub capacity: Option<f64>,
    pub utc_offset: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Backtest { config: ProtocolConfig },
    Synth { spec: SynthSpec },
    Metrics { args: MetricsArgs },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub command: Command,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default)]
    pub data: Option<DataSummary>,
    #[serde(default)]
    pub utc_offsets: BTreeMap<String, i32>,
    #[serde(default)]
    pub correlation_fits: Vec<CorrelationFit>,
    #[serde(default)]
    pub gamma_selections: Vec<GammaSelection>,
    #[serde(default)]
    pub skipped: Vec<SkippedDay>,
}

impl RunManifest {
    fn new(command: Command, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            data: None,
            utc_offsets: BTreeMap::new(),
            correlation_fits: Vec::new(),
            gamma_selections: Vec::new(),
            skipped: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn input(&self, role: &str) -> Option<&FileDigest> {
        self.inputs.iter().find(|d| d.role == role)
    }

    fn required_input(&self, role: &str) -> Result<PathBuf> {
        self.input(role)
            .map(|d| d.path.clone())
            .ok_or_else(|| Error::Config(format!("manifest has no {role} input")))
    }

    /// Fails unless every input still hashes to its recorded digest.
    pub fn verify_inputs(&self) -> Result<()> {
        let changed: Vec<String> = self
            .inputs
            .iter()
            .filter_map(|d| match sha256_file(&d.path) {
                Ok(h) if h == d.sha256 => None,
                Ok(_) => Some(format!("{} ({}) changed", d.path.display(), d.role)),
                Err(e) => Some(e.to_string()),
            })
            .collect();
        if changed.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("manifest inputs differ: {}", changed.join("; "))))
        }
    }

    /// Output files whose digest differs from `other`'s.
    pub fn output_differences(&self, other: &RunManifest) -> Vec<String> {
        let theirs: BTreeMap<&Path, &str> = other.outputs.iter().map(|d| (d.path.as_path(), d.sha256.as_str())).collect();
        let mut diffs: Vec<String> = self
            .outputs
            .iter()
            .filter(|d| theirs.get(d.path.as_path()) != Some(&d.sha256.as_str()))
            .map(|d| d.path.display().to_string())
            .collect();
        let ours: Vec<&Path> = self.outputs.iter().map(|d| d.path.as_path()).collect();
        diffs.extend(
            other
                .outputs
                .iter()
                .filter(|d| !ours.contains(&d.path.as_path()))
                .map(|d| d.path.display().to_string()),
        );
        diffs
    }
}

const BUNDLE_ROLES: [&str; 4] = ["observations", "site_forecasts", "system_forecasts", "sites"];

fn bundle_digests(paths: &BundlePaths) -> Result<Vec<FileDigest>> {
    let files = [
        Some(&paths.observations),
        Some(&paths.site_forecasts),
        paths.system_forecasts.as_ref(),
        Some(&paths.sites),
    ];
    BUNDLE_ROLES
        .iter()
        .zip(files)
        .filter_map(|(role, p)| p.map(|p| digest(role, p)))
        .collect()
}

/// Loads the inputs, runs the backtest and writes results plus manifest.
pub fn backtest_to_dir(paths: &BundlePaths, cfg: &ProtocolConfig, out: &Path) -> Result<RunManifest> {
    let bundle = load_bundle(paths)?;
    run_loaded_backtest(&bundle, paths, cfg, out)
}

/// As [`backtest_to_dir`] with the bundle already loaded from `paths`.
pub fn run_loaded_backtest(
    bundle: &crate::dataio::DatasetBundle,
    paths: &BundlePaths,
    cfg: &ProtocolConfig,
    out: &Path,
) -> Result<RunManifest> {
    let mut manifest = RunManifest::new(Command::Backtest { config: cfg.clone() }, Some(cfg.seed));
    manifest.inputs = bundle_digests(paths)?;
    manifest.data = Some(DataSummary::from_report(&bundle.report));
    let result = run_backtest(bundle, cfg)?;
    let files = write_outputs(&result, out)?;
    manifest.outputs = output_digests(&files)?;
    manifest.utc_offsets = result.utc_offsets;
    manifest.correlation_fits = result.correlation_fits;
    manifest.gamma_selections = result.gamma_selections;
    manifest.skipped = result.skipped;
    manifest.write(out)?;
    info!("wrote {} result files to {}", files.len(), out.display());
    Ok(manifest)
}

/// Generates a synthetic dataset into `out` and writes its manifest.
pub fn synth_to_dir(spec: &SynthSpec, spec_path: Option<&Path>, out: &Path) -> Result<RunManifest> {
    let generated = generate(spec)?;
    let paths = generated.bundle.write_dir(out)?;
    let spec_copy = out.join("synth.toml");
    std::fs::write(&spec_copy, spec.to_toml()?).map_err(|e| Error::io(&spec_copy, e))?;
    let mut manifest = RunManifest::new(Command::Synth { spec: spec.clone() }, Some(spec.seed));
    if let Some(p) = spec_path {
        manifest.inputs.push(digest("spec", p)?);
    }
    let mut files: Vec<PathBuf> = bundle_digests(&paths)?.into_iter().map(|d| d.path).collect();
    files.push(spec_copy);
    manifest.outputs = output_digests(&files)?;
    manifest.data = Some(DataSummary::from_report(&generated.bundle.report));
    manifest.write(out)?;
    Ok(manifest)
}

/// Scores an interval file and writes the report files plus manifest.
///
/// Accepted headers: `region,method,level,timestamp,lower,upper,realized`
/// (as written by a backtest) or `timestamp,lower,upper,realized` with
/// `args.alpha` set. Rows are grouped by region, method and level.
pub fn metrics_to_dir(intervals: &Path, args: &MetricsArgs, out: &Path) -> Result<RunManifest> {
    let groups = read_interval_groups(intervals, args)?;
    let mut reports = Vec::with_capacity(groups.len());
    for ((region, method, _), (alpha, rows)) in &groups {
        let series = match args.capacity {
            Some(c) => crate::metrics::normalize_by_capacity(*alpha, rows, c)?,
            None => IntervalSeries::new(*alpha, rows.clone())?,
        };
        reports.push((region.clone(), method.clone(), MetricReport::compute(&series, args.utc_offset)?));
    }
    let refs: Vec<ReportRef<'_>> = reports
        .iter()
        .map(|(region, method, report)| ReportRef {
            region,
            method,
            report,
            utc_offset: args.utc_offset,
        })
        .collect();
    let files = write_report_files(&refs, out)?;
    let mut manifest = RunManifest::new(Command::Metrics { args: args.clone() }, None);
    manifest.inputs.push(digest("intervals", intervals)?);
    manifest.outputs = output_digests(&files)?;
    manifest.write(out)?;
    Ok(manifest)
}

type IntervalGroups = BTreeMap<(String, String, u64), (f64, Vec<IntervalRow>)>;

fn read_interval_groups(path: &Path, args: &MetricsArgs) -> Result<IntervalGroups> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ts), Some(lo), Some(hi), Some(y)) = (col("timestamp"), col("lower"), col("upper"), col("realized")) else {
        return Err(Error::Malformed(vec![format!(
            "{}: line 1: header needs timestamp, lower, upper and realized",
            path.display()
        )]));
    };
    let (region, method, level) = (col("region"), col("method"), col("level"));
    if level.is_none() && args.alpha.is_none() {
        return Err(Error::Config("interval file has no level column; pass an alpha".into()));
    }

    let mut errors = Vec::new();
    let mut groups: IntervalGroups = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> std::result::Result<f64, String> {
            let s = rec.get(i).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad number {s:?}"))
        };
        let parsed = (|| {
            let timestamp = timefmt::parse(rec.get(ts).unwrap_or("")).map_err(|e| e.to_string())?;
            let row = IntervalRow {
                timestamp,
                lower: num(lo)?,
                upper: num(hi)?,
                realized: num(y)?,
            };
            let alpha = match level {
                Some(i) => {
                    let l = num(i)?;
                    if !(l > 0.0 && l < 1.0) {
                        return Err(format!("level {l} outside (0, 1)"));
                    }
                    level_of(l)
                }
                None => args.alpha.expect("checked above"),
            };
            Ok((row, alpha))
        })();
        match parsed {
            Ok((row, alpha)) => {
                let key = (
                    region.and_then(|i| rec.get(i)).unwrap_or("").to_string(),
                    method.and_then(|i| rec.get(i)).unwrap_or("intervals").to_string(),
                    alpha.to_bits(),
                );
                groups.entry(key).or_insert_with(|| (alpha, Vec::new())).1.push(row);
            }
            Err(e) => errors.push(format!("{}: line {line}: {e}", path.display())),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Malformed(errors));
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no interval rows", path.display())));
    }
    Ok(groups)
}

/// Re-runs the command recorded in `manifest` into `out` after checking
/// that its inputs are unchanged.
pub fn replay(manifest: &RunManifest, out: &Path) -> Result<RunManifest> {
    manifest.verify_inputs()?;
    match &manifest.command {
        Command::Backtest { config } => {
            let paths = BundlePaths {
                observations: manifest.required_input("observations")?,
                site_forecasts: manifest.required_input("site_forecasts")?,
                system_forecasts: manifest.input("system_forecasts").map(|d| d.path.clone()),
                sites: manifest.required_input("sites")?,
            };
            backtest_to_dir(&paths, config, out)
        }
        Command::Synth { spec } => {
            let spec_path = manifest.input("spec").map(|d| d.path.clone());
            synth_to_dir(spec, spec_path.as_deref(), out)
        }
        Command::Metrics { args } => metrics_to_dir(&manifest.required_input("intervals")?, args, out),
    }
}
