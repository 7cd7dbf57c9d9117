use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fleetcast::backtest::{MethodId, ProtocolConfig};
use fleetcast::dataio::{load_bundle, BundlePaths, DatasetBundle};
use fleetcast::manifest::{self, MetricsArgs, RunManifest};
use fleetcast::synth::SynthSpec;
use fleetcast::Error;

/// Fleet-level probabilistic solar forecasts: copula aggregation of site
/// quantile forecasts with conformal calibration.
#[derive(Parser)]
#[command(name = "fleetcast", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load and check input files and print the coverage report.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        /// Restrict to one region.
        #[arg(long)]
        region: Option<String>,
        /// Print the full report, including every missing cell, as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic fleet in the backtest input format.
    Synth {
        /// Synthetic fleet description (TOML).
        #[arg(long, required_unless_present = "replay")]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Regenerate from a manifest written by an earlier run.
        #[arg(long, conflicts_with = "spec")]
        replay: Option<PathBuf>,
    },
    /// Run the rolling day-ahead evaluation.
    Backtest {
        /// Protocol settings (TOML). Omitted keys take their defaults.
        #[arg(long, required_unless_present = "replay")]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: OptionalDataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured methods (comma separated, e.g. COPULA,COPULA_CACP).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Re-run from a manifest; fails if inputs or outputs differ.
        #[arg(long, conflicts_with_all = ["config", "seed", "methods"])]
        replay: Option<PathBuf>,
    },
    /// Score an interval file (PICP, AIW, Winkler, hourly coverage).
    Metrics {
        /// CSV with `timestamp,lower,upper,realized` and optionally `region,method,level`.
        #[arg(long)]
        intervals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Miscoverage level when the file has no `level` column.
        #[arg(long)]
        alpha: Option<f64>,
        /// Divide bounds and realized values by this capacity first.
        #[arg(long)]
        capacity: Option<f64>,
        /// Offset in hours for the hour-of-day coverage buckets.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        utc_offset: i32,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Observations: timestamp,site_id,value
    #[arg(long)]
    obs: PathBuf,
    /// Site quantile forecasts: timestamp,site_id,level,value
    #[arg(long)]
    site_forecasts: PathBuf,
    /// System quantile forecasts: timestamp,region,level,value
    #[arg(long)]
    system_forecasts: Option<PathBuf>,
    /// Site metadata: site_id,capacity_mw,latitude,longitude,region
    #[arg(long)]
    sites: PathBuf,
}

impl DataArgs {
    fn paths(&self) -> BundlePaths {
        BundlePaths {
            observations: self.obs.clone(),
            site_forecasts: self.site_forecasts.clone(),
            system_forecasts: self.system_forecasts.clone(),
            sites: self.sites.clone(),
        }
    }
}

#[derive(Args)]
struct OptionalDataArgs {
    /// Observations: timestamp,site_id,value
    #[arg(long, required_unless_present = "replay")]
    obs: Option<PathBuf>,
    /// Site quantile forecasts: timestamp,site_id,level,value
    #[arg(long, required_unless_present = "replay")]
    site_forecasts: Option<PathBuf>,
    /// System quantile forecasts: timestamp,region,level,value
    #[arg(long)]
    system_forecasts: Option<PathBuf>,
    /// Site metadata: site_id,capacity_mw,latitude,longitude,region
    #[arg(long, required_unless_present = "replay")]
    sites: Option<PathBuf>,
}

/// Exit status 1: bad arguments or invalid input. Exit status 2: failure
/// while running.
enum Failure {
    Invalid(Error),
    Runtime(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn error(&self) -> &Error {
        match self {
            Failure::Invalid(e) | Failure::Runtime(e) => e,
        }
    }
}

fn invalid(e: Error) -> Failure {
    Failure::Invalid(e)
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("fleetcast: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fleetcast: {}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Validate { data, region, json } => {
            let bundle = load_bundle(&data.paths()).map_err(invalid)?;
            let bundle = match region {
                Some(r) => bundle.select_region(&r).map_err(invalid)?,
                None => bundle,
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&bundle.report).map_err(|e| invalid(e.into()))?);
            } else {
                print_summary(&bundle);
            }
            Ok(())
        }
        Cmd::Synth { spec, out, replay } => {
            if let Some(m) = replay {
                return replay_manifest(&m, &out);
            }
            let path = spec.expect("clap enforces --spec");
            let s = SynthSpec::load(&path).map_err(invalid)?;
            let m = manifest::synth_to_dir(&s, Some(&path), &out).map_err(runtime)?;
            println!("wrote {} files to {}", m.outputs.len() + 1, out.display());
            Ok(())
        }
        Cmd::Backtest {
            config,
            data,
            out,
            seed,
            methods,
            replay,
        } => {
            if let Some(m) = replay {
                return replay_manifest(&m, &out);
            }
            let mut cfg = ProtocolConfig::load(&config.expect("clap enforces --config")).map_err(invalid)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(ms) = methods {
                cfg.methods = ms
                    .iter()
                    .map(|m| m.parse::<MethodId>())
                    .collect::<Result<_, _>>()
                    .map_err(invalid)?;
            }
            cfg.validate().map_err(invalid)?;
            let paths = BundlePaths {
                observations: data.obs.expect("clap enforces --obs"),
                site_forecasts: data.site_forecasts.expect("clap enforces --site-forecasts"),
                system_forecasts: data.system_forecasts,
                sites: data.sites.expect("clap enforces --sites"),
            };
            let bundle = load_bundle(&paths).map_err(invalid)?;
            for r in &cfg.regions {
                bundle.select_region(r).map_err(invalid)?;
            }
            let m = manifest::run_loaded_backtest(&bundle, &paths, &cfg, &out).map_err(runtime)?;
            println!(
                "wrote {} result files and {} to {}",
                m.outputs.len(),
                manifest::MANIFEST_FILE,
                out.display()
            );
            Ok(())
        }
        Cmd::Metrics {
            intervals,
            out,
            alpha,
            capacity,
            utc_offset,
        } => {
            if let Some(a) = alpha {
                if !(a > 0.0 && a < 1.0) {
                    return Err(invalid(Error::InvalidArgument(format!("alpha {a} outside (0, 1)"))));
                }
            }
            let args = MetricsArgs {
                alpha,
                capacity,
                utc_offset,
            };
            let m = manifest::metrics_to_dir(&intervals, &args, &out).map_err(|e| match e {
                Error::Io { .. } | Error::Csv(_) | Error::Malformed(_) | Error::Config(_) | Error::InvalidArgument(_) => {
                    invalid(e)
                }
                e => runtime(e),
            })?;
            println!("wrote {} files to {}", m.outputs.len() + 1, out.display());
            Ok(())
        }
    }
}

fn replay_manifest(path: &Path, out: &Path) -> Result<(), Failure> {
    let recorded = RunManifest::load(path).map_err(invalid)?;
    recorded.verify_inputs().map_err(invalid)?;
    let fresh = manifest::replay(&recorded, out).map_err(runtime)?;
    let diffs = fresh.output_differences(&recorded);
    if !diffs.is_empty() {
        return Err(runtime(Error::InvalidArgument(format!(
            "replayed outputs differ from the manifest: {}",
            diffs.join(", ")
        ))));
    }
    println!("replayed {} into {}; all {} outputs match", path.display(), out.display(), fresh.outputs.len());
    Ok(())
}

fn print_summary(bundle: &DatasetBundle) {
    println!("{}", bundle.report.summary());
    for region in bundle.regions() {
        let n = bundle.sites.iter().filter(|s| s.region == region).count();
        let cap: f64 = bundle.sites.iter().filter(|s| s.region == region).map(|s| s.capacity_mw).sum();
        println!("region {region}: {n} sites, {cap} MW");
    }
}
