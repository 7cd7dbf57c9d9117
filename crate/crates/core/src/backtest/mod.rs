//! Rolling day-ahead evaluation of the six fleet interval methods.
//!
//! For every test day the correlation model in force is the one fitted at
//! the latest month boundary, calibration pools hold every earlier hour, and
//! CACP picks its kernel width on the trailing validation week. All reads
//! made while building a day's intervals go through [`Guard`], which refuses
//! realized values at or after the day's first hour and forecasts beyond the
//! day itself.

mod config;
mod output;

pub use config::{Calibration, Family, MethodId, ProtocolConfig};
pub use output::{
    write_outputs, write_report_files, ReportRef, HOURLY_FILE, INTERVALS_FILE, METRICS_FILE, RESULTS_FILE,
};

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Months, NaiveDate, TimeZone, Timelike, Utc};
use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{
    calibrate_interval, conformal_quantile, conformity_score, weighted_quantile_sorted, QuantileMode,
};
use crate::context::{build_context, local_time, ContextVector, FleetHistory, Standardizer, SunTable};
use crate::copula::{
    aggregate, estimate_correlation, fleet_interval, pit_value, CorrelationModel, NormalScoreMatrix,
};
use crate::dataio::DatasetBundle;
use crate::error::{Error, Result};
use crate::marginal::QuantileCurve;
use crate::metrics::{level_of, IntervalRow, IntervalSeries, MetricReport};
use crate::normal;
use crate::timefmt;

/// Calibrated intervals live in capacity-normalized units.
const SUPPORT: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSelection {
    pub region: String,
    pub day: NaiveDate,
    pub method: MethodId,
    pub level: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDay {
    pub region: String,
    pub day: NaiveDate,
    pub methods: Vec<MethodId>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    pub region: String,
    /// First hour the model is used for test days.
    pub effective_from: DateTime<Utc>,
    pub fitted_through: Option<DateTime<Utc>>,
    pub columns: usize,
    pub degenerate_sites: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub region: String,
    pub method: MethodId,
    pub series: IntervalSeries,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BacktestOutput {
    /// Ordered by region, method, then the configured alpha order.
    pub results: Vec<MethodResult>,
    pub gamma_selections: Vec<GammaSelection>,
    pub skipped: Vec<SkippedDay>,
    pub correlation_fits: Vec<CorrelationFit>,
    pub utc_offsets: BTreeMap<String, i32>,
    pub test_days: BTreeMap<String, usize>,
}

impl BacktestOutput {
    pub fn get(&self, region: &str, method: MethodId, alpha: f64) -> Option<&MethodResult> {
        self.results
            .iter()
            .find(|r| r.region == region && r.method == method && r.series.alpha() == alpha)
    }
}

/// Runs every configured region of `bundle`.
pub fn run_backtest(bundle: &DatasetBundle, cfg: &ProtocolConfig) -> Result<BacktestOutput> {
    cfg.validate()?;
    let regions = if cfg.regions.is_empty() {
        bundle.regions()
    } else {
        cfg.regions.clone()
    };
    let mut out = BacktestOutput::default();
    for region in regions {
        let sub = bundle.select_region(&region)?;
        run_region(&sub, &region, cfg, &mut out)?;
    }
    Ok(out)
}

/// Local offset from the mean site longitude, 15 degrees per hour.
pub fn infer_utc_offset(bundle: &DatasetBundle) -> i32 {
    if bundle.sites.is_empty() {
        return 0;
    }
    let mean = bundle.sites.iter().map(|s| s.longitude).sum::<f64>() / bundle.sites.len() as f64;
    (mean / 15.0).round() as i32
}

/// Hour index of local midnight starting `date`.
pub fn day_start(date: NaiveDate, utc_offset: i32) -> i64 {
    let midnight = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"));
    timefmt::hour_index(midnight) - utc_offset as i64
}

/// Local days after the warmup whose 24 hours all fall inside `[h0, h1]`.
pub fn test_days(h0: i64, h1: i64, utc_offset: i32, cfg: &ProtocolConfig) -> Result<Vec<NaiveDate>> {
    let mut first = local_time(timefmt::from_hour_index(h0), utc_offset).date();
    if day_start(first, utc_offset) < h0 {
        first = first.succ_opt().expect("date overflow");
    }
    let start = match cfg.warmup_days {
        Some(d) => first + chrono::Duration::days(d as i64),
        None => first
            .checked_add_months(Months::new(cfg.warmup_months))
            .ok_or_else(|| Error::Config("warmup overflows the calendar".into()))?,
    };
    let mut days = Vec::new();
    let mut d = start;
    while day_start(d, utc_offset) + 23 <= h1 {
        days.push(d);
        d = d.succ_opt().expect("date overflow");
    }
    if days.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "no complete test day after the warmup ending {start}"
        )));
    }
    Ok(days)
}

/// Per-hour inputs of one region, all indexed from `h0`.
struct Prepared {
    region: String,
    h0: i64,
    len: usize,
    utc_offset: i32,
    alphas: Vec<f64>,
    /// Capacity-normalized realized fleet total.
    fleet: Vec<Option<f64>>,
    contexts: Vec<Option<Vec<f64>>>,
    daylight: Vec<bool>,
    /// Raw intervals per hour, one per alpha, capacity-normalized.
    raw: BTreeMap<Family, Vec<Option<Bounds>>>,
    days: Vec<NaiveDate>,
}

fn index_by_hour<'a, T>(
    items: impl IntoIterator<Item = &'a T>,
    hour: impl Fn(&T) -> i64,
    h0: i64,
    len: usize,
) -> Vec<Option<&'a T>> {
    let mut v = vec![None; len];
    for item in items {
        let k = hour(item) - h0;
        if k >= 0 && (k as usize) < len {
            v[k as usize] = Some(item);
        }
    }
    v
}

impl Prepared {
    fn build(
        bundle: &DatasetBundle,
        region: &str,
        cfg: &ProtocolConfig,
        utc_offset: i32,
        fits: &mut Vec<CorrelationFit>,
    ) -> Result<Self> {
        let (first, last) = bundle
            .span()
            .ok_or_else(|| Error::InsufficientHistory(format!("region {region} has no data")))?;
        let h0 = timefmt::hour_index(first);
        let h1 = timefmt::hour_index(last);
        let days = test_days(h0, h1, utc_offset, cfg)?;
        let len = (day_start(*days.last().expect("non-empty"), utc_offset) + 24 - h0) as usize;
        let cap = bundle.capacity();
        let ids: Vec<String> = bundle.sites.iter().map(|s| s.site_id.clone()).collect();

        let curves: Vec<Vec<Option<&QuantileCurve>>> = ids
            .iter()
            .map(|id| {
                index_by_hour(
                    bundle.site_curves.get(id).into_iter().flatten(),
                    |c| timefmt::hour_index(c.timestamp()),
                    h0,
                    len,
                )
            })
            .collect();
        let obs: Vec<Vec<Option<f64>>> = ids
            .iter()
            .map(|id| {
                let pts = bundle.observations.get(id).map(|s| s.points()).unwrap_or(&[]);
                index_by_hour(pts, |p| timefmt::hour_index(p.0), h0, len)
                    .into_iter()
                    .map(|p| p.map(|p| p.1))
                    .collect()
            })
            .collect();
        let fleet: Vec<Option<f64>> = (0..len)
            .map(|k| obs.iter().map(|o| o[k]).sum::<Option<f64>>().map(|s| s / cap))
            .collect();

        // Normal scores for correlation fits: hours with every site observed and forecast.
        let zcols: Vec<Option<Vec<f64>>> = (0..len)
            .map(|k| {
                curves
                    .iter()
                    .zip(&obs)
                    .map(|(c, o)| Some(normal::quantile(pit_value(c[k]?, o[k]?))))
                    .collect()
            })
            .collect();

        let mut boundaries = vec![day_start(days[0], utc_offset)];
        boundaries.extend(days[1..].iter().filter(|d| d.day() == 1).map(|&d| day_start(d, utc_offset)));
        let models: Vec<Option<CorrelationModel>> = boundaries
            .iter()
            .map(|&b| {
                let fit = fit_model(&ids, &zcols, h0, b, cfg);
                let record = CorrelationFit {
                    region: region.to_string(),
                    effective_from: timefmt::from_hour_index(b),
                    fitted_through: fit.as_ref().ok().and_then(|m| m.0.fitted_through()),
                    columns: fit.as_ref().map_or(0, |m| m.1),
                    degenerate_sites: fit.as_ref().map_or(Vec::new(), |m| m.0.degenerate_sites().to_vec()),
                    error: fit.as_ref().err().map(|e| e.to_string()),
                };
                if let Some(e) = &record.error {
                    warn!("{region}: correlation fit effective {} failed: {e}", timefmt::format(timefmt::from_hour_index(b)));
                }
                fits.push(record);
                fit.ok().map(|m| m.0)
            })
            .collect();

        let alphas = cfg.alphas.clone();
        let mut raw = BTreeMap::new();
        if cfg.uses(Family::Copula) {
            let copula: Vec<Option<Vec<(f64, f64)>>> = (0..len)
                .into_par_iter()
                .map(|k| {
                    let h = h0 + k as i64;
                    let at: Vec<&QuantileCurve> = curves.iter().map(|c| c[k]).collect::<Option<_>>()?;
                    let m = boundaries.partition_point(|&b| b <= h).saturating_sub(1);
                    let model = models[m].as_ref()?;
                    let dist = aggregate(model, &at, cfg.samples, cfg.seed)
                        .map_err(|e| warn!("{region}: aggregation failed at {}: {e}", timefmt::format(timefmt::from_hour_index(h))))
                        .ok()?;
                    alphas
                        .iter()
                        .map(|&a| fleet_interval(&dist, a).ok().map(|(lo, hi)| (lo / cap, hi / cap)))
                        .collect()
                })
                .collect();
            raw.insert(Family::Copula, copula);
        }
        if cfg.uses(Family::System) {
            let sys = index_by_hour(
                bundle.system_curves.get(region).into_iter().flatten(),
                |c| timefmt::hour_index(c.timestamp()),
                h0,
                len,
            );
            let system = sys
                .into_iter()
                .map(|c| {
                    c.map(|c| {
                        alphas
                            .iter()
                            .map(|&a| (c.inv_cdf(a / 2.0) / cap, c.inv_cdf(1.0 - a / 2.0) / cap))
                            .collect()
                    })
                })
                .collect();
            raw.insert(Family::System, system);
        }

        let history = FleetHistory::new(first, fleet.clone());
        let sun = SunTable::from_history(&history, utc_offset, cfg.sun_window_days);
        let contexts = (0..len)
            .map(|k| {
                let ts = timefmt::from_hour_index(h0 + k as i64);
                build_context(&history, ts, cfg.lags, &sun, utc_offset)
                    .ok()
                    .map(|c| c.as_slice().to_vec())
            })
            .collect();
        let daylight = (0..len)
            .map(|k| {
                if !cfg.daylight_only {
                    return true;
                }
                let local = local_time(timefmt::from_hour_index(h0 + k as i64), utc_offset);
                let hour = local.hour() as f64;
                sun.get(local.date()).is_some_and(|(rise, set)| rise <= hour && hour <= set)
            })
            .collect();

        Ok(Self {
            region: region.to_string(),
            h0,
            len,
            utc_offset,
            alphas,
            fleet,
            contexts,
            daylight,
            raw,
            days,
        })
    }

    fn realized_at(&self, h: i64) -> Option<f64> {
        let k = h - self.h0;
        if k < 0 || k as usize >= self.len {
            return None;
        }
        self.fleet[k as usize]
    }
}

/// Correlation model from normal-score columns before `boundary`.
fn fit_model(
    ids: &[String],
    zcols: &[Option<Vec<f64>>],
    h0: i64,
    boundary: i64,
    cfg: &ProtocolConfig,
) -> Result<(CorrelationModel, usize)> {
    let from = cfg
        .correlation_window_days
        .map_or(h0, |w| (boundary - 24 * w as i64).max(h0));
    let end = (boundary - h0).clamp(0, zcols.len() as i64) as usize;
    let start = (from - h0).clamp(0, end as i64) as usize;
    let cols: Vec<(i64, &Vec<f64>)> = (start..end)
        .filter_map(|k| zcols[k].as_ref().map(|z| (h0 + k as i64, z)))
        .collect();
    if cfg.independent_copula {
        let last = cols.last().map(|c| timefmt::from_hour_index(c.0));
        return Ok((CorrelationModel::identity(ids.to_vec()).with_fitted_through(last), cols.len()));
    }
    let n = ids.len();
    let scores = DMatrix::from_fn(n, cols.len(), |i, j| cols[j].1[i]);
    let times = cols.iter().map(|c| timefmt::from_hour_index(c.0)).collect();
    let model = estimate_correlation(&NormalScoreMatrix::new(ids.to_vec(), times, scores)?)?;
    Ok((model, cols.len()))
}

/// Read access for one test day. Realized values are visible strictly
/// before `cutoff`; forecast-derived quantities up to the end of the day.
struct Guard<'a> {
    prep: &'a Prepared,
    cutoff: i64,
}

impl Guard<'_> {
    fn index(&self, h: i64, limit: i64, what: &str) -> Result<Option<usize>> {
        if h >= limit {
            return Err(Error::LookAhead(format!(
                "{what} at {} requested for the day starting {}",
                timefmt::format(timefmt::from_hour_index(h)),
                timefmt::format(timefmt::from_hour_index(self.cutoff))
            )));
        }
        let k = h - self.prep.h0;
        Ok((k >= 0 && (k as usize) < self.prep.len).then_some(k as usize))
    }

    fn realized(&self, h: i64) -> Result<Option<f64>> {
        Ok(self.index(h, self.cutoff, "realized value")?.and_then(|k| self.prep.fleet[k]))
    }

    fn context(&self, h: i64) -> Result<Option<&[f64]>> {
        Ok(self
            .index(h, self.cutoff + 24, "context")?
            .and_then(|k| self.prep.contexts[k].as_deref()))
    }

    fn daylight(&self, h: i64) -> Result<bool> {
        Ok(self.index(h, self.cutoff + 24, "daylight flag")?.is_some_and(|k| self.prep.daylight[k]))
    }

    fn raw(&self, family: Family, h: i64) -> Result<Option<&[(f64, f64)]>> {
        let k = self.index(h, self.cutoff + 24, "raw interval")?;
        Ok(k.and_then(|k| self.prep.raw.get(&family)?[k].as_deref()))
    }
}

struct PoolEntry<'a> {
    h: i64,
    y: f64,
    context: &'a [f64],
}

/// One (lower, upper) pair per alpha.
type Bounds = Vec<(f64, f64)>;
/// (hour, lower, upper)
type HourInterval = (i64, f64, f64);
type Contexts = Vec<Vec<f64>>;

#[derive(Default)]
struct DayResult {
    day: NaiveDate,
    /// (method, alpha index) -> (hour, lower, upper)
    intervals: BTreeMap<(MethodId, usize), Vec<HourInterval>>,
    gammas: Vec<(MethodId, usize, f64)>,
    skipped: Vec<(Vec<MethodId>, String)>,
}

impl DayResult {
    fn skip(&mut self, methods: Vec<MethodId>, reason: String) {
        if !methods.is_empty() {
            self.skipped.push((methods, reason));
        }
    }
}

/// Scores of one (family, alpha) over a calibration pool, sorted ascending,
/// with the pool index of each.
struct SortedScores {
    scores: Vec<f64>,
    index: Vec<usize>,
}

impl SortedScores {
    fn new(mut pairs: Vec<(f64, usize)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (scores, index) = pairs.into_iter().unzip();
        Self { scores, index }
    }

    fn weighted_quantile(&self, weights: &[f64], test_weight: f64, alpha: f64) -> f64 {
        let w: Vec<f64> = self.index.iter().map(|&j| weights[j]).collect();
        weighted_quantile_sorted(&self.scores, &w, test_weight, alpha)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// RBF weights `exp(-gamma d^2)` and the test point's own mass, both
/// divided by the largest pool weight. The weighted quantile only sees
/// ratios, so this is the same distribution without the underflow that far
/// contexts cause.
fn kernel_weights(d2: &[f64], gamma: f64, test_mass: f64) -> (Vec<f64>, f64) {
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    if gamma == 0.0 || !min.is_finite() {
        return (vec![1.0; d2.len()], test_mass);
    }
    let w = d2.iter().map(|d| (-gamma * (d - min)).exp()).collect();
    let tw = if test_mass > 0.0 { test_mass * (gamma * min).exp() } else { 0.0 };
    (w, tw)
}

impl Prepared {
    fn run_day(&self, day: NaiveDate, cfg: &ProtocolConfig) -> Result<DayResult> {
        let cutoff = day_start(day, self.utc_offset);
        let g = Guard { prep: self, cutoff };
        let mut res = DayResult {
            day,
            ..Default::default()
        };

        let mut test_hours = Vec::with_capacity(24);
        for h in cutoff..cutoff + 24 {
            if g.daylight(h)? {
                test_hours.push(h);
            }
        }
        let mut methods: Vec<MethodId> = cfg.methods.clone();
        methods.sort();
        methods.dedup();
        if test_hours.is_empty() {
            res.skip(methods, "no daylight hours".into());
            return Ok(res);
        }

        let val_start = cutoff - 24 * cfg.validation_days as i64;
        let pool_end = if cfg.merge_validation { cutoff } else { val_start };
        let mut pool = Vec::new();
        let mut val = Vec::new();
        for h in self.h0..cutoff {
            if !g.daylight(h)? {
                continue;
            }
            let (Some(y), Some(context)) = (g.realized(h)?, g.context(h)?) else {
                continue;
            };
            let e = PoolEntry { h, y, context };
            if h >= val_start {
                val.push(PoolEntry { h, y, context });
            }
            if h < pool_end {
                pool.push(e);
            }
        }
        let n_val_pool = pool.partition_point(|p| p.h < val_start);

        let wants_cacp = methods.iter().any(|m| m.calibration() == Calibration::Cacp);
        let mut standardized: Option<(Contexts, Contexts, Contexts)> = None;
        let mut cacp_problem: Option<String> = None;
        if wants_cacp {
            let ctx: Vec<ContextVector> = pool.iter().map(|p| ContextVector::new(p.context.to_vec())).collect();
            match Standardizer::fit(&ctx) {
                Ok(s) => {
                    let apply = |c: &[f64]| s.apply(&ContextVector::new(c.to_vec())).as_slice().to_vec();
                    let mut test_ctx = Vec::with_capacity(test_hours.len());
                    for &h in &test_hours {
                        match g.context(h)? {
                            Some(c) => test_ctx.push(apply(c)),
                            None => {
                                cacp_problem = Some(format!(
                                    "no context at {}",
                                    timefmt::format(timefmt::from_hour_index(h))
                                ));
                                break;
                            }
                        }
                    }
                    if cacp_problem.is_none() {
                        standardized = Some((
                            pool.iter().map(|p| apply(p.context)).collect(),
                            val.iter().map(|p| apply(p.context)).collect(),
                            test_ctx,
                        ));
                    }
                }
                Err(e) => cacp_problem = Some(e.to_string()),
            }
        }

        for family in [Family::System, Family::Copula] {
            let fam_methods: Vec<MethodId> = methods.iter().copied().filter(|m| m.family() == family).collect();
            if fam_methods.is_empty() {
                continue;
            }
            let mut raw_test = Vec::with_capacity(test_hours.len());
            for &h in &test_hours {
                raw_test.push(g.raw(family, h)?);
            }
            let Some(raw_test) = raw_test.into_iter().collect::<Option<Vec<_>>>() else {
                res.skip(fam_methods, format!("missing {family:?} raw interval"));
                continue;
            };
            for (ai, _) in self.alphas.iter().enumerate() {
                if fam_methods.iter().any(|m| m.calibration() == Calibration::Raw) {
                    let m = fam_methods.iter().find(|m| m.calibration() == Calibration::Raw).copied().unwrap();
                    let rows = test_hours.iter().zip(&raw_test).map(|(&h, r)| (h, r[ai].0, r[ai].1)).collect();
                    res.intervals.insert((m, ai), rows);
                }
            }

            let calibrated: Vec<MethodId> = fam_methods
                .iter()
                .copied()
                .filter(|m| m.calibration() != Calibration::Raw)
                .collect();
            if calibrated.is_empty() {
                continue;
            }

            // Scores over the final pool and over the pre-validation prefix.
            let mut final_scores = Vec::with_capacity(self.alphas.len());
            let mut val_scores = Vec::with_capacity(self.alphas.len());
            for ai in 0..self.alphas.len() {
                let mut pairs = Vec::with_capacity(pool.len());
                for (j, p) in pool.iter().enumerate() {
                    if let Some(r) = g.raw(family, p.h)? {
                        pairs.push((conformity_score(r[ai].0, r[ai].1, p.y), j));
                    }
                }
                let prefix: Vec<(f64, usize)> = pairs.iter().copied().filter(|p| p.1 < n_val_pool).collect();
                final_scores.push(SortedScores::new(pairs));
                val_scores.push(SortedScores::new(prefix));
            }
            if final_scores.iter().any(|s| s.scores.is_empty()) {
                res.skip(calibrated, "empty calibration pool".into());
                continue;
            }

            if let Some(m) = calibrated.iter().copied().find(|m| m.calibration() == Calibration::Cqr) {
                for (ai, &alpha) in self.alphas.iter().enumerate() {
                    let s_hat = conformal_quantile(&final_scores[ai].scores, alpha, cfg.conformal_mode)?;
                    let rows = test_hours
                        .iter()
                        .zip(&raw_test)
                        .map(|(&h, r)| {
                            let (lo, hi) = calibrate_interval(r[ai], s_hat, SUPPORT);
                            (h, lo, hi)
                        })
                        .collect();
                    res.intervals.insert((m, ai), rows);
                }
            }

            if let Some(m) = calibrated.iter().copied().find(|m| m.calibration() == Calibration::Cacp) {
                if let Some(problem) = &cacp_problem {
                    res.skip(vec![m], problem.clone());
                    continue;
                }
                let (pool_ctx, val_ctx, test_ctx) = standardized.as_ref().expect("standardized contexts");
                let gammas = self.select_gammas(cfg, &g, family, &val, val_ctx, &pool_ctx[..n_val_pool], &val_scores)?;
                let test_weight = test_mass(cfg.conformal_mode);
                let mut rows: Vec<Vec<HourInterval>> = vec![Vec::with_capacity(test_hours.len()); self.alphas.len()];
                for (t, &h) in test_hours.iter().enumerate() {
                    let d2: Vec<f64> = pool_ctx.iter().map(|c| sq_dist(&test_ctx[t], c)).collect();
                    let mut cache: Vec<(f64, (Vec<f64>, f64))> = Vec::new();
                    for (ai, &alpha) in self.alphas.iter().enumerate() {
                        let gamma = gammas[ai];
                        let (w, tw) = match cache.iter().position(|c| c.0.to_bits() == gamma.to_bits()) {
                            Some(i) => &cache[i].1,
                            None => {
                                cache.push((gamma, kernel_weights(&d2, gamma, test_weight)));
                                &cache[cache.len() - 1].1
                            }
                        };
                        let s_hat = final_scores[ai].weighted_quantile(w, *tw, alpha);
                        let (lo, hi) = calibrate_interval(raw_test[t][ai], s_hat, SUPPORT);
                        rows[ai].push((h, lo, hi));
                    }
                }
                for (ai, r) in rows.into_iter().enumerate() {
                    res.intervals.insert((m, ai), r);
                    res.gammas.push((m, ai, gammas[ai]));
                }
            }
        }
        Ok(res)
    }

    /// Kernel width per alpha minimizing the mean Winkler score over the
    /// validation hours, calibrating each on the pool before the week.
    #[allow(clippy::too_many_arguments)]
    fn select_gammas(
        &self,
        cfg: &ProtocolConfig,
        g: &Guard<'_>,
        family: Family,
        val: &[PoolEntry<'_>],
        val_ctx: &[Vec<f64>],
        pool_ctx: &[Vec<f64>],
        scores: &[SortedScores],
    ) -> Result<Vec<f64>> {
        let grid = &cfg.gamma_grid;
        let n_alpha = self.alphas.len();
        if grid.len() == 1 {
            return Ok(vec![grid[0]; n_alpha]);
        }
        let test_weight = test_mass(cfg.conformal_mode);
        let mut sums = vec![vec![0.0; grid.len()]; n_alpha];
        let mut counts = vec![0usize; n_alpha];
        for (v, entry) in val.iter().enumerate() {
            let Some(raw) = g.raw(family, entry.h)? else {
                continue;
            };
            let d2: Vec<f64> = pool_ctx.iter().map(|c| sq_dist(&val_ctx[v], c)).collect();
            for ai in 0..n_alpha {
                if !scores[ai].scores.is_empty() {
                    counts[ai] += 1;
                }
            }
            for (gi, &gamma) in grid.iter().enumerate() {
                let (w, tw) = kernel_weights(&d2, gamma, test_weight);
                for (ai, &alpha) in self.alphas.iter().enumerate() {
                    if scores[ai].scores.is_empty() {
                        continue;
                    }
                    let s_hat = scores[ai].weighted_quantile(&w, tw, alpha);
                    let (lower, upper) = calibrate_interval(raw[ai], s_hat, SUPPORT);
                    let row = IntervalRow {
                        timestamp: timefmt::from_hour_index(entry.h),
                        lower,
                        upper,
                        realized: entry.y,
                    };
                    sums[ai][gi] += row.winkler(alpha);
                }
            }
        }
        Ok((0..n_alpha)
            .map(|ai| {
                if counts[ai] == 0 {
                    warn!(
                        "{}: no validation hours for {family:?} at alpha {}; using gamma {}",
                        self.region, self.alphas[ai], grid[0]
                    );
                    return grid[0];
                }
                let mut best = 0;
                for gi in 1..grid.len() {
                    if sums[ai][gi] < sums[ai][best] {
                        best = gi;
                    }
                }
                grid[best]
            })
            .collect())
    }
}

fn test_mass(mode: QuantileMode) -> f64 {
    match mode {
        QuantileMode::Plain => 0.0,
        // Kernel self-similarity of the test point.
        QuantileMode::FiniteSample => 1.0,
    }
}

fn run_region(bundle: &DatasetBundle, region: &str, cfg: &ProtocolConfig, out: &mut BacktestOutput) -> Result<()> {
    let utc_offset = cfg.utc_offset.unwrap_or_else(|| infer_utc_offset(bundle));
    out.utc_offsets.insert(region.to_string(), utc_offset);
    let prep = Prepared::build(bundle, region, cfg, utc_offset, &mut out.correlation_fits)?;
    info!(
        "{region}: {} sites, {} test days from {}",
        bundle.sites.len(),
        prep.days.len(),
        prep.days[0]
    );
    out.test_days.insert(region.to_string(), prep.days.len());

    let days: Vec<DayResult> = prep
        .days
        .par_iter()
        .map(|&d| prep.run_day(d, cfg))
        .collect::<Result<_>>()?;

    let mut rows: BTreeMap<(MethodId, usize), Vec<IntervalRow>> = BTreeMap::new();
    for day in days {
        for (methods, reason) in day.skipped {
            warn!("{region} {}: skipping {:?}: {reason}", day.day, methods);
            out.skipped.push(SkippedDay {
                region: region.to_string(),
                day: day.day,
                methods,
                reason,
            });
        }
        let missing = day
            .intervals
            .values()
            .flatten()
            .find(|(h, _, _)| prep.realized_at(*h).is_none());
        if let Some((h, _, _)) = missing {
            let reason = format!(
                "missing observations at {}",
                timefmt::format(timefmt::from_hour_index(*h))
            );
            warn!("{region} {}: day skipped: {reason}", day.day);
            let mut methods: Vec<MethodId> = day.intervals.keys().map(|k| k.0).collect();
            methods.dedup();
            out.skipped.push(SkippedDay {
                region: region.to_string(),
                day: day.day,
                methods,
                reason,
            });
            continue;
        }
        for (m, ai, gamma) in day.gammas {
            out.gamma_selections.push(GammaSelection {
                region: region.to_string(),
                day: day.day,
                method: m,
                level: level_of(prep.alphas[ai]),
                gamma,
            });
        }
        for (key, ivs) in day.intervals {
            rows.entry(key).or_default().extend(ivs.into_iter().map(|(h, lower, upper)| IntervalRow {
                timestamp: timefmt::from_hour_index(h),
                lower,
                upper,
                realized: prep.realized_at(h).expect("checked above"),
            }));
        }
    }

    for method in MethodId::ALL.into_iter().filter(|m| cfg.methods.contains(m)) {
        for (ai, &alpha) in prep.alphas.iter().enumerate() {
            let Some(r) = rows.remove(&(method, ai)) else {
                warn!("{region}: {method} produced no intervals at alpha {alpha}");
                continue;
            };
            let series = IntervalSeries::new(alpha, r)?;
            let report = MetricReport::compute(&series, utc_offset)?;
            out.results.push(MethodResult {
                region: region.to_string(),
                method,
                series,
                report,
            });
        }
    }
    Ok(())
}
