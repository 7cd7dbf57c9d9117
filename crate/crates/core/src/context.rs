//! Context vectors for CACP weighting.
//!
//! Layout: `k` lagged fleet values (capacity-normalized), then sin/cos pairs
//! for hour of day, day of year and month, then the position within the
//! solar day.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use log::warn;

use crate::error::{Error, Result};
use crate::timefmt;

pub const DEFAULT_LAGS: usize = 3;

/// Lags start one day back so that every feature is known when a day-ahead
/// forecast is issued.
pub const LAG_OFFSET_HOURS: i64 = 24;

/// Values at or below this (normalized) level count as no generation.
const GENERATION_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextVector(Vec<f64>);

impl ContextVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub const fn context_dim(lags: usize) -> usize {
    lags + 7
}

/// Dense hourly series of realized fleet totals.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetHistory {
    start_hour: i64,
    values: Vec<Option<f64>>,
}

impl FleetHistory {
    pub fn new(start: DateTime<Utc>, values: Vec<Option<f64>>) -> Self {
        Self {
            start_hour: timefmt::hour_index(start),
            values,
        }
    }

    pub fn start(&self) -> DateTime<Utc> {
        timefmt::from_hour_index(self.start_hour)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, ts: DateTime<Utc>) -> Option<f64> {
        let i = timefmt::hour_index(ts) - self.start_hour;
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied().flatten()
    }

    /// Copy with every value at or after `cutoff` removed.
    pub fn truncated(&self, cutoff: DateTime<Utc>) -> Self {
        let keep = (timefmt::hour_index(cutoff) - self.start_hour).clamp(0, self.values.len() as i64) as usize;
        Self {
            start_hour: self.start_hour,
            values: self.values[..keep].to_vec(),
        }
    }

    fn iter(&self) -> impl Iterator<Item = (DateTime<Utc>, Option<f64>)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (timefmt::from_hour_index(self.start_hour + i as i64), *v))
    }
}

/// Fixed-offset local time used for calendar and solar features.
#[inline]
pub fn local_time(ts: DateTime<Utc>, utc_offset_hours: i32) -> chrono::NaiveDateTime {
    ts.naive_utc() + Duration::hours(utc_offset_hours as i64)
}

/// Per local day sunrise and sunset hours, each the median of the first and
/// last generating hour over the preceding days only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SunTable {
    days: BTreeMap<NaiveDate, (f64, f64)>,
}

impl SunTable {
    pub fn from_days(days: BTreeMap<NaiveDate, (f64, f64)>) -> Self {
        Self { days }
    }

    /// `window` trailing days feed each entry. A day with no generation
    /// contributes nothing.
    pub fn from_history(history: &FleetHistory, utc_offset_hours: i32, window: usize) -> Self {
        let mut observed: BTreeMap<NaiveDate, (u32, u32)> = BTreeMap::new();
        for (ts, v) in history.iter() {
            if v.is_some_and(|v| v > GENERATION_THRESHOLD) {
                let local = local_time(ts, utc_offset_hours);
                let h = local.hour();
                observed
                    .entry(local.date())
                    .and_modify(|(a, b)| {
                        *a = (*a).min(h);
                        *b = (*b).max(h);
                    })
                    .or_insert((h, h));
            }
        }

        let mut days = BTreeMap::new();
        let (Some(first), Some(last)) = (observed.keys().next().copied(), observed.keys().next_back().copied())
        else {
            return Self { days };
        };
        let mut d = first.succ_opt().expect("date overflow");
        let end = last.succ_opt().expect("date overflow");
        while d <= end {
            let from = d - Duration::days(window as i64);
            let prior: Vec<(u32, u32)> = observed.range(from..d).map(|(_, v)| *v).collect();
            if !prior.is_empty() {
                let rise = median(prior.iter().map(|p| p.0 as f64).collect());
                let set = median(prior.iter().map(|p| p.1 as f64).collect());
                days.insert(d, (rise, set));
            }
            d = d.succ_opt().expect("date overflow");
        }
        Self { days }
    }

    pub fn get(&self, day: NaiveDate) -> Option<(f64, f64)> {
        self.days.get(&day).copied()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn hour_embed(hour: f64) -> (f64, f64) {
    let a = TAU * hour / 24.0;
    (a.sin(), a.cos())
}

pub fn day_embed(day_of_year: f64) -> (f64, f64) {
    let a = TAU * day_of_year / 365.25;
    (a.sin(), a.cos())
}

pub fn month_embed(month: f64) -> (f64, f64) {
    let a = TAU * month / 12.0;
    (a.sin(), a.cos())
}

/// Linear position between sunrise (0) and sunset (1), clipped.
pub fn solar_position(hour: f64, sunrise: f64, sunset: f64) -> f64 {
    if sunset <= sunrise {
        return if hour >= sunset { 1.0 } else { 0.0 };
    }
    ((hour - sunrise) / (sunset - sunrise)).clamp(0.0, 1.0)
}

/// Context vector for the hour `ts`.
///
/// Lag `j` (0-based) reads the fleet total at `ts - 24h - j`. Missing lags are
/// an error; a day absent from `sun` gives solar position 0 and a warning.
pub fn build_context(
    history: &FleetHistory,
    ts: DateTime<Utc>,
    lags: usize,
    sun: &SunTable,
    utc_offset_hours: i32,
) -> Result<ContextVector> {
    let mut v = Vec::with_capacity(context_dim(lags));
    for j in 0..lags {
        let at = ts - Duration::hours(LAG_OFFSET_HOURS + j as i64);
        let x = history.get(at).ok_or_else(|| {
            Error::InsufficientHistory(format!("no fleet value at {} for lag {j} of {ts}", timefmt::format(at)))
        })?;
        v.push(x);
    }

    let local = local_time(ts, utc_offset_hours);
    let hour = local.hour() as f64;
    let (hs, hc) = hour_embed(hour);
    let (ds, dc) = day_embed(local.ordinal() as f64);
    let (ms, mc) = month_embed(local.month() as f64);
    v.extend([hs, hc, ds, dc, ms, mc]);

    let solar = match sun.get(local.date()) {
        Some((rise, set)) => solar_position(hour, rise, set),
        None => {
            warn!("no sunrise/sunset estimate for {}; solar position set to 0", local.date());
            0.0
        }
    };
    v.push(solar);
    Ok(ContextVector(v))
}

/// Per-dimension affine standardization, frozen after fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Standardizer {
    pub fn fit(contexts: &[ContextVector]) -> Result<Self> {
        if contexts.len() < 2 {
            return Err(Error::InsufficientHistory(format!(
                "{} context(s); need at least 2 to standardize",
                contexts.len()
            )));
        }
        let dim = contexts[0].len();
        if let Some(c) = contexts.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: c.len(),
            });
        }
        let n = contexts.len() as f64;
        let mut mean = vec![0.0; dim];
        for c in contexts {
            for (m, x) in mean.iter_mut().zip(&c.0) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for c in contexts {
            for ((s, x), m) in var.iter_mut().zip(&c.0).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, c: &ContextVector) -> ContextVector {
        ContextVector(
            c.0.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(x, (m, s))| (x - m) / s)
                .collect(),
        )
    }
}
