//! Interval scoring: coverage (PICP), average width (AIW), Winkler score and
//! hour-of-day conditional coverage.

use std::io::Write;

use chrono::{DateTime, Timelike, Utc};
use serde::Serialize;

use crate::context::local_time;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRow {
    pub timestamp: DateTime<Utc>,
    pub lower: f64,
    pub upper: f64,
    pub realized: f64,
}

impl IntervalRow {
    /// Boundary inclusive.
    #[inline]
    pub fn covered(&self) -> bool {
        self.lower <= self.realized && self.realized <= self.upper
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    #[inline]
    pub fn winkler(&self, alpha: f64) -> f64 {
        let w = self.width();
        if self.realized > self.upper {
            w + 2.0 / alpha * (self.realized - self.upper)
        } else if self.realized < self.lower {
            w + 2.0 / alpha * (self.lower - self.realized)
        } else {
            w
        }
    }
}

/// Capacity-normalized intervals at one miscoverage level.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSeries {
    alpha: f64,
    rows: Vec<IntervalRow>,
}

impl IntervalSeries {
    pub fn new(alpha: f64, rows: Vec<IntervalRow>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if let Some(r) = rows.iter().find(|r| !(r.lower <= r.upper)) {
            return Err(Error::InvalidArgument(format!(
                "interval [{}, {}] at {} has lower > upper",
                r.lower, r.upper, r.timestamp
            )));
        }
        if let Some(w) = rows.windows(2).find(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::InvalidArgument(format!(
                "interval timestamps not strictly increasing at {}",
                w[1].timestamp
            )));
        }
        Ok(Self { alpha, rows })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rows(&self) -> &[IntervalRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn nonempty(rows: &[IntervalRow]) -> Result<()> {
    if rows.is_empty() {
        Err(Error::InvalidArgument("empty interval series".into()))
    } else {
        Ok(())
    }
}

pub fn picp(rows: &[IntervalRow]) -> Result<f64> {
    nonempty(rows)?;
    Ok(rows.iter().filter(|r| r.covered()).count() as f64 / rows.len() as f64)
}

pub fn aiw(rows: &[IntervalRow]) -> Result<f64> {
    nonempty(rows)?;
    Ok(rows.iter().map(IntervalRow::width).sum::<f64>() / rows.len() as f64)
}

pub fn winkler(rows: &[IntervalRow], alpha: f64) -> Result<f64> {
    nonempty(rows)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(rows.iter().map(|r| r.winkler(alpha)).sum::<f64>() / rows.len() as f64)
}

/// Coverage and row count per hour of day (`utc_offset_hours` shifts the
/// bucket to local time). Empty buckets are `None`.
pub fn hourly_coverage(rows: &[IntervalRow], utc_offset_hours: i32) -> Result<HourlyCoverage> {
    nonempty(rows)?;
    let mut hits = [0usize; 24];
    let mut counts = [0usize; 24];
    for r in rows {
        let h = local_time(r.timestamp, utc_offset_hours).hour() as usize;
        counts[h] += 1;
        if r.covered() {
            hits[h] += 1;
        }
    }
    let coverage = std::array::from_fn(|h| (counts[h] > 0).then(|| hits[h] as f64 / counts[h] as f64));
    Ok(HourlyCoverage { coverage, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HourlyCoverage {
    pub coverage: [Option<f64>; 24],
    pub counts: [usize; 24],
}

/// Divides bounds and realized values by `capacity`.
pub fn normalize_by_capacity(alpha: f64, rows: &[IntervalRow], capacity: f64) -> Result<IntervalSeries> {
    if !(capacity > 0.0 && capacity.is_finite()) {
        return Err(Error::InvalidArgument(format!("capacity {capacity} must be positive")));
    }
    let rows = rows
        .iter()
        .map(|r| IntervalRow {
            timestamp: r.timestamp,
            lower: r.lower / capacity,
            upper: r.upper / capacity,
            realized: r.realized / capacity,
        })
        .collect();
    IntervalSeries::new(alpha, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub alpha: f64,
    pub picp: f64,
    pub aiw: f64,
    pub winkler: f64,
    pub count: usize,
    pub hourly: HourlyCoverage,
}

impl MetricReport {
    pub fn compute(series: &IntervalSeries, utc_offset_hours: i32) -> Result<Self> {
        let rows = series.rows();
        Ok(Self {
            alpha: series.alpha(),
            picp: picp(rows)?,
            aiw: aiw(rows)?,
            winkler: winkler(rows, series.alpha())?,
            count: rows.len(),
            hourly: hourly_coverage(rows, utc_offset_hours)?,
        })
    }

    /// Nominal coverage `1 - alpha`.
    pub fn level(&self) -> f64 {
        level_of(self.alpha)
    }
}

/// `1 - alpha` rounded to 10 decimals so that 0.9 prints as `0.9`.
pub fn level_of(alpha: f64) -> f64 {
    ((1.0 - alpha) * 1e10).round() / 1e10
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongMetric {
    pub metric: &'static str,
    pub level: f64,
    pub method: String,
    pub value: f64,
}

pub fn long_form(method: &str, report: &MetricReport) -> Vec<LongMetric> {
    [("picp", report.picp), ("aiw", report.aiw), ("ws", report.winkler)]
        .into_iter()
        .map(|(metric, value)| LongMetric {
            metric,
            level: report.level(),
            method: method.to_string(),
            value,
        })
        .collect()
}

/// `metric,level,method,value` rows.
pub fn write_long_csv<W: Write>(w: W, rows: &[LongMetric]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["metric", "level", "method", "value"])?;
    for r in rows {
        wtr.write_record([r.metric.to_string(), r.level.to_string(), r.method.clone(), r.value.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<metrics csv>", e))?;
    Ok(())
}

/// `method,level,hour,coverage,count`; missing buckets leave `coverage` empty.
pub fn write_hourly_csv<W: Write>(w: W, reports: &[(String, &MetricReport)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "level", "hour", "coverage", "count"])?;
    for (method, r) in reports {
        for h in 0..24 {
            wtr.write_record([
                method.clone(),
                r.level().to_string(),
                h.to_string(),
                r.hourly.coverage[h].map(|c| c.to_string()).unwrap_or_default(),
                r.hourly.counts[h].to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<hourly csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use proptest::prelude::*;

    fn row(h: i64, lower: f64, upper: f64, realized: f64) -> IntervalRow {
        IntervalRow {
            timestamp: DateTime::<Utc>::UNIX_EPOCH + Duration::hours(h),
            lower,
            upper,
            realized,
        }
    }

    #[test]
    fn picp_examples() {
        let rows = vec![
            row(0, 0.1, 0.2, 0.15),
            row(1, 0.1, 0.2, 0.25),
            row(2, 0.1, 0.2, 0.2),
            row(3, 0.1, 0.2, 0.1),
        ];
        assert_eq!(picp(&rows).unwrap(), 0.75);
        let full: Vec<_> = (0..10).map(|h| row(h, 0.0, 1.0, h as f64 / 10.0)).collect();
        assert_eq!(picp(&full).unwrap(), 1.0);
        assert!(picp(&[]).is_err());
    }

    #[test]
    fn aiw_examples() {
        let rows: Vec<_> = (0..5).map(|h| row(h, 0.3, 0.5, 0.4)).collect();
        assert!((aiw(&rows).unwrap() - 0.2).abs() < 1e-12);
        let rows = vec![row(0, 0.0, 0.1, 0.0), row(1, 0.2, 0.5, 0.0)];
        assert!((aiw(&rows).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn winkler_examples() {
        assert!((winkler(&[row(0, 0.0, 1.0, 1.2)], 0.1).unwrap() - 5.0).abs() < 1e-12);
        assert!((winkler(&[row(0, 0.2, 0.7, 0.5)], 0.1).unwrap() - 0.5).abs() < 1e-12);
        assert!((winkler(&[row(0, 0.3, 0.7, 0.1)], 0.2).unwrap() - 2.4).abs() < 1e-12);
    }

    #[test]
    fn hourly_examples() {
        let rows: Vec<_> = (0..5).map(|d| row(12 + 24 * d, 0.0, 1.0, 0.5)).collect();
        let h = hourly_coverage(&rows, 0).unwrap();
        assert_eq!(h.coverage[12], Some(1.0));
        assert_eq!(h.counts[12], 5);
        assert!(h.coverage.iter().enumerate().all(|(i, c)| i == 12 || c.is_none()));
        let local = hourly_coverage(&rows, -5).unwrap();
        assert_eq!(local.coverage[7], Some(1.0));
    }

    #[test]
    fn hourly_buckets_track_global_picp() {
        // Cover every third row across 30 days; each hour bucket sees the same mix.
        let rows: Vec<_> = (0..720)
            .map(|h| {
                let hit = (h / 24) % 3 != 0;
                row(h, 0.2, 0.4, if hit { 0.3 } else { 0.9 })
            })
            .collect();
        let g = picp(&rows).unwrap();
        let h = hourly_coverage(&rows, 0).unwrap();
        for c in h.coverage {
            assert!((c.unwrap() - g).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization() {
        let s = normalize_by_capacity(0.1, &[row(0, 10.0, 20.0, 15.0)], 100.0).unwrap();
        assert_eq!(s.rows()[0], row(0, 0.1, 0.2, 0.15));
        assert!(normalize_by_capacity(0.1, &[], 0.0).is_err());
        let raw = vec![row(0, 10.0, 20.0, 25.0), row(1, 10.0, 20.0, 12.0), row(2, 30.0, 40.0, 5.0)];
        let s = normalize_by_capacity(0.2, &raw, 50.0).unwrap();
        assert_eq!(picp(&raw).unwrap(), picp(s.rows()).unwrap());
        assert!((winkler(&raw, 0.2).unwrap() / 50.0 - winkler(s.rows(), 0.2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn series_validation() {
        assert!(IntervalSeries::new(0.1, vec![row(0, 0.3, 0.2, 0.1)]).is_err());
        assert!(IntervalSeries::new(0.1, vec![row(1, 0.1, 0.2, 0.1), row(0, 0.1, 0.2, 0.1)]).is_err());
        assert!(IntervalSeries::new(1.5, vec![]).is_err());
    }

    #[test]
    fn long_csv_layout() {
        let s = IntervalSeries::new(0.1, vec![row(0, 0.1, 0.3, 0.2), row(1, 0.1, 0.3, 0.5)]).unwrap();
        let r = MetricReport::compute(&s, 0).unwrap();
        let mut buf = Vec::new();
        write_long_csv(&mut buf, &long_form("COPULA", &r)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("metric,level,method,value"));
        assert_eq!(text.lines().nth(1), Some("picp,0.9,COPULA,0.5"));
    }

    fn arb_rows() -> impl Strategy<Value = Vec<IntervalRow>> {
        proptest::collection::vec((0.0f64..1.0, 0.0f64..0.5, -0.2f64..1.2), 1..80).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (lo, w, y))| row(i as i64, lo, lo + w, y))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn winkler_dominates_width(rows in arb_rows(), alpha in 0.01f64..0.99) {
            let ws = winkler(&rows, alpha).unwrap();
            let w = aiw(&rows).unwrap();
            let p = picp(&rows).unwrap();
            prop_assert!(ws >= w - 1e-12);
            prop_assert_eq!((ws - w).abs() <= 1e-12, p == 1.0);
        }

        #[test]
        fn permutation_invariant(rows in arb_rows(), seed in any::<u64>()) {
            let mut shuffled = rows.clone();
            let n = shuffled.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(picp(&rows).unwrap(), picp(&shuffled).unwrap());
            prop_assert!((aiw(&rows).unwrap() - aiw(&shuffled).unwrap()).abs() < 1e-12);
            prop_assert!((winkler(&rows, 0.1).unwrap() - winkler(&shuffled, 0.1).unwrap()).abs() < 1e-9);
            prop_assert_eq!(hourly_coverage(&rows, 0).unwrap(), hourly_coverage(&shuffled, 0).unwrap());
        }

        #[test]
        fn coverage_survives_affine_rescaling(
            grid in proptest::collection::vec((0i32..64, 0i32..32, -16i32..80), 1..80),
            k in -3i32..4,
            b in -100i32..100,
        ) {
            // Dyadic grid values and power-of-two scales keep the arithmetic exact.
            let rows: Vec<_> = grid.iter().enumerate()
                .map(|(i, &(lo, w, y))| row(i as i64, lo as f64 / 64.0, (lo + w) as f64 / 64.0, y as f64 / 64.0))
                .collect();
            let a = 2f64.powi(k);
            let t: Vec<_> = rows.iter().map(|r| IntervalRow {
                timestamp: r.timestamp,
                lower: a * r.lower + b as f64,
                upper: a * r.upper + b as f64,
                realized: a * r.realized + b as f64,
            }).collect();
            prop_assert_eq!(picp(&rows).unwrap(), picp(&t).unwrap());
            prop_assert_eq!(hourly_coverage(&rows, 0).unwrap(), hourly_coverage(&t, 0).unwrap());
        }
    }
}
