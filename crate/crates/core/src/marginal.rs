//! Site-level marginal predictive distributions given in quantile form.
//!
//! A [`QuantileCurve`] is a monotone piecewise-linear CDF through its
//! (level, value) knots, extended linearly to `(support_lo, 0)` and
//! `(support_hi, 1)`. [`QuantileCurve::eval_cdf`] and
//! [`QuantileCurve::inv_cdf`] are exact inverses of each other on curves
//! without flat segments.

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurve {
    site_id: String,
    timestamp: DateTime<Utc>,
    levels: Vec<f64>,
    values: Vec<f64>,
    support_lo: f64,
    support_hi: f64,
    repaired: bool,
}

impl QuantileCurve {
    /// Builds a curve from raw `(level, value)` knots.
    ///
    /// Knots are sorted by level. Crossing quantiles are repaired with a
    /// running maximum and values outside the support are clamped into it;
    /// either repair sets [`QuantileCurve::repaired`].
    pub fn validate_and_repair(
        knots: &[(f64, f64)],
        support_lo: f64,
        support_hi: f64,
    ) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::EmptyCurve);
        }
        if !support_lo.is_finite() || !support_hi.is_finite() || support_lo < 0.0 || support_hi < support_lo {
            return Err(Error::InvalidSupport {
                lo: support_lo,
                hi: support_hi,
            });
        }
        for (index, &(level, value)) in knots.iter().enumerate() {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::LevelOutOfRange { index, level });
            }
            if !value.is_finite() {
                return Err(Error::NonFinite { what: "quantile value" });
            }
        }

        let mut sorted = knots.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateLevel { level: w[0].0 });
        }

        let mut repaired = false;
        let mut levels = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut running = f64::NEG_INFINITY;
        for (level, raw) in sorted {
            let mut v = raw.clamp(support_lo, support_hi);
            if v < running {
                v = running;
            }
            if v != raw {
                repaired = true;
            }
            running = v;
            levels.push(level);
            values.push(v);
        }

        Ok(Self {
            site_id: String::new(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            levels,
            values,
            support_lo,
            support_hi,
            repaired,
        })
    }

    pub fn with_site(mut self, site_id: impl Into<String>) -> Self {
        self.site_id = site_id.into();
        self
    }

    pub fn with_timestamp(mut self, timestamp: DateTime<Utc>) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        self.timestamp
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.levels.iter().copied().zip(self.values.iter().copied())
    }

    pub fn support(&self) -> (f64, f64) {
        (self.support_lo, self.support_hi)
    }

    /// True if ingest had to reorder values or clamp them into the support.
    pub fn repaired(&self) -> bool {
        self.repaired
    }

    /// True when no two consecutive points (supports included) share a value.
    pub fn is_strictly_increasing(&self) -> bool {
        let n = self.len_points();
        (1..n).all(|j| self.point(j).1 > self.point(j - 1).1)
    }

    fn len_points(&self) -> usize {
        self.levels.len() + 2
    }

    /// Point `j` of the augmented knot list as `(probability, value)`.
    #[inline]
    fn point(&self, j: usize) -> (f64, f64) {
        let k = self.levels.len();
        if j == 0 {
            (0.0, self.support_lo)
        } else if j <= k {
            (self.levels[j - 1], self.values[j - 1])
        } else {
            (1.0, self.support_hi)
        }
    }

    /// Predictive CDF at `x`.
    ///
    /// On a flat stretch (several points sharing the value `x`) the result is
    /// the midpoint of the probability range spanned by those points.
    pub fn eval_cdf(&self, x: f64) -> f64 {
        if x < self.support_lo {
            return 0.0;
        }
        if x > self.support_hi {
            return 1.0;
        }
        let n = self.len_points();
        let first_ge = partition_point(n, |j| self.point(j).1 < x);
        let first_gt = partition_point(n, |j| self.point(j).1 <= x);
        if first_gt > first_ge {
            let lo = self.point(first_ge).0;
            let hi = self.point(first_gt - 1).0;
            return 0.5 * (lo + hi);
        }
        // lo < x < hi and no point equals x, so 1 <= first_ge <= n - 1.
        let (p0, v0) = self.point(first_ge - 1);
        let (p1, v1) = self.point(first_ge);
        p0 + (p1 - p0) * (x - v0) / (v1 - v0)
    }

    /// Inverse of [`QuantileCurve::eval_cdf`]; `u` is clamped to `[0, 1]`.
    pub fn inv_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let n = self.len_points();
        let a = partition_point(n, |j| self.point(j).0 < u);
        let (p1, v1) = self.point(a);
        if p1 == u || a == 0 {
            return v1;
        }
        let (p0, v0) = self.point(a - 1);
        v0 + (v1 - v0) * (u - p0) / (p1 - p0)
    }
}

fn partition_point(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Realized generation of one site.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    site_id: String,
    points: Vec<(DateTime<Utc>, f64)>,
}

impl ObservationSeries {
    pub fn new(
        site_id: impl Into<String>,
        points: Vec<(DateTime<Utc>, f64)>,
        capacity: f64,
    ) -> Result<Self> {
        let site_id = site_id.into();
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument(format!(
                "observations for {site_id} not strictly increasing at {}",
                w[1].0
            )));
        }
        if let Some((ts, v)) = points
            .iter()
            .find(|(_, v)| !v.is_finite() || *v < 0.0 || *v > capacity)
        {
            return Err(Error::InvalidArgument(format!(
                "observation {v} for {site_id} at {ts} outside [0, {capacity}]"
            )));
        }
        Ok(Self { site_id, points })
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn points(&self) -> &[(DateTime<Utc>, f64)] {
        &self.points
    }

    pub fn get(&self, ts: DateTime<Utc>) -> Option<f64> {
        self.points
            .binary_search_by(|(t, _)| t.cmp(&ts))
            .ok()
            .map(|i| self.points[i].1)
    }
}
