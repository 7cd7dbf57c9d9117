//! Conformalized quantile regression (CQR) and context-aware weighted
//! conformal calibration (CACP).
//!
//! Every quantile here is an inverse-CDF rule: the smallest score whose
//! cumulative weight reaches the target mass. The plain and weighted paths
//! share one comparison so that unit weights reproduce the plain result bit
//! for bit.

use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::context::ContextVector;
use crate::error::{Error, Result};
use crate::timefmt;

/// How the `1 - alpha` conformal quantile is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMode {
    /// Smallest score with empirical mass `>= 1 - alpha`.
    Plain,
    /// The `ceil((n + 1)(1 - alpha))`-th smallest score.
    #[default]
    FiniteSample,
}

/// `max(lo - y, y - hi)`; negative iff `y` is strictly inside.
#[inline]
pub fn conformity_score(lo: f64, hi: f64, y: f64) -> f64 {
    (lo - y).max(y - hi)
}

#[inline]
fn reaches(cum: f64, target: f64) -> bool {
    cum >= target - 1e-12 * target.abs()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")))
    }
}

fn sorted_scores(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no calibration scores".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { what: "conformity scores" });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Unweighted conformal quantile. Returns `+inf` (with a warning) when the
/// finite-sample rank exceeds the number of scores.
pub fn conformal_quantile(scores: &[f64], alpha: f64, mode: QuantileMode) -> Result<f64> {
    check_alpha(alpha)?;
    let sorted = sorted_scores(scores)?;
    let n = sorted.len() as f64;
    let target = match mode {
        QuantileMode::Plain => (1.0 - alpha) * n,
        QuantileMode::FiniteSample => (1.0 - alpha) * (n + 1.0),
    };
    for (k, &s) in sorted.iter().enumerate() {
        if reaches((k + 1) as f64, target) {
            return Ok(s);
        }
    }
    warn!(
        "conformal rank {} exceeds {} calibration scores at alpha {alpha}; interval widened to support",
        target.ceil(),
        sorted.len()
    );
    Ok(f64::INFINITY)
}

/// RBF similarity `exp(-gamma * |a - b|^2)`.
///
/// `gamma = 0` is accepted as the uniform-weight limit.
pub fn rbf_weight(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} must be finite and >= 0")));
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((-gamma * d2).exp())
}

/// Weighted conformal quantile `inf { s : sum_{s_i <= s} p_i >= 1 - alpha }`.
///
/// All-zero weights fall back to uniform weights with a warning.
pub fn weighted_conformal_quantile(scores: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    weighted_quantile_impl(scores, weights, 0.0, alpha)
}

/// Weighted quantile with an extra mass `test_weight` placed at `+inf` for
/// the test point. With unit weights and `test_weight = 1` this is the
/// finite-sample rank of [`conformal_quantile`].
pub fn weighted_conformal_quantile_with_test_mass(
    scores: &[f64],
    weights: &[f64],
    test_weight: f64,
    alpha: f64,
) -> Result<f64> {
    if !(test_weight >= 0.0 && test_weight.is_finite()) {
        return Err(Error::InvalidArgument(format!("test weight {test_weight} invalid")));
    }
    weighted_quantile_impl(scores, weights, test_weight, alpha)
}

fn weighted_quantile_impl(scores: &[f64], weights: &[f64], test_weight: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: weights.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no calibration scores".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { what: "conformity scores" });
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let w: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    Ok(weighted_quantile_sorted(&sorted, &w, test_weight, alpha))
}

/// Core scan over scores already sorted ascending, weights aligned.
pub(crate) fn weighted_quantile_sorted(sorted: &[f64], weights: &[f64], test_weight: f64, alpha: f64) -> f64 {
    let mut total: f64 = weights.iter().sum();
    let uniform;
    let weights = if total > 0.0 {
        weights
    } else {
        warn!("all calibration weights are zero; using uniform weights");
        uniform = vec![1.0; sorted.len()];
        total = sorted.len() as f64;
        &uniform[..]
    };
    let target = (1.0 - alpha) * (total + test_weight);
    let mut cum = 0.0;
    for (s, w) in sorted.iter().zip(weights) {
        cum += w;
        if reaches(cum, target) {
            return *s;
        }
    }
    if test_weight > 0.0 {
        f64::INFINITY
    } else {
        // Rounding left the cumulative sum a hair short of the full mass.
        sorted[sorted.len() - 1]
    }
}

/// Expands `[lo, hi]` by `s_hat` on both sides and clips to `support`.
///
/// A contraction past the midpoint collapses the interval onto the midpoint;
/// `s_hat = +inf` returns the whole support.
pub fn calibrate_interval(raw: (f64, f64), s_hat: f64, support: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = raw;
    if s_hat == f64::INFINITY {
        return support;
    }
    let (lo, hi) = if s_hat < -(hi - lo) / 2.0 {
        let mid = 0.5 * (lo + hi);
        (mid, mid)
    } else {
        (lo - s_hat, hi + s_hat)
    };
    (lo.clamp(support.0, support.1), hi.clamp(support.0, support.1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub timestamp: DateTime<Utc>,
    pub score: f64,
    pub context: ContextVector,
    /// Raw interval and realized value; absent for records restored from CSV.
    pub interval: Option<(f64, f64)>,
    pub realized: Option<f64>,
}

impl CalibrationRecord {
    pub fn from_outcome(
        timestamp: DateTime<Utc>,
        interval: (f64, f64),
        realized: f64,
        context: ContextVector,
    ) -> Self {
        Self {
            timestamp,
            score: conformity_score(interval.0, interval.1, realized),
            context,
            interval: Some(interval),
            realized: Some(realized),
        }
    }

    pub fn from_score(timestamp: DateTime<Utc>, score: f64, context: ContextVector) -> Self {
        Self {
            timestamp,
            score,
            context,
            interval: None,
            realized: None,
        }
    }
}

/// Append-only, time-ordered calibration history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationStore {
    records: Vec<CalibrationRecord>,
}

impl CalibrationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: CalibrationRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.timestamp <= last.timestamp {
                return Err(Error::InvalidArgument(format!(
                    "calibration record at {} does not follow {}",
                    record.timestamp, last.timestamp
                )));
            }
            if record.context.len() != last.context.len() {
                return Err(Error::DimensionMismatch {
                    expected: last.context.len(),
                    actual: record.context.len(),
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[CalibrationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records strictly before `ts`.
    pub fn before(&self, ts: DateTime<Utc>) -> &[CalibrationRecord] {
        let end = self.records.partition_point(|r| r.timestamp < ts);
        &self.records[..end]
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    /// CSV with header `timestamp,score,context_0..context_k`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let dim = self.records.first().map_or(0, |r| r.context.len());
        let mut header = vec!["timestamp".to_string(), "score".to_string()];
        header.extend((0..dim).map(|i| format!("context_{i}")));
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![timefmt::format(r.timestamp), r.score.to_string()];
            row.extend(r.context.as_slice().iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<calibration csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("timestamp") || header.get(1) != Some("score") {
            return Err(Error::Malformed(vec!["line 1: expected header timestamp,score,context_*".into()]));
        }
        let dim = header.len() - 2;
        let mut store = Self::new();
        let mut errors = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let parsed = (|| -> Result<CalibrationRecord> {
                let ts = timefmt::parse(&rec[0])?;
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("{s:?}: {e}")))
                };
                let score = num(&rec[1])?;
                let ctx = (0..dim).map(|j| num(&rec[j + 2])).collect::<Result<Vec<_>>>()?;
                Ok(CalibrationRecord::from_score(ts, score, ContextVector::new(ctx)))
            })();
            match parsed.and_then(|r| store.push(r)) {
                Ok(()) => {}
                Err(e) => errors.push(format!("line {line}: {e}")),
            }
        }
        if errors.is_empty() {
            Ok(store)
        } else {
            Err(Error::Malformed(errors))
        }
    }
}

/// CACP: RBF-weighted conformal quantile over `store`, applied to `raw`.
///
/// `context` and the stored contexts must already live in the same
/// (standardized) feature space.
pub fn cacp_calibrate(
    raw: (f64, f64),
    context: &ContextVector,
    timestamp: DateTime<Utc>,
    store: &CalibrationStore,
    gamma: f64,
    alpha: f64,
    support: (f64, f64),
) -> Result<(f64, f64)> {
    if store.is_empty() {
        return Err(Error::InsufficientHistory("empty calibration store".into()));
    }
    if store.records().last().is_some_and(|r| r.timestamp >= timestamp) {
        return Err(Error::InvalidArgument(format!(
            "calibration store contains records at or after {timestamp}"
        )));
    }
    let weights = store
        .records()
        .iter()
        .map(|r| rbf_weight(context.as_slice(), r.context.as_slice(), gamma))
        .collect::<Result<Vec<_>>>()?;
    let s_hat = weighted_conformal_quantile(&store.scores(), &weights, alpha)?;
    Ok(calibrate_interval(raw, s_hat, support))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(h: i64) -> DateTime<Utc> {
        DateTime::<Utc>::UNIX_EPOCH + Duration::hours(h)
    }

    #[test]
    fn score_examples() {
        assert_eq!(conformity_score(2.0, 5.0, 6.0), 1.0);
        assert_eq!(conformity_score(2.0, 5.0, 3.0), -1.0);
        assert_eq!(conformity_score(2.0, 5.0, 1.0), 1.0);
        assert_eq!(conformity_score(2.0, 5.0, 5.0), 0.0);
    }

    #[test]
    fn quantile_examples() {
        let s: Vec<f64> = (1..=99).map(f64::from).collect();
        assert_eq!(conformal_quantile(&s, 0.1, QuantileMode::FiniteSample).unwrap(), 90.0);
        let c = vec![3.5; 17];
        assert_eq!(conformal_quantile(&c, 0.2, QuantileMode::FiniteSample).unwrap(), 3.5);
        assert_eq!(conformal_quantile(&c, 0.2, QuantileMode::Plain).unwrap(), 3.5);
        let five = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(conformal_quantile(&five, 0.1, QuantileMode::FiniteSample).unwrap(), f64::INFINITY);
        assert!(conformal_quantile(&[], 0.1, QuantileMode::Plain).is_err());
        assert!(conformal_quantile(&five, 1.0, QuantileMode::Plain).is_err());
    }

    #[test]
    fn rbf_examples() {
        let a = [0.3, -1.0, 2.0];
        assert_eq!(rbf_weight(&a, &a, 3.0).unwrap(), 1.0);
        let b = [2f64.ln().sqrt(), 0.0];
        assert!((rbf_weight(&b, &[0.0, 0.0], 1.0).unwrap() - 0.5).abs() < 1e-12);
        let c = [1.0, 2.0, 0.5];
        assert_eq!(rbf_weight(&a, &c, 0.7).unwrap(), rbf_weight(&c, &a, 0.7).unwrap());
        assert!(rbf_weight(&a, &b, 1.0).is_err());
        assert!(rbf_weight(&a, &c, -1.0).is_err());
    }

    #[test]
    fn weighted_examples() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(weighted_conformal_quantile(&s, &[1.0; 10], 0.1).unwrap(), 9.0);
        let mut w = vec![0.0; 10];
        w[3] = 2.5;
        for &a in &[0.01, 0.5, 0.99] {
            assert_eq!(weighted_conformal_quantile(&s, &w, a).unwrap(), 4.0);
        }
        assert_eq!(weighted_conformal_quantile(&s, &[0.0; 10], 0.1).unwrap(), 9.0);
        assert!(weighted_conformal_quantile(&s, &[1.0; 9], 0.1).is_err());
        assert!(weighted_conformal_quantile(&s, &[-1.0; 10], 0.1).is_err());
    }

    /// Tries every score as a threshold and keeps the smallest one whose
    /// normalised cumulative weight reaches `1 - alpha`.
    fn threshold_oracle(scores: &[f64], weights: &[f64], alpha: f64) -> f64 {
        let total: f64 = weights.iter().sum();
        let mut best = f64::INFINITY;
        for &cand in scores {
            let mass: f64 = scores
                .iter()
                .zip(weights)
                .filter(|(s, _)| **s <= cand)
                .map(|(_, w)| w / total)
                .sum();
            if mass >= 1.0 - alpha - 1e-12 && cand < best {
                best = cand;
            }
        }
        best
    }

    #[test]
    fn weighted_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let scores: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            let weights: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            let alpha = rng.random_range(0.01..0.99);
            let got = weighted_conformal_quantile(&scores, &weights, alpha).unwrap();
            assert_eq!(got, threshold_oracle(&scores, &weights, alpha));
        }
    }

    #[test]
    fn test_mass_reproduces_finite_sample_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [5usize, 9, 20, 101] {
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for &a in &[0.05, 0.1, 0.2, 0.4] {
                assert_eq!(
                    weighted_conformal_quantile_with_test_mass(&scores, &vec![1.0; n], 1.0, a).unwrap(),
                    conformal_quantile(&scores, a, QuantileMode::FiniteSample).unwrap()
                );
            }
        }
    }

    #[test]
    fn calibrate_examples() {
        let sup = (0.0, 100.0);
        assert_eq!(calibrate_interval((10.0, 20.0), 2.0, sup), (8.0, 22.0));
        assert_eq!(calibrate_interval((10.0, 20.0), -3.0, sup), (13.0, 17.0));
        assert_eq!(calibrate_interval((10.0, 20.0), -8.0, sup), (15.0, 15.0));
        assert_eq!(calibrate_interval((10.0, 20.0), f64::INFINITY, sup), sup);
        assert_eq!(calibrate_interval((1.0, 99.0), 5.0, sup), (0.0, 100.0));
    }

    fn store_with(scores: &[f64]) -> CalibrationStore {
        let mut store = CalibrationStore::new();
        for (i, &s) in scores.iter().enumerate() {
            let ctx = ContextVector::new(vec![i as f64 * 0.1, (i % 3) as f64]);
            store.push(CalibrationRecord::from_score(t(i as i64), s, ctx)).unwrap();
        }
        store
    }

    #[test]
    fn cacp_reduces_to_plain_cqr() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..200).map(|_| rng.random_range(-0.2..0.3)).collect();
        let store = store_with(&scores);
        let ctx = ContextVector::new(vec![3.0, 1.0]);
        for &a in &[0.1, 0.2, 0.3, 0.4] {
            let plain = conformal_quantile(&scores, a, QuantileMode::Plain).unwrap();
            let want = calibrate_interval((0.3, 0.6), plain, (0.0, 1.0));
            for gamma in [0.0, 1e-300] {
                let got = cacp_calibrate((0.3, 0.6), &ctx, t(1000), &store, gamma, a, (0.0, 1.0)).unwrap();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn cacp_single_zero_record_keeps_interval() {
        let store = store_with(&[0.0]);
        let ctx = ContextVector::new(vec![0.0, 0.0]);
        let got = cacp_calibrate((0.2, 0.4), &ctx, t(5), &store, 1.0, 0.1, (0.0, 1.0)).unwrap();
        assert_eq!(got, (0.2, 0.4));
    }

    #[test]
    fn cacp_rejects_future_records() {
        let store = store_with(&[0.0, 0.1]);
        let ctx = ContextVector::new(vec![0.0, 0.0]);
        assert!(cacp_calibrate((0.2, 0.4), &ctx, t(1), &store, 1.0, 0.1, (0.0, 1.0)).is_err());
        assert!(cacp_calibrate((0.2, 0.4), &ctx, t(1), &CalibrationStore::new(), 1.0, 0.1, (0.0, 1.0)).is_err());
    }

    #[test]
    fn store_ordering_and_csv() {
        let mut store = store_with(&[0.1, -0.2, 0.3]);
        assert!(store
            .push(CalibrationRecord::from_score(t(1), 0.0, ContextVector::new(vec![0.0, 0.0])))
            .is_err());
        assert_eq!(store.before(t(2)).len(), 2);
        let mut buf = Vec::new();
        store.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,score,context_0,context_1\n"));
        assert_eq!(CalibrationStore::read_csv(buf.as_slice()).unwrap(), store);
    }

    #[test]
    fn record_score_from_outcome() {
        let r = CalibrationRecord::from_outcome(t(0), (2.0, 5.0), 6.0, ContextVector::new(vec![]));
        assert_eq!(r.score, 1.0);
    }

    proptest! {
        #[test]
        fn uniform_weights_equal_plain_quantile(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..200),
            alpha in 0.01f64..0.99,
            w in 0.001f64..100.0,
        ) {
            let plain = conformal_quantile(&scores, alpha, QuantileMode::Plain).unwrap();
            let ones = weighted_conformal_quantile(&scores, &vec![1.0; scores.len()], alpha).unwrap();
            prop_assert_eq!(plain, ones);
            // Any common weight gives the same answer up to summation rounding.
            let scaled = weighted_conformal_quantile(&scores, &vec![w; scores.len()], alpha).unwrap();
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            let k = sorted.iter().position(|&s| s == plain).unwrap();
            let j = sorted.iter().position(|&s| s == scaled).unwrap();
            prop_assert!((k as i64 - j as i64).abs() <= 1);
        }

        #[test]
        fn score_sign_matches_membership(lo in -10.0f64..10.0, width in 0.0f64..5.0, y in -20.0f64..20.0) {
            let hi = lo + width;
            prop_assert_eq!(conformity_score(lo, hi, y) <= 0.0, lo <= y && y <= hi);
        }

        #[test]
        fn more_weight_on_max_score_never_shrinks(
            scores in proptest::collection::vec(-1.0f64..1.0, 2..60),
            weights in proptest::collection::vec(0.01f64..1.0, 60),
            bump in 0.0f64..10.0,
            alpha in 0.05f64..0.5,
        ) {
            let n = scores.len();
            let mut w = weights[..n].to_vec();
            let before = weighted_conformal_quantile(&scores, &w, alpha).unwrap();
            let imax = (0..n).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            w[imax] += bump;
            let after = weighted_conformal_quantile(&scores, &w, alpha).unwrap();
            prop_assert!(after >= before);
            let sup = (0.0, 1.0);
            let (l0, h0) = calibrate_interval((0.4, 0.6), before, sup);
            let (l1, h1) = calibrate_interval((0.4, 0.6), after, sup);
            prop_assert!(l1 <= l0 && h1 >= h0);
        }
    }
}
