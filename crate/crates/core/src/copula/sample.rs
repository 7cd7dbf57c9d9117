//! Monte Carlo sampling of the fitted copula and fleet-level aggregation.

use chrono::{DateTime, Utc};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::fit::CorrelationModel;
use crate::error::{Error, Result};
use crate::marginal::QuantileCurve;
use crate::normal;
use crate::timefmt;

pub const DEFAULT_SAMPLES: usize = 2000;

/// Counter-based generator for one `(seed, stream)` pair. Streams are
/// independent, so per-timestamp draws do not depend on scheduling order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `samples` rows of `MVN(0, sigma)` as `G · cholᵀ`, G iid standard
/// normal filled row by row.
pub fn sample_mvn<R: Rng + ?Sized>(model: &CorrelationModel, samples: usize, rng: &mut R) -> DMatrix<f64> {
    let n = model.dim();
    let g: Vec<f64> = (0..samples * n).map(|_| rng.sample(StandardNormal)).collect();
    let g = DMatrix::from_row_slice(samples, n, &g);
    g * model.chol().transpose()
}

/// Empirical fleet predictive distribution at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetDistribution {
    pub timestamp: DateTime<Utc>,
    /// Sorted ascending.
    pub samples: Vec<f64>,
    pub seed: u64,
}

impl FleetDistribution {
    pub fn from_samples(timestamp: DateTime<Utc>, mut samples: Vec<f64>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("fleet distribution needs at least one sample".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "fleet samples" });
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self {
            timestamp,
            samples,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn quantile(&self, u: f64) -> f64 {
        empirical_quantile(&self.samples, u)
    }

    /// Fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.samples.partition_point(|&s| s <= x) as f64 / self.samples.len() as f64
    }
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * u.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Central `(1 - alpha)` interval `[q(alpha/2), q(1 - alpha/2)]`.
pub fn fleet_interval(dist: &FleetDistribution, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok((dist.quantile(alpha / 2.0), dist.quantile(1.0 - alpha / 2.0)))
}

/// Monte Carlo fleet distribution at the curves' common timestamp.
///
/// `curves` must follow the model's site order. The RNG stream is derived from
/// `(seed, hour of the timestamp)`.
pub fn aggregate(
    model: &CorrelationModel,
    curves: &[&QuantileCurve],
    samples: usize,
    seed: u64,
) -> Result<FleetDistribution> {
    check_site_order(model, curves)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let timestamp = curves.first().map(|c| c.timestamp()).unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    if let Some(c) = curves.iter().find(|c| c.timestamp() != timestamp) {
        return Err(Error::InvalidArgument(format!(
            "curve for {} is at {}, expected {}",
            c.site_id(),
            c.timestamp(),
            timestamp
        )));
    }

    let mut rng = stream_rng(seed, timefmt::hour_index(timestamp) as u64);
    let z = sample_mvn(model, samples, &mut rng);
    let totals: Vec<f64> = z
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(curves)
                .map(|(&zi, c)| c.inv_cdf(normal::cdf(zi)))
                .sum()
        })
        .collect();
    FleetDistribution::from_samples(timestamp, totals, seed)
}

fn check_site_order(model: &CorrelationModel, curves: &[&QuantileCurve]) -> Result<()> {
    let sites = model.sites();
    let mismatched: Vec<String> = sites
        .iter()
        .zip(curves)
        .enumerate()
        .filter(|(_, (s, c))| s.as_str() != c.site_id())
        .map(|(i, (s, c))| format!("#{i}: model {s:?} vs curve {:?}", c.site_id()))
        .collect();
    if curves.len() != sites.len() || !mismatched.is_empty() {
        let mut msg = format!("{} model sites, {} curves", sites.len(), curves.len());
        if !mismatched.is_empty() {
            msg.push_str("; ");
            msg.push_str(&mismatched.join(", "));
        }
        return Err(Error::SiteOrder(msg));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::fit::CorrelationModel;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn uniform(site: &str) -> QuantileCurve {
        QuantileCurve::validate_and_repair(&[(0.5, 0.5)], 0.0, 1.0).unwrap().with_site(site)
    }

    fn sample_corr(z: &DMatrix<f64>, i: usize, j: usize) -> f64 {
        let a = z.column(i);
        let b = z.column(j);
        let (ma, mb) = (a.mean(), b.mean());
        let cov = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>();
        let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn mvn_correlation_matches_model() {
        let m = CorrelationModel::identity(names(2));
        let z = sample_mvn(&m, 100_000, &mut stream_rng(1, 0));
        assert!(sample_corr(&z, 0, 1).abs() < 0.02);

        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let m = CorrelationModel::from_matrix(names(2), &sigma).unwrap();
        let z = sample_mvn(&m, 100_000, &mut stream_rng(2, 0));
        assert!((sample_corr(&z, 0, 1) - 0.8).abs() < 0.02);
    }

    #[test]
    fn mvn_deterministic() {
        let m = CorrelationModel::identity(names(3));
        let a = sample_mvn(&m, 50, &mut stream_rng(9, 4));
        let b = sample_mvn(&m, 50, &mut stream_rng(9, 4));
        assert_eq!(a, b);
        let c = sample_mvn(&m, 50, &mut stream_rng(9, 5));
        assert_ne!(a, c);
    }

    #[test]
    fn independent_uniform_sum_is_triangular() {
        let m = CorrelationModel::identity(names(2));
        let (a, b) = (uniform("s0"), uniform("s1"));
        let d = aggregate(&m, &[&a, &b], 100_000, 17).unwrap();
        assert!((d.quantile(0.5) - 1.0).abs() < 0.01);
        assert!((d.cdf(0.5) - 0.125).abs() < 0.01);
        assert!(d.samples.iter().all(|&s| (0.0..=2.0).contains(&s)));
        assert!(d.samples.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn comonotone_sum_adds_quantiles() {
        let m = CorrelationModel::from_matrix(names(3), &DMatrix::from_element(3, 3, 1.0)).unwrap();
        let curves: Vec<QuantileCurve> = vec![
            QuantileCurve::validate_and_repair(&[(0.5, 0.5)], 0.0, 1.0).unwrap().with_site("s0"),
            QuantileCurve::validate_and_repair(&[(0.3, 2.0), (0.7, 3.0)], 0.0, 5.0).unwrap().with_site("s1"),
            QuantileCurve::validate_and_repair(&[(0.1, 1.0), (0.9, 9.0)], 0.0, 10.0).unwrap().with_site("s2"),
        ];
        let refs: Vec<&QuantileCurve> = curves.iter().collect();
        let d = aggregate(&m, &refs, 20_000, 3).unwrap();
        for &u in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            let want: f64 = curves.iter().map(|c| c.inv_cdf(u)).sum();
            assert!((d.quantile(u) - want).abs() < 0.15, "u={u}: {} vs {want}", d.quantile(u));
        }
    }

    #[test]
    fn site_order_mismatch_rejected() {
        let m = CorrelationModel::identity(names(2));
        let (a, b) = (uniform("s1"), uniform("s0"));
        let err = aggregate(&m, &[&a, &b], 10, 0).unwrap_err();
        assert!(matches!(err, Error::SiteOrder(ref msg) if msg.contains("s1")));
        assert!(aggregate(&m, &[&b], 10, 0).is_err());
    }

    /// R's type 7, written from its 1-based textbook definition.
    fn type7_oracle(x: &[f64], p: f64) -> f64 {
        let n = x.len() as f64;
        let h = (n - 1.0) * p + 1.0;
        let j = h.floor();
        let g = h - j;
        let xj = x[j as usize - 1];
        let xj1 = if (j as usize) < x.len() { x[j as usize] } else { xj };
        xj + g * (xj1 - xj)
    }

    #[test]
    fn interval_examples() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let d = FleetDistribution::from_samples(DateTime::<Utc>::UNIX_EPOCH, xs.clone(), 0).unwrap();
        let (lo, hi) = fleet_interval(&d, 0.2).unwrap();
        assert!((lo - type7_oracle(&xs, 0.1)).abs() < 1e-12);
        assert!((hi - type7_oracle(&xs, 0.9)).abs() < 1e-12);
        assert!((lo - 10.9).abs() < 1e-12 && (hi - 90.1).abs() < 1e-12);

        let single = FleetDistribution::from_samples(DateTime::<Utc>::UNIX_EPOCH, vec![4.2], 0).unwrap();
        assert_eq!(fleet_interval(&single, 0.1).unwrap(), (4.2, 4.2));

        let (lo, hi) = fleet_interval(&d, 1.0 - 1e-12).unwrap();
        assert!((lo - 50.5).abs() < 1e-9 && (hi - 50.5).abs() < 1e-9);
        assert!(fleet_interval(&d, 0.0).is_err());
    }

    #[test]
    fn interval_se_shrinks_with_samples() {
        let m = CorrelationModel::identity(names(2));
        let (a, b) = (uniform("s0"), uniform("s1"));
        let spread = |s: usize| {
            let uppers: Vec<f64> = (0..30)
                .map(|seed| fleet_interval(&aggregate(&m, &[&a, &b], s, seed).unwrap(), 0.1).unwrap().1)
                .collect();
            let mean = uppers.iter().sum::<f64>() / uppers.len() as f64;
            (uppers.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (uppers.len() - 1) as f64).sqrt()
        };
        let small = spread(500);
        let large = spread(8000);
        // 16x the samples should cut the standard error about 4x.
        assert!(large < small / 2.5, "{small} vs {large}");
    }

    #[test]
    fn joint_site_permutation_is_equivariant() {
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.2, 0.6, 1.0, 0.4, 0.2, 0.4, 1.0]);
        let m = CorrelationModel::from_matrix(names(3), &sigma).unwrap();
        let curves: Vec<QuantileCurve> = (0..3)
            .map(|i| {
                QuantileCurve::validate_and_repair(&[(0.5, 1.0 + i as f64)], 0.0, 5.0)
                    .unwrap()
                    .with_site(format!("s{i}"))
            })
            .collect();
        let refs: Vec<&QuantileCurve> = curves.iter().collect();
        let d = aggregate(&m, &refs, 100_000, 5).unwrap();
        let order = [2, 0, 1];
        let pm = m.permuted(&order).unwrap();
        let prefs: Vec<&QuantileCurve> = order.iter().map(|&i| &curves[i]).collect();
        let pd = aggregate(&pm, &prefs, 100_000, 5).unwrap();
        for &u in &[0.05, 0.5, 0.95] {
            assert!((d.quantile(u) - pd.quantile(u)).abs() < 0.05);
        }
    }
}
