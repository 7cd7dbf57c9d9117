//! Synthetic fleets with a known Gaussian-copula truth and controllable
//! forecast miscalibration.
//!
//! Observations are drawn from the true joint. Site curves are the true
//! marginal quantiles at levels 0.01..0.99 passed through a miscalibration
//! operator. System curves come from direct samples of the true fleet total
//! with the same operator applied at fleet level.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Duration, Timelike, Utc};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::context::local_time;
use crate::copula::{empirical_quantile, stream_rng};
use crate::dataio::{CoverageReport, DatasetBundle, SiteMeta};
use crate::error::{Error, Result};
use crate::marginal::{ObservationSeries, QuantileCurve};
use crate::normal;
use crate::timefmt;

/// Forecast levels of the emitted curves.
pub fn curve_levels() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginalFamily {
    /// Uniform on `[0, capacity]`.
    Uniform,
    /// Normal with `mean` and `sd` as capacity fractions, truncated to `[0, capacity]`.
    TruncatedNormal { mean: f64, sd: f64 },
    /// `capacity * e(h) * Beta(a, b)` with envelope `e(h) = max(0, sin(pi (h - 6) / 12))`
    /// at local hour `h`; a point mass at zero at night.
    DiurnalBeta { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// Local hours `[start_hour, end_hour)`, wrapping past midnight if `end_hour <= start_hour`.
    pub start_hour: u32,
    pub end_hour: u32,
    #[serde(default = "one")]
    pub widen: f64,
    #[serde(default)]
    pub shift: f64,
}

fn one() -> f64 {
    1.0
}

impl Regime {
    pub fn contains(&self, hour: u32) -> bool {
        if self.start_hour < self.end_hour {
            (self.start_hour..self.end_hour).contains(&hour)
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Miscalibration {
    #[default]
    Identity,
    /// Scale distances from the true median by `factor`.
    Widen { factor: f64 },
    /// Add `delta * capacity`.
    Shift { delta: f64 },
    /// Per local-hour widen and shift; hours outside every regime are exact.
    RegimeSwitch { regimes: Vec<Regime> },
}

impl Miscalibration {
    /// `(widen, shift)` in effect at a local hour.
    pub fn params(&self, local_hour: u32) -> (f64, f64) {
        match self {
            Miscalibration::Identity => (1.0, 0.0),
            Miscalibration::Widen { factor } => (*factor, 0.0),
            Miscalibration::Shift { delta } => (1.0, *delta),
            Miscalibration::RegimeSwitch { regimes } => regimes
                .iter()
                .find(|r| r.contains(local_hour))
                .map_or((1.0, 0.0), |r| (r.widen, r.shift)),
        }
    }

    /// Index of the regime covering `local_hour`, if any.
    pub fn regime_of(&self, local_hour: u32) -> Option<usize> {
        match self {
            Miscalibration::RegimeSwitch { regimes } => regimes.iter().position(|r| r.contains(local_hour)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |w: f64, s: f64| {
            if w.is_finite() && w >= 0.0 && s.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("miscalibration widen {w} / shift {s} invalid")))
            }
        };
        match self {
            Miscalibration::Identity => Ok(()),
            Miscalibration::Widen { factor } => check(*factor, 0.0),
            Miscalibration::Shift { delta } => check(1.0, *delta),
            Miscalibration::RegimeSwitch { regimes } => {
                for r in regimes {
                    if r.start_hour > 23 || r.end_hour > 24 {
                        return Err(Error::Config(format!(
                            "regime hours {}..{} outside 0..24",
                            r.start_hour, r.end_hour
                        )));
                    }
                    check(r.widen, r.shift)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrelationSpec {
    /// Every off-diagonal equal to `rho`. `rho = 1` is the comonotone fleet.
    Equicorrelation { rho: f64 },
    Matrix { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSite {
    pub id: String,
    pub capacity_mw: f64,
    pub marginal: MarginalFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub horizon_days: u32,
    #[serde(default)]
    pub utc_offset: i32,
    #[serde(default = "default_region")]
    pub region: String,
    pub sites: Vec<SynthSite>,
    pub correlation: CorrelationSpec,
    #[serde(default)]
    pub miscalibration: Miscalibration,
    /// Oracle draws per hour behind each system curve; 0 emits none.
    #[serde(default = "default_system_samples")]
    pub system_samples: usize,
}

fn default_region() -> String {
    "SYN".to_string()
}

fn default_system_samples() -> usize {
    1000
}

impl SynthSpec {
    /// `n` identical sites of 10 MW with equicorrelation `rho`.
    pub fn homogeneous(n: usize, marginal: MarginalFamily, rho: f64, horizon_days: u32, seed: u64) -> Self {
        Self {
            seed,
            start: DateTime::parse_from_rfc3339("2019-01-01T00:00:00Z").unwrap().to_utc(),
            horizon_days,
            utc_offset: 0,
            region: default_region(),
            sites: (0..n)
                .map(|i| SynthSite {
                    id: format!("site{i:03}"),
                    capacity_mw: 10.0,
                    marginal: marginal.clone(),
                })
                .collect(),
            correlation: CorrelationSpec::Equicorrelation { rho },
            miscalibration: Miscalibration::Identity,
            system_samples: default_system_samples(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn capacity(&self) -> f64 {
        self.sites.iter().map(|s| s.capacity_mw).sum()
    }

    pub fn hours(&self) -> usize {
        self.horizon_days as usize * 24
    }

    pub fn correlation_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.sites.len();
        match &self.correlation {
            CorrelationSpec::Equicorrelation { rho } => {
                Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { *rho }))
            }
            CorrelationSpec::Matrix { matrix } => {
                if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("correlation matrix must be {n}x{n}")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| matrix[i][j]))
            }
        }
    }
}

/// Square root factor `L` with `L L^T = sigma`. Accepts positive
/// semi-definite matrices so that comonotone fleets are expressible.
fn psd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    for i in 0..n {
        if (sigma[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("correlation diagonal entry {i} is {}", sigma[(i, i)])));
        }
        for j in 0..n {
            let v = sigma[(i, j)];
            if !v.is_finite() || (v - sigma[(j, i)]).abs() > 1e-12 || v.abs() > 1.0 + 1e-12 {
                return Err(Error::Config(format!("correlation entry ({i}, {j}) = {v} invalid")));
            }
        }
    }
    let eig = SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.iter().any(|&l| l < -1e-9) {
        return Err(Error::Config("correlation matrix is not positive semi-definite".into()));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * root)
}

fn diurnal_envelope(local_hour: u32) -> f64 {
    if !(7..=17).contains(&local_hour) {
        return 0.0;
    }
    (PI * (local_hour as f64 - 6.0) / 12.0).sin()
}

/// Ground truth of one synthetic fleet.
#[derive(Debug, Clone)]
pub struct TruthModel {
    spec: SynthSpec,
    sqrt: DMatrix<f64>,
    betas: Vec<Option<Beta>>,
}

impl TruthModel {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        if spec.sites.is_empty() {
            return Err(Error::Config("synthetic fleet needs at least one site".into()));
        }
        let mut betas = Vec::with_capacity(spec.sites.len());
        for s in &spec.sites {
            if !(s.capacity_mw > 0.0 && s.capacity_mw.is_finite()) {
                return Err(Error::Config(format!("site {} capacity {} invalid", s.id, s.capacity_mw)));
            }
            betas.push(match s.marginal {
                MarginalFamily::Uniform => None,
                MarginalFamily::TruncatedNormal { mean, sd } => {
                    if !(mean.is_finite() && sd > 0.0 && sd.is_finite()) {
                        return Err(Error::Config(format!("site {} truncated normal parameters invalid", s.id)));
                    }
                    None
                }
                MarginalFamily::DiurnalBeta { a, b } => Some(
                    Beta::new(a, b).map_err(|e| Error::Config(format!("site {} beta parameters: {e}", s.id)))?,
                ),
            });
        }
        spec.miscalibration.validate()?;
        let sqrt = psd_sqrt(&spec.correlation_matrix()?)?;
        Ok(Self { spec, sqrt, betas })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn local_hour(&self, ts: DateTime<Utc>) -> u32 {
        local_time(ts, self.spec.utc_offset).hour()
    }

    /// True quantile of site `i` at `ts`, in MW.
    pub fn site_quantile(&self, i: usize, ts: DateTime<Utc>, u: f64) -> f64 {
        let site = &self.spec.sites[i];
        let cap = site.capacity_mw;
        let u = u.clamp(0.0, 1.0);
        match site.marginal {
            MarginalFamily::Uniform => u * cap,
            MarginalFamily::TruncatedNormal { mean, sd } => {
                let (pa, pb) = (normal::cdf(-mean / sd), normal::cdf((1.0 - mean) / sd));
                let z = normal::quantile(pa + u * (pb - pa));
                (cap * (mean + sd * z)).clamp(0.0, cap)
            }
            MarginalFamily::DiurnalBeta { .. } => {
                let e = diurnal_envelope(self.local_hour(ts));
                if e == 0.0 {
                    0.0
                } else {
                    cap * e * self.betas[i].as_ref().expect("beta marginal").inverse_cdf(u)
                }
            }
        }
    }

    fn correlated_uniforms<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.spec.sites.len();
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|i| {
                let z: f64 = (0..n).map(|j| self.sqrt[(i, j)] * g[j]).sum();
                normal::cdf(z)
            })
            .collect()
    }

    /// One joint draw of all sites at `ts`.
    fn draw_sites<R: Rng>(&self, ts: DateTime<Utc>, rng: &mut R) -> Vec<f64> {
        self.correlated_uniforms(rng)
            .into_iter()
            .enumerate()
            .map(|(i, u)| self.site_quantile(i, ts, u))
            .collect()
    }

    /// Direct draws of the true fleet total at `ts`, sorted ascending.
    pub fn oracle_fleet_samples(&self, ts: DateTime<Utc>, samples: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, timefmt::hour_index(ts) as u64);
        let mut out: Vec<f64> = (0..samples)
            .map(|_| self.draw_sites(ts, &mut rng).into_iter().sum())
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    /// Empirical `u` quantile of the true fleet total at `ts`.
    pub fn oracle_fleet_quantile(&self, ts: DateTime<Utc>, u: f64, samples: usize, seed: u64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidArgument(format!("u {u} outside (0, 1)")));
        }
        if samples == 0 {
            return Err(Error::InvalidArgument("oracle needs at least one sample".into()));
        }
        Ok(empirical_quantile(&self.oracle_fleet_samples(ts, samples, seed), u))
    }

    /// True marginal quantiles at `levels` after the miscalibration operator.
    pub fn site_curve(&self, i: usize, ts: DateTime<Utc>, levels: &[f64]) -> Result<QuantileCurve> {
        let cap = self.spec.sites[i].capacity_mw;
        let median = self.site_quantile(i, ts, 0.5);
        let (w, s) = self.spec.miscalibration.params(self.local_hour(ts));
        let knots: Vec<(f64, f64)> = levels
            .iter()
            .map(|&l| (l, distort(self.site_quantile(i, ts, l), median, w, s * cap)))
            .collect();
        Ok(QuantileCurve::validate_and_repair(&knots, 0.0, cap)?
            .with_site(self.spec.sites[i].id.clone())
            .with_timestamp(ts))
    }

    fn system_curve(&self, ts: DateTime<Utc>, levels: &[f64]) -> Result<QuantileCurve> {
        let cap = self.spec.capacity();
        let seed = self.spec.seed ^ SYSTEM_STREAM_SALT;
        let draws = self.oracle_fleet_samples(ts, self.spec.system_samples, seed);
        let median = empirical_quantile(&draws, 0.5);
        let (w, s) = self.spec.miscalibration.params(self.local_hour(ts));
        let knots: Vec<(f64, f64)> = levels
            .iter()
            .map(|&l| (l, distort(empirical_quantile(&draws, l), median, w, s * cap)))
            .collect();
        Ok(QuantileCurve::validate_and_repair(&knots, 0.0, cap)?
            .with_site(self.spec.region.clone())
            .with_timestamp(ts))
    }
}

/// Keeps the system-curve draws independent of the observation draws.
const SYSTEM_STREAM_SALT: u64 = 0x5eed_5a17_0000_0001;

fn distort(q: f64, median: f64, widen: f64, shift: f64) -> f64 {
    median + widen * (q - median) + shift
}

/// A generated dataset together with its truth.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub bundle: DatasetBundle,
    pub truth: TruthModel,
}

/// Draws observations from the true joint and emits forecast curves.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    let truth = TruthModel::new(spec.clone())?;
    let levels = curve_levels();
    let h0 = timefmt::hour_index(spec.start);
    let start = timefmt::from_hour_index(h0);
    if start != spec.start {
        return Err(Error::Config(format!("start {} is not hour-aligned", spec.start)));
    }
    let n = spec.sites.len();
    let times: Vec<DateTime<Utc>> = (0..spec.hours()).map(|k| start + Duration::hours(k as i64)).collect();

    struct Hour {
        obs: Vec<f64>,
        curves: Vec<QuantileCurve>,
        system: Option<QuantileCurve>,
    }
    let hours: Vec<Hour> = times
        .par_iter()
        .map(|&ts| {
            let mut rng = stream_rng(spec.seed, timefmt::hour_index(ts) as u64);
            let obs = truth.draw_sites(ts, &mut rng);
            let curves = (0..n).map(|i| truth.site_curve(i, ts, &levels)).collect::<Result<Vec<_>>>()?;
            let system = if spec.system_samples > 0 {
                Some(truth.system_curve(ts, &levels)?)
            } else {
                None
            };
            Ok(Hour { obs, curves, system })
        })
        .collect::<Result<_>>()?;

    let mut sites: Vec<SiteMeta> = spec
        .sites
        .iter()
        .map(|s| SiteMeta {
            site_id: s.id.clone(),
            capacity_mw: s.capacity_mw,
            latitude: 40.0,
            longitude: 15.0 * spec.utc_offset as f64,
            region: spec.region.clone(),
        })
        .collect();
    sites.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    if sites.windows(2).any(|w| w[0].site_id == w[1].site_id) {
        return Err(Error::Config("duplicate synthetic site id".into()));
    }

    let mut observations = BTreeMap::new();
    let mut site_curves: BTreeMap<String, Vec<QuantileCurve>> = BTreeMap::new();
    for (i, s) in spec.sites.iter().enumerate() {
        let points = times.iter().zip(&hours).map(|(&ts, h)| (ts, h.obs[i])).collect();
        observations.insert(s.id.clone(), ObservationSeries::new(s.id.clone(), points, s.capacity_mw)?);
        site_curves.insert(s.id.clone(), hours.iter().map(|h| h.curves[i].clone()).collect());
    }
    let mut system_curves = BTreeMap::new();
    if spec.system_samples > 0 {
        system_curves.insert(
            spec.region.clone(),
            hours.iter().filter_map(|h| h.system.clone()).collect(),
        );
    }

    let mut bundle = DatasetBundle {
        sites,
        observations,
        site_curves,
        system_curves,
        report: CoverageReport::default(),
    };
    let repaired = bundle
        .site_curves
        .values()
        .chain(bundle.system_curves.values())
        .flatten()
        .filter(|c| c.repaired())
        .count();
    let obs_rows = n * times.len();
    let sys_rows = if spec.system_samples > 0 { times.len() * levels.len() } else { 0 };
    bundle.report = bundle.report_for(obs_rows, obs_rows * levels.len(), sys_rows, repaired);
    Ok(SynthOutput { bundle, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{conformal_quantile, conformity_score, QuantileMode};
    use crate::copula::{estimate_correlation, normal_scores, pit_transform, pit_value};

    fn tn() -> MarginalFamily {
        MarginalFamily::TruncatedNormal { mean: 0.5, sd: 0.15 }
    }

    /// Two-sided Kolmogorov-Smirnov statistic against U(0, 1).
    fn ks_uniform(mut u: Vec<f64>) -> f64 {
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        u.iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_forecasts_have_uniform_pit() {
        // T = 5000 hours; the 1% KS critical value is 1.628 / sqrt(T).
        let crit = 1.628 / 5000f64.sqrt();
        for marginal in [MarginalFamily::Uniform, tn()] {
            let mut spec = SynthSpec::homogeneous(2, marginal.clone(), 0.5, 209, 11);
            spec.system_samples = 0;
            let out = generate(&spec).unwrap();
            let id = &spec.sites[0].id;
            let obs = &out.bundle.observations[id];
            let pit: Vec<f64> = out.bundle.site_curves[id]
                .iter()
                .zip(obs.points())
                .take(5000)
                .map(|(c, p)| pit_value(c, p.1))
                .collect();
            assert_eq!(pit.len(), 5000);
            let d = ks_uniform(pit);
            assert!(d < crit, "{marginal:?}: KS {d} >= {crit}");
        }
    }

    #[test]
    fn widened_forecasts_contract_under_cqr() {
        let mut spec = SynthSpec::homogeneous(1, tn(), 0.0, 20, 3);
        spec.miscalibration = Miscalibration::Widen { factor: 2.0 };
        spec.system_samples = 0;
        let out = generate(&spec).unwrap();
        let id = &spec.sites[0].id;
        let scores: Vec<f64> = out.bundle.site_curves[id]
            .iter()
            .zip(out.bundle.observations[id].points())
            .map(|(c, p)| conformity_score(c.inv_cdf(0.05), c.inv_cdf(0.95), p.1))
            .collect();
        let s_hat = conformal_quantile(&scores, 0.1, QuantileMode::FiniteSample).unwrap();
        assert!(s_hat < 0.0, "s_hat {s_hat}");
    }

    #[test]
    fn stronger_dependence_widens_fleet_interval() {
        let ts = DateTime::<Utc>::UNIX_EPOCH;
        let width = |rho: f64| {
            let t = TruthModel::new(SynthSpec::homogeneous(5, tn(), rho, 1, 1)).unwrap();
            let s = t.oracle_fleet_samples(ts, 20_000, 9);
            empirical_quantile(&s, 0.95) - empirical_quantile(&s, 0.05)
        };
        assert!(width(0.9) > width(0.0));
    }

    #[test]
    fn oracle_examples() {
        let ts = DateTime::<Utc>::UNIX_EPOCH;
        let mut spec = SynthSpec::homogeneous(2, MarginalFamily::Uniform, 0.0, 1, 1);
        spec.sites.iter_mut().for_each(|s| s.capacity_mw = 1.0);
        let t = TruthModel::new(spec).unwrap();
        let s = 40_000;
        let q = t.oracle_fleet_quantile(ts, 0.5, s, 5).unwrap();
        assert!((q - 1.0).abs() < 3.0 / (s as f64).sqrt(), "{q}");

        let como = TruthModel::new(SynthSpec::homogeneous(3, tn(), 1.0, 1, 1)).unwrap();
        let q = como.oracle_fleet_quantile(ts, 0.8, s, 5).unwrap();
        let want: f64 = (0..3).map(|i| como.site_quantile(i, ts, 0.8)).sum();
        assert!((q - want).abs() < 0.05, "{q} vs {want}");
        assert!(como.oracle_fleet_quantile(ts, 1.0, s, 5).is_err());
    }

    #[test]
    fn correlation_is_recovered() {
        let n = 5;
        let matrix: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.8f64.powi((i as i32 - j as i32).abs()) }).collect())
            .collect();
        let mut spec = SynthSpec::homogeneous(n, tn(), 0.0, 209, 21);
        spec.correlation = CorrelationSpec::Matrix { matrix: matrix.clone() };
        spec.system_samples = 0;
        let out = generate(&spec).unwrap();
        let obs: Vec<ObservationSeries> = out.bundle.observations.values().cloned().collect();
        let curves: Vec<Vec<QuantileCurve>> = out
            .bundle
            .site_curves
            .values()
            .map(|cs| cs[..5000].to_vec())
            .collect();
        let pit = pit_transform(&obs, &curves).unwrap();
        assert_eq!(pit.times.len(), 5000);
        let model = estimate_correlation(&normal_scores(&pit)).unwrap();
        for (i, row) in matrix.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                let err = (model.sigma()[(i, j)] - want).abs();
                assert!(err < 0.05, "({i},{j}) off by {err}");
            }
        }
    }

    #[test]
    fn diurnal_nights_are_zero() {
        let mut spec = SynthSpec::homogeneous(2, MarginalFamily::DiurnalBeta { a: 2.0, b: 2.0 }, 0.6, 2, 4);
        spec.system_samples = 50;
        let out = generate(&spec).unwrap();
        for series in out.bundle.observations.values() {
            for (ts, v) in series.points() {
                let h = ts.hour();
                if !(7..=17).contains(&h) {
                    assert_eq!(*v, 0.0, "{ts}");
                }
            }
        }
        let curve = &out.bundle.site_curves["site000"][2];
        assert!(curve.values().iter().all(|&v| v == 0.0));
        assert_eq!(pit_value(curve, 0.0), 0.495);
    }

    #[test]
    fn regimes_select_parameters() {
        let m = Miscalibration::RegimeSwitch {
            regimes: vec![
                Regime { start_hour: 20, end_hour: 8, widen: 0.5, shift: 0.0 },
                Regime { start_hour: 8, end_hour: 14, widen: 1.5, shift: 0.1 },
            ],
        };
        assert_eq!(m.params(23), (0.5, 0.0));
        assert_eq!(m.params(3), (0.5, 0.0));
        assert_eq!(m.params(8), (1.5, 0.1));
        assert_eq!(m.params(16), (1.0, 0.0));
        assert_eq!(m.regime_of(16), None);
    }

    #[test]
    fn spec_toml_round_trip_and_determinism() {
        let mut spec = SynthSpec::homogeneous(3, tn(), 0.4, 2, 8);
        spec.miscalibration = Miscalibration::RegimeSwitch {
            regimes: vec![Regime { start_hour: 0, end_hour: 12, widen: 0.5, shift: 0.0 }],
        };
        let text = spec.to_toml().unwrap();
        assert_eq!(SynthSpec::from_toml(&text).unwrap(), spec);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.bundle.report.hours, 48);
        assert!(a.bundle.report.missing_observations.is_empty());
    }

    #[test]
    fn site_longitude_encodes_utc_offset() {
        for off in [-6, 0, 9] {
            let mut spec = SynthSpec::homogeneous(2, tn(), 0.0, 1, 1);
            spec.utc_offset = off;
            spec.system_samples = 0;
            let bundle = generate(&spec).unwrap().bundle;
            assert_eq!(crate::backtest::infer_utc_offset(&bundle), off);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SynthSpec::homogeneous(3, tn(), 0.4, 2, 8);
        spec.correlation = CorrelationSpec::Equicorrelation { rho: -0.9 };
        assert!(generate(&spec).is_err());
        let mut spec = SynthSpec::homogeneous(2, tn(), 0.4, 2, 8);
        spec.miscalibration = Miscalibration::Widen { factor: f64::NAN };
        assert!(generate(&spec).is_err());
    }
}
