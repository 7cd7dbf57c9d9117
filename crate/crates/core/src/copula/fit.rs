//! Gaussian-copula correlation estimation from PIT normal scores.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::marginal::{ObservationSeries, QuantileCurve};
use crate::normal;
use crate::timefmt;

/// PIT values are clipped to `[PIT_EPS, 1 - PIT_EPS]` before the normal quantile.
pub const PIT_EPS: f64 = 1e-6;

/// Eigenvalue floor applied by [`pd_repair`].
pub const MIN_EIGENVALUE: f64 = 1e-6;

/// Clipped probability integral transform of one observation.
#[inline]
pub fn pit_value(curve: &QuantileCurve, x: f64) -> f64 {
    curve.eval_cdf(x).clamp(PIT_EPS, 1.0 - PIT_EPS)
}

/// A (site, timestamp) cell that lacked an observation or a curve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingPair {
    pub site_id: String,
    pub timestamp: DateTime<Utc>,
    pub missing_observation: bool,
    pub missing_curve: bool,
}

/// N×T matrix of clipped PIT values. Rows are sites, columns timestamps.
#[derive(Debug, Clone)]
pub struct PitMatrix {
    pub sites: Vec<String>,
    pub times: Vec<DateTime<Utc>>,
    pub values: DMatrix<f64>,
    pub gaps: Vec<MissingPair>,
}

/// PIT of every site observation through its own forecast curve.
///
/// `curves[i]` holds the curves of site `obs[i]`. A timestamp is kept only if
/// every site has both an observation and a curve there; otherwise the missing
/// cells go to [`PitMatrix::gaps`] and the column is dropped.
pub fn pit_transform(obs: &[ObservationSeries], curves: &[Vec<QuantileCurve>]) -> Result<PitMatrix> {
    if obs.len() != curves.len() {
        return Err(Error::DimensionMismatch {
            expected: obs.len(),
            actual: curves.len(),
        });
    }
    let mut all_times = BTreeSet::new();
    for s in obs {
        all_times.extend(s.points().iter().map(|p| p.0));
    }
    for (s, cs) in obs.iter().zip(curves) {
        if let Some(c) = cs.iter().find(|c| c.site_id() != s.site_id()) {
            return Err(Error::SiteOrder(format!(
                "curve for {:?} listed under site {:?}",
                c.site_id(),
                s.site_id()
            )));
        }
        all_times.extend(cs.iter().map(|c| c.timestamp()));
    }

    let lookup: Vec<_> = curves
        .iter()
        .map(|cs| {
            let mut v: Vec<&QuantileCurve> = cs.iter().collect();
            v.sort_by_key(|c| c.timestamp());
            v
        })
        .collect();

    let mut gaps = Vec::new();
    let mut columns: Vec<(DateTime<Utc>, Vec<f64>)> = Vec::new();
    for &ts in &all_times {
        let mut column = Vec::with_capacity(obs.len());
        let mut complete = true;
        for (s, cs) in obs.iter().zip(&lookup) {
            let x = s.get(ts);
            let curve = cs
                .binary_search_by(|c| c.timestamp().cmp(&ts))
                .ok()
                .map(|i| cs[i]);
            match (x, curve) {
                (Some(x), Some(c)) => column.push(pit_value(c, x)),
                (x, c) => {
                    complete = false;
                    gaps.push(MissingPair {
                        site_id: s.site_id().to_string(),
                        timestamp: ts,
                        missing_observation: x.is_none(),
                        missing_curve: c.is_none(),
                    });
                }
            }
        }
        if complete {
            columns.push((ts, column));
        }
    }

    let n = obs.len();
    let t = columns.len();
    let values = DMatrix::from_fn(n, t, |i, j| columns[j].1[i]);
    Ok(PitMatrix {
        sites: obs.iter().map(|s| s.site_id().to_string()).collect(),
        times: columns.into_iter().map(|c| c.0).collect(),
        values,
        gaps,
    })
}

/// N×T matrix of normal scores.
#[derive(Debug, Clone)]
pub struct NormalScoreMatrix {
    pub sites: Vec<String>,
    pub times: Vec<DateTime<Utc>>,
    pub scores: DMatrix<f64>,
}

impl NormalScoreMatrix {
    pub fn new(sites: Vec<String>, times: Vec<DateTime<Utc>>, scores: DMatrix<f64>) -> Result<Self> {
        if scores.nrows() != sites.len() {
            return Err(Error::DimensionMismatch {
                expected: sites.len(),
                actual: scores.nrows(),
            });
        }
        if scores.ncols() != times.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                actual: scores.ncols(),
            });
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "normal scores" });
        }
        Ok(Self { sites, times, scores })
    }
}

pub fn normal_scores(pit: &PitMatrix) -> NormalScoreMatrix {
    NormalScoreMatrix {
        sites: pit.sites.clone(),
        times: pit.times.clone(),
        scores: pit.values.map(normal::quantile),
    }
}

/// Fitted Gaussian-copula parameter over an ordered list of sites.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel {
    sites: Vec<String>,
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    fitted_through: Option<DateTime<Utc>>,
    degenerate_sites: Vec<String>,
}

impl CorrelationModel {
    /// Builds a model from any symmetric matrix; the matrix is passed through
    /// [`pd_repair`] first.
    pub fn from_matrix(sites: Vec<String>, matrix: &DMatrix<f64>) -> Result<Self> {
        let n = sites.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: matrix.nrows(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "correlation matrix" });
        }
        let sigma = pd_repair(matrix);
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("correlation matrix is not positive definite".into()))?
            .l();
        Ok(Self {
            sites,
            sigma,
            chol,
            fitted_through: None,
            degenerate_sites: Vec::new(),
        })
    }

    pub fn identity(sites: Vec<String>) -> Self {
        let n = sites.len();
        Self {
            sites,
            sigma: DMatrix::identity(n, n),
            chol: DMatrix::identity(n, n),
            fitted_through: None,
            degenerate_sites: Vec::new(),
        }
    }

    pub fn with_fitted_through(mut self, ts: Option<DateTime<Utc>>) -> Self {
        self.fitted_through = ts;
        self
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn dim(&self) -> usize {
        self.sites.len()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Lower-triangular Cholesky factor of `sigma`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn fitted_through(&self) -> Option<DateTime<Utc>> {
        self.fitted_through
    }

    /// Sites whose normal scores were constant during fitting.
    pub fn degenerate_sites(&self) -> &[String] {
        &self.degenerate_sites
    }

    /// Same model with sites reordered so that `order[k]` becomes site `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.dim();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("order is not a permutation".into()));
        }
        let sigma = DMatrix::from_fn(n, n, |i, j| self.sigma[(order[i], order[j])]);
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("permuted matrix lost definiteness".into()))?
            .l();
        Ok(Self {
            sites: order.iter().map(|&i| self.sites[i].clone()).collect(),
            sigma,
            chol,
            fitted_through: self.fitted_through,
            degenerate_sites: self.degenerate_sites.clone(),
        })
    }

    /// Writes the matrix as CSV: a `site_id,<sites...>` header then one row per
    /// site. An optional leading `# fitted_through=<ts>` line records the fit.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<correlation csv>", e);
        if let Some(ts) = self.fitted_through {
            writeln!(w, "# fitted_through={}", timefmt::format(ts)).map_err(io)?;
        }
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["site_id".to_string()];
        header.extend(self.sites.iter().cloned());
        wtr.write_record(&header)?;
        for (i, site) in self.sites.iter().enumerate() {
            let mut row = vec![site.clone()];
            row.extend((0..self.dim()).map(|j| self.sigma[(i, j)].to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(io)?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut fitted_through = None;
        let mut body = String::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<correlation csv>", e))?;
            if let Some(rest) = line.strip_prefix("# fitted_through=") {
                fitted_through = Some(timefmt::parse(rest.trim())?);
            } else if !line.starts_with('#') {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header = rdr.headers()?.clone();
        let sites: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = sites.len();
        let mut data = DMatrix::zeros(n, n);
        let mut errors = Vec::new();
        let mut rows = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if i >= n || rec.len() != n + 1 || rec.get(0) != Some(sites[i].as_str()) {
                errors.push(format!("line {}: row does not match site header", i + 2));
                continue;
            }
            for j in 0..n {
                match rec[j + 1].trim().parse::<f64>() {
                    Ok(v) => data[(i, j)] = v,
                    Err(e) => errors.push(format!("line {}: column {}: {e}", i + 2, j + 2)),
                }
            }
            rows += 1;
        }
        if rows != n {
            errors.push(format!("expected {n} matrix rows, found {rows}"));
        }
        if !errors.is_empty() {
            return Err(Error::Malformed(errors));
        }
        Ok(Self::from_matrix(sites, &data)?.with_fitted_through(fitted_through))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Estimates the copula correlation as `(1/T) Z Zᵀ`, rescaled to unit
/// diagonal and repaired to positive definiteness.
///
/// Sites with constant scores get zero correlation with every other site.
pub fn estimate_correlation(scores: &NormalScoreMatrix) -> Result<CorrelationModel> {
    let z = &scores.scores;
    let (n, t) = z.shape();
    if n == 0 {
        return Err(Error::InvalidArgument("no sites to fit".into()));
    }
    if t < 2 {
        return Err(Error::InsufficientHistory(format!(
            "{t} complete timestamp(s); need at least 2"
        )));
    }

    let second_moment = (z * z.transpose()) / t as f64;

    let degenerate: Vec<bool> = z
        .row_iter()
        .map(|row| {
            let mean = row.mean();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            var <= 1e-12 * (1.0 + mean * mean)
        })
        .collect();

    let mut corr = DMatrix::zeros(n, n);
    for i in 0..n {
        corr[(i, i)] = 1.0;
        for j in 0..i {
            let v = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                second_moment[(i, j)] / (second_moment[(i, i)] * second_moment[(j, j)]).sqrt()
            };
            corr[(i, j)] = v;
            corr[(j, i)] = v;
        }
    }

    let degenerate_sites: Vec<String> = scores
        .sites
        .iter()
        .zip(&degenerate)
        .filter(|(_, &d)| d)
        .map(|(s, _)| s.clone())
        .collect();
    if !degenerate_sites.is_empty() {
        warn!(
            "{} site(s) with constant normal scores treated as independent: {}",
            degenerate_sites.len(),
            degenerate_sites.join(", ")
        );
    }

    let mut model = CorrelationModel::from_matrix(scores.sites.clone(), &corr)?;
    model.fitted_through = scores.times.last().copied();
    model.degenerate_sites = degenerate_sites;
    Ok(model)
}

fn is_valid_correlation(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    for i in 0..n {
        if a[(i, i)] != 1.0 {
            return false;
        }
        for j in 0..i {
            if a[(i, j)] != a[(j, i)] {
                return false;
            }
        }
    }
    min_eigenvalue(a) >= MIN_EIGENVALUE
}

pub(crate) fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

fn unit_diagonal(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a[(i, i)].sqrt()).collect();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]) / (d[i] * d[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Projects a symmetric matrix onto valid correlation matrices by eigenvalue
/// clipping and unit-diagonal rescaling. Output eigenvalues are at least
/// [`MIN_EIGENVALUE`]; valid inputs are returned unchanged.
pub fn pd_repair(a: &DMatrix<f64>) -> DMatrix<f64> {
    if is_valid_correlation(a) {
        return a.clone();
    }
    let n = a.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let eig = SymmetricEigen::new(sym);

    // Rescaling to unit diagonal shrinks the smallest eigenvalue, so the
    // clip level is raised until the rescaled result clears the floor.
    let mut clip = MIN_EIGENVALUE;
    let mut out = DMatrix::identity(n, n);
    for _ in 0..64 {
        let clipped = eig.eigenvalues.map(|l| l.max(clip));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        out = unit_diagonal(&rebuilt);
        let min = min_eigenvalue(&out);
        if min >= MIN_EIGENVALUE {
            return out;
        }
        clip *= (MIN_EIGENVALUE / min.max(f64::MIN_POSITIVE)).clamp(1.01, 1e6);
    }
    warn!("pd_repair did not clear the eigenvalue floor; returning last iterate");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hours(n: usize) -> Vec<DateTime<Utc>> {
        (0..n).map(|i| DateTime::<Utc>::UNIX_EPOCH + Duration::hours(i as i64)).collect()
    }

    fn scores_from_rows(rows: &[Vec<f64>]) -> NormalScoreMatrix {
        let n = rows.len();
        let t = rows[0].len();
        NormalScoreMatrix::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            hours(t),
            DMatrix::from_fn(n, t, |i, j| rows[i][j]),
        )
        .unwrap()
    }

    fn assert_model_invariants(m: &CorrelationModel) {
        let s = m.sigma();
        let n = m.dim();
        for i in 0..n {
            assert_eq!(s[(i, i)], 1.0);
            for j in 0..n {
                assert_eq!(s[(i, j)], s[(j, i)]);
            }
        }
        assert!(min_eigenvalue(s) >= MIN_EIGENVALUE);
        let back = m.chol() * m.chol().transpose();
        assert!((back - s).abs().max() < 1e-10);
    }

    #[test]
    fn pit_at_median_and_support() {
        let c = QuantileCurve::validate_and_repair(&[(0.25, 10.0), (0.5, 20.0), (0.75, 30.0)], 0.0, 40.0)
            .unwrap();
        assert_eq!(pit_value(&c, 20.0), 0.5);
        assert_eq!(pit_value(&c, 40.0), 1.0 - PIT_EPS);
        assert_eq!(pit_value(&c, 0.0), PIT_EPS);
    }

    #[test]
    fn pit_transform_drops_incomplete_columns() {
        let ts = hours(3);
        let curve = |site: &str, t| {
            QuantileCurve::validate_and_repair(&[(0.5, 5.0)], 0.0, 10.0)
                .unwrap()
                .with_site(site)
                .with_timestamp(t)
        };
        let obs = vec![
            ObservationSeries::new("a", vec![(ts[0], 5.0), (ts[1], 2.5), (ts[2], 1.0)], 10.0).unwrap(),
            ObservationSeries::new("b", vec![(ts[0], 5.0), (ts[2], 7.5)], 10.0).unwrap(),
        ];
        let curves = vec![
            ts.iter().map(|&t| curve("a", t)).collect(),
            ts.iter().map(|&t| curve("b", t)).collect(),
        ];
        let pit = pit_transform(&obs, &curves).unwrap();
        assert_eq!(pit.times, vec![ts[0], ts[2]]);
        assert_eq!(pit.gaps.len(), 1);
        assert_eq!(pit.gaps[0].site_id, "b");
        assert!(pit.gaps[0].missing_observation && !pit.gaps[0].missing_curve);
        assert_eq!(pit.values[(0, 0)], 0.5);
        assert!((pit.values[(1, 1)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn normal_score_examples() {
        let pit = PitMatrix {
            sites: vec!["a".into()],
            times: hours(3),
            values: DMatrix::from_row_slice(1, 3, &[0.5, 0.975, 0.025]),
            gaps: vec![],
        };
        let z = normal_scores(&pit);
        assert_eq!(z.scores[(0, 0)], 0.0);
        assert!((z.scores[(0, 1)] - 1.959964).abs() < 1e-6);
        assert!((z.scores[(0, 1)] + z.scores[(0, 2)]).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_repaired_below_one() {
        let row = vec![0.3, -1.2, 0.8, 0.1, -0.5];
        let m = estimate_correlation(&scores_from_rows(&[row.clone(), row])).unwrap();
        let off = m.sigma()[(0, 1)];
        assert!(off < 1.0 && off > 1.0 - 1e-5, "off = {off}");
        assert_model_invariants(&m);
    }

    #[test]
    fn orthogonal_rows_uncorrelated() {
        let m = estimate_correlation(&scores_from_rows(&[
            vec![1.0, -1.0, 1.0, -1.0],
            vec![1.0, 1.0, -1.0, -1.0],
        ]))
        .unwrap();
        assert_eq!(m.sigma()[(0, 1)], 0.0);
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for k in 0..a.len() {
            sab += (a[k] - ma) * (b[k] - mb);
            saa += (a[k] - ma).powi(2);
            sbb += (b[k] - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    fn random_rows(seed: u64, n: usize, t: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let common: Vec<f64> = (0..t).map(|_| rng.random::<f64>() - 0.5).collect();
        (0..n)
            .map(|i| {
                (0..t)
                    .map(|k| (i as f64 * 0.3) * common[k] + rng.random::<f64>() - 0.5)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn matches_pairwise_pearson_on_centred_rows() {
        // (1/T) Z Zᵀ normalised to unit diagonal is Pearson's r once rows are centred.
        let mut rows = random_rows(7, 5, 200);
        for r in &mut rows {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            r.iter_mut().for_each(|v| *v -= m);
        }
        let model = estimate_correlation(&scores_from_rows(&rows)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { pearson(&rows[i], &rows[j]) };
                assert!((model.sigma()[(i, j)] - want).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn matches_uncentred_cosine_on_raw_rows() {
        let rows = random_rows(8, 5, 200);
        let model = estimate_correlation(&scores_from_rows(&rows)).unwrap();
        for i in 0..5 {
            for j in 0..i {
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                let want = dot(&rows[i], &rows[j]) / (dot(&rows[i], &rows[i]) * dot(&rows[j], &rows[j])).sqrt();
                assert!((model.sigma()[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_row_is_independent() {
        let m = estimate_correlation(&scores_from_rows(&[
            vec![0.2, 0.2, 0.2, 0.2],
            vec![1.0, -1.0, 0.5, 0.3],
            vec![0.9, -1.1, 0.4, 0.2],
        ]))
        .unwrap();
        assert_eq!(m.sigma()[(0, 1)], 0.0);
        assert_eq!(m.sigma()[(0, 2)], 0.0);
        assert!(m.sigma()[(1, 2)] > 0.9);
        assert_eq!(m.degenerate_sites(), &["s0".to_string()]);
        assert_model_invariants(&m);
    }

    #[test]
    fn too_few_timestamps() {
        assert!(estimate_correlation(&scores_from_rows(&[vec![0.1]])).is_err());
    }

    #[test]
    fn pd_repair_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(pd_repair(&id), id);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        let fixed = pd_repair(&bad);
        assert_eq!(fixed[(0, 0)], 1.0);
        assert_eq!(fixed[(1, 1)], 1.0);
        let off = fixed[(0, 1)];
        assert!(off < 1.0);
        // Closed-form eigenvalues of [[1, r], [r, 1]] are 1 ± r.
        assert!(1.0 - off >= MIN_EIGENVALUE);
        assert!(min_eigenvalue(&fixed) >= MIN_EIGENVALUE);

        let again = pd_repair(&fixed);
        assert!((again - &fixed).abs().max() <= 1e-12);
    }

    #[test]
    fn pd_repair_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(2..8);
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.5..1.5));
            a = (&a + a.transpose()) * 0.5;
            a.fill_diagonal(1.0);
            let r = pd_repair(&a);
            assert!(min_eigenvalue(&r) >= MIN_EIGENVALUE);
            assert!((pd_repair(&r) - &r).abs().max() <= 1e-12);
            for i in 0..n {
                assert_eq!(r[(i, i)], 1.0);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let rows = random_rows(11, 4, 100);
        let m = estimate_correlation(&scores_from_rows(&rows)).unwrap();
        let order = [2usize, 0, 3, 1];
        let permuted_rows: Vec<_> = order.iter().map(|&i| rows[i].clone()).collect();
        let mut scores = scores_from_rows(&permuted_rows);
        scores.sites = order.iter().map(|i| format!("s{i}")).collect();
        let m2 = estimate_correlation(&scores).unwrap();
        let p = m.permuted(&order).unwrap();
        assert_eq!(p.sites(), m2.sites());
        assert!((p.sigma() - m2.sigma()).abs().max() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let m = estimate_correlation(&scores_from_rows(&random_rows(5, 3, 50))).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = CorrelationModel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.sites(), m.sites());
        assert_eq!(back.sigma(), m.sigma());
        assert_eq!(back.fitted_through(), m.fitted_through());
    }
}
