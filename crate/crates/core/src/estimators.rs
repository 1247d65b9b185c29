//! Plug-in conditional probability estimators: local polynomial regression,
//! one-vs-all reduction, empirical marginals and probability tables.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constraints::ClassProbModel;
use crate::error::{invalid, Error, Result};
use crate::math::norm_1_to_2;
use crate::problem::{Problem, WeightedSupport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    Box,
    #[default]
    Epanechnikov,
    Gaussian,
}

/// Radial kernel `K(u)` evaluated at `‖u‖` with `u = (xᵢ − x)/h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(shape: KernelShape, bandwidth: f64) -> Result<Self> {
        if bandwidth > 0.0 && bandwidth.is_finite() {
            Ok(Self { shape, bandwidth })
        } else {
            Err(invalid("bandwidth", format!("must be positive and finite, got {bandwidth}")))
        }
    }

    fn weight(&self, sq_dist: f64) -> f64 {
        let r2 = sq_dist / (self.bandwidth * self.bandwidth);
        match self.shape {
            KernelShape::Box => {
                if r2 <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelShape::Epanechnikov => (1.0 - r2).max(0.0),
            KernelShape::Gaussian => (-0.5 * r2).exp(),
        }
    }
}

/// Rule-of-thumb bandwidth `n^{−1/(2ℓ+2+d)}`.
pub fn default_bandwidth(n: usize, degree: usize, dim: usize) -> f64 {
    (n.max(1) as f64).powf(-1.0 / (2 * degree + 2 + dim) as f64)
}

/// Exponent vectors of all monomials in `d` variables of total degree
/// `≤ degree`, constant first.
fn monomials(d: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(d: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(d, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, degree as u32, &mut Vec::with_capacity(d), &mut out);
    out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    out
}

/// Kernel-weighted least squares over monomials of `(xᵢ − x)/h`.
#[derive(Debug, Clone)]
struct LocalPoly {
    degree: usize,
    kernel: KernelSpec,
    xs: Vec<Vec<f64>>,
    exps: Vec<Vec<u32>>,
}

impl LocalPoly {
    fn new(degree: usize, kernel: KernelSpec, xs: Vec<Vec<f64>>) -> Result<Self> {
        let d = xs.first().ok_or(Error::EmptyBatch)?.len();
        if xs.iter().any(|x| x.len() != d) {
            return Err(Error::ShapeMismatch("training features have inconsistent dimension".into()));
        }
        if xs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite training feature".into()));
        }
        Ok(Self { degree, kernel, exps: monomials(d, degree), xs })
    }

    fn dim(&self) -> usize {
        self.xs[0].len()
    }

    /// Intercepts `θ̂_x(0)` for every column of `targets` (`n × q`), or
    /// `None` when the normal equations are numerically singular.
    fn intercepts(&self, x: &[f64], targets: &DMatrix<f64>) -> Result<Option<Vec<f64>>> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!("query has dimension {}, model {}", x.len(), self.dim())));
        }
        let p = self.exps.len();
        let q = targets.ncols();
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DMatrix::<f64>::zeros(p, q);
        let mut phi = vec![0.0; p];
        let h = self.kernel.bandwidth;
        for (i, xi) in self.xs.iter().enumerate() {
            let sq: f64 = xi.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            let w = self.kernel.weight(sq);
            if w == 0.0 {
                continue;
            }
            for (k, e) in self.exps.iter().enumerate() {
                phi[k] = e.iter().zip(xi.iter().zip(x)).map(|(&p, (a, b))| ((a - b) / h).powi(p as i32)).product();
            }
            for r in 0..p {
                let wr = w * phi[r];
                for c in 0..p {
                    gram[(r, c)] += wr * phi[c];
                }
                for c in 0..q {
                    rhs[(r, c)] += wr * targets[(i, c)];
                }
            }
        }
        let trace = gram.trace();
        if !(trace > 0.0) {
            return Ok(None);
        }
        let min_eig = gram.clone().symmetric_eigenvalues().min();
        if min_eig < 1e-10 * trace {
            return Ok(None);
        }
        let Some(chol) = gram.cholesky() else { return Ok(None) };
        let sol = chol.solve(&rhs);
        Ok(Some((0..q).map(|c| sol[(0, c)]).collect()))
    }
}

/// Local polynomial regression of a scalar response; degree 0 is the
/// Nadaraya–Watson estimator.
#[derive(Debug, Clone)]
pub struct LocalPolyModel {
    inner: LocalPoly,
    ys: DMatrix<f64>,
}

impl LocalPolyModel {
    pub fn new(degree: usize, kernel: KernelSpec, xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch(format!("{} features, {} responses", xs.len(), ys.len())));
        }
        if ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite response".into()));
        }
        let ys = DMatrix::from_vec(ys.len(), 1, ys);
        Ok(Self { inner: LocalPoly::new(degree, kernel, xs)?, ys })
    }

    pub fn degree(&self) -> usize {
        self.inner.degree
    }

    /// `θ̂_x(0)` without clipping; zero when the fit is singular.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        Ok(self.inner.intercepts(x, &self.ys)?.map_or(0.0, |v| v[0]))
    }

    /// [`predict_raw`](Self::predict_raw) clipped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_raw(x)?.clamp(0.0, 1.0))
    }
}

/// One local polynomial fit per class on `1{yᵢ = y}`, renormalized.
#[derive(Debug, Clone)]
pub struct OneVsAll {
    inner: LocalPoly,
    indicators: DMatrix<f64>,
}

impl OneVsAll {
    pub fn fit(labels: &[usize], features: Vec<Vec<f64>>, k: usize, degree: usize, kernel: KernelSpec) -> Result<Self> {
        if k < 2 {
            return Err(invalid("K", format!("need at least two classes, got {k}")));
        }
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if labels.len() != features.len() {
            return Err(Error::ShapeMismatch(format!("{} labels, {} feature rows", labels.len(), features.len())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Domain(format!("label {y} outside 0..{k}")));
        }
        let indicators = DMatrix::from_fn(labels.len(), k, |i, y| if labels[i] == y { 1.0 } else { 0.0 });
        Ok(Self { inner: LocalPoly::new(degree, kernel, features)?, indicators })
    }

    /// Per-class clipped estimates before renormalization.
    pub fn predict_unnormalized(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.indicators.ncols();
        Ok(match self.inner.intercepts(x, &self.indicators)? {
            Some(v) => v.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
            None => vec![0.0; k],
        })
    }
}

impl ClassProbModel<Vec<f64>> for OneVsAll {
    fn num_classes(&self) -> usize {
        self.indicators.ncols()
    }

    fn predict(&self, x: &Vec<f64>) -> Result<Vec<f64>> {
        let mut p = self.predict_unnormalized(x)?;
        let s: f64 = p.iter().sum();
        if s > 0.0 {
            p.iter_mut().for_each(|v| *v /= s);
        } else {
            let k = p.len() as f64;
            p.iter_mut().for_each(|v| *v = 1.0 / k);
        }
        Ok(p)
    }
}

/// Empirical frequencies of `0..k`.
pub fn empirical_marginals(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut m = vec![0.0; k];
    for &y in labels {
        *m.get_mut(y).ok_or_else(|| Error::Domain(format!("label {y} outside 0..{k}")))? += 1.0;
    }
    let n = labels.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    Ok(m)
}

/// Probability vectors tabulated per support point, indexed by position.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ProbTable {
    /// Rows must be probability vectors up to `1e-6`; they are renormalized.
    pub fn new(header: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = header.len();
        if k == 0 {
            return Err(Error::Schema("probability table has no columns".into()));
        }
        if rows.is_empty() {
            return Err(Error::EmptyFile);
        }
        let mut out = Vec::with_capacity(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != k {
                return Err(Error::Schema(format!("row {i} has {} entries, header has {k}", r.len())));
            }
            let s: f64 = r.iter().sum();
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::Domain(format!("row {i} is not a probability vector (sum {s})")));
            }
            out.push(r.into_iter().map(|v| v / s).collect());
        }
        Ok(Self { header, rows: out })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .zip(&header)
                .map(|(v, c)| {
                    v.trim().parse::<f64>().map_err(|_| Error::NonNumeric { row: i + 1, column: c.clone(), value: v.to_owned() })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(header, rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

impl ClassProbModel<usize> for ProbTable {
    fn num_classes(&self) -> usize {
        self.header.len()
    }

    fn predict(&self, x: &usize) -> Result<Vec<f64>> {
        self.rows
            .get(*x)
            .cloned()
            .ok_or_else(|| Error::Domain(format!("support index {x} outside table of {} rows", self.rows.len())))
    }
}

/// `(E‖L − L̂‖_∞, √E‖C − Ĉ‖²_{1→2})` over `support`.
pub fn estimation_errors<X>(estimated: &Problem<X>, truth: &Problem<X>, support: &WeightedSupport<X>) -> Result<(f64, f64)> {
    if estimated.num_actions() != truth.num_actions() || estimated.num_constraints() != truth.num_constraints() {
        return Err(Error::ShapeMismatch(format!(
            "estimated problem is {}×{}, true problem {}×{}",
            estimated.num_constraints(),
            estimated.num_actions(),
            truth.num_constraints(),
            truth.num_actions()
        )));
    }
    let mut dl = 0.0;
    let mut dc = 0.0;
    for (x, w) in support.iter() {
        let le = estimated.loss.eval(x)?;
        let lt = truth.loss.eval(x)?;
        dl += w * le.iter().zip(&lt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let diff: DMatrix<f64> = estimated.constraints.eval(x)? - truth.constraints.eval(x)?;
        let n = norm_1_to_2(&diff);
        dc += w * n * n;
    }
    Ok((dl, dc.sqrt()))
}

/// Mean absolute error `Σᵢ wᵢ |η̂(xᵢ) − η(xᵢ)|` of a scalar estimate.
pub fn l1_error<F, G>(estimate: F, truth: G, points: &[Vec<f64>]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> f64,
{
    if points.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = 0.0;
    for x in points {
        acc += (estimate(x)? - truth(x)).abs();
    }
    Ok(acc / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_churn, build_reject_controlled_error, build_reject_controlled_rejection, FnProbModel, SharedProbModel};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn epan(h: f64) -> KernelSpec {
        KernelSpec::new(KernelShape::Epanechnikov, h).unwrap()
    }

    #[test]
    fn monomial_basis() {
        assert_eq!(monomials(1, 0), vec![vec![0]]);
        assert_eq!(monomials(2, 1), vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 2).len(), 10);
    }

    #[test]
    fn degree_zero_is_kernel_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for shape in [KernelShape::Box, KernelShape::Epanechnikov, KernelShape::Gaussian] {
            let xs: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
            let ys: Vec<f64> = (0..50).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
            let k = KernelSpec::new(shape, 0.5).unwrap();
            let m = LocalPolyModel::new(0, k, xs.clone(), ys.clone()).unwrap();
            let q = [0.4, 0.6];
            let (mut num, mut den) = (0.0, 0.0);
            for (x, y) in xs.iter().zip(&ys) {
                let sq = (x[0] - q[0]).powi(2) + (x[1] - q[1]).powi(2);
                let w = k.weight(sq);
                num += w * y;
                den += w;
            }
            assert_abs_diff_eq!(m.predict_raw(&q).unwrap(), num / den, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_labels_give_one() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
        let m = LocalPolyModel::new(2, epan(0.3), xs, vec![1.0; 20]).unwrap();
        assert_abs_diff_eq!(m.predict(&[0.5]).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn degree_one_recovers_lines() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.2 + 0.5 * x[0]).collect();
        let m = LocalPolyModel::new(1, epan(0.2), xs, ys).unwrap();
        for q in [0.3, 0.5, 0.71] {
            assert_abs_diff_eq!(m.predict_raw(&[q]).unwrap(), 0.2 + 0.5 * q, epsilon = 1e-8);
        }
        // a plane in two dimensions
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.1 + 0.3 * x[0] - 0.2 * x[1]).collect();
        let m = LocalPolyModel::new(1, KernelSpec::new(KernelShape::Gaussian, 0.3).unwrap(), xs, ys).unwrap();
        assert_abs_diff_eq!(m.predict_raw(&[0.5, 0.5]).unwrap(), 0.1 + 0.15 - 0.1, epsilon = 1e-8);
    }

    #[test]
    fn singular_fits_return_zero() {
        // no neighbor within the bandwidth
        let m = LocalPolyModel::new(0, epan(0.1), vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(m.predict(&[0.5]).unwrap(), 0.0);
        // one neighbor cannot identify a slope
        let m = LocalPolyModel::new(1, epan(0.2), vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(m.predict(&[0.05]).unwrap(), 0.0);
        // duplicated design points: rank one
        let m = LocalPolyModel::new(1, epan(1.0), vec![vec![0.2]; 5], vec![1.0; 5]).unwrap();
        assert_eq!(m.predict(&[0.2]).unwrap(), 0.0);
    }

    #[test]
    fn outputs_are_clipped() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 30.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| if x[0] > 0.8 { 1.0 } else { 0.0 }).collect();
        let m = LocalPolyModel::new(2, epan(0.15), xs, ys).unwrap();
        for i in 0..=50 {
            let p = m.predict(&[i as f64 / 50.0]).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn huge_bandwidth_gives_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let ys: Vec<f64> = (0..200).map(|_| f64::from(rng.random_bool(0.3) as u8)).collect();
        let mean = ys.iter().sum::<f64>() / 200.0;
        let m = LocalPolyModel::new(0, epan(1e6), xs, ys).unwrap();
        assert_abs_diff_eq!(m.predict(&[0.2]).unwrap(), mean, epsilon = 1e-6);
    }

    #[test]
    fn one_vs_all_examples() {
        // separated classes, tiny bandwidth
        let xs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let ova = OneVsAll::fit(&[0, 1, 2], xs, 3, 0, epan(0.1)).unwrap();
        let p = ova.predict(&vec![1.0]).unwrap();
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-12);
        // far from everything: uniform fallback
        let p = ova.predict(&vec![10.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));

        // labels independent of x
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let labels: Vec<usize> = (0..n).map(|_| if rng.random_bool(0.3) { 0 } else if rng.random_bool(0.5) { 1 } else { 2 }).collect();
        let freq = empirical_marginals(&labels, 3).unwrap();
        let ova = OneVsAll::fit(&labels, xs, 3, 0, epan(0.3)).unwrap();
        let p = ova.predict(&vec![0.5]).unwrap();
        for y in 0..3 {
            assert!((p[y] - freq[y]).abs() < 0.05);
        }
    }

    #[test]
    fn one_vs_all_binary_matches_single_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let labels: Vec<usize> = xs.iter().map(|x| usize::from(rng.random_bool(0.2 + 0.6 * x[0]))).collect();
        let k = epan(0.2);
        let ova = OneVsAll::fit(&labels, xs.clone(), 2, 1, k).unwrap();
        let eta = LocalPolyModel::new(1, k, xs, labels.iter().map(|&y| y as f64).collect()).unwrap();
        for q in [0.1, 0.5, 0.9] {
            let raw = ova.predict_unnormalized(&[q]).unwrap();
            let e = eta.predict(&[q]).unwrap();
            assert_abs_diff_eq!(raw[1], e, epsilon = 1e-10);
            assert_abs_diff_eq!(raw[0], (1.0 - eta.predict_raw(&[q]).unwrap()).clamp(0.0, 1.0), epsilon = 1e-10);
        }
    }

    #[test]
    fn l1_error_shrinks_with_n() {
        let eta = |x: &[f64]| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * x[0]).sin();
        let grid: Vec<Vec<f64>> = (1..100).map(|i| vec![i as f64 / 100.0]).collect();
        let mut ratios = 0.0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut err = |n: usize| {
                let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
                let ys: Vec<f64> = xs.iter().map(|x| f64::from(rng.random_bool(eta(x)) as u8)).collect();
                let m = LocalPolyModel::new(1, epan(default_bandwidth(n, 1, 1)), xs, ys).unwrap();
                l1_error(|x| m.predict(x), eta, &grid).unwrap()
            };
            let small = err(250);
            let large = err(1000);
            ratios += large / small;
        }
        assert!(ratios / 10.0 < 1.0);
    }

    #[test]
    fn prob_table_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "0,1\n0.25,0.75\n1,0\n").unwrap();
        let t = ProbTable::read_csv(&path).unwrap();
        assert_eq!(t.num_classes(), 2);
        assert_eq!(t.predict(&0).unwrap(), vec![0.25, 0.75]);
        assert!(t.predict(&2).is_err());
        let out = dir.path().join("q.csv");
        t.write_csv(&out).unwrap();
        assert_eq!(ProbTable::read_csv(&out).unwrap(), t);

        std::fs::write(&path, "0,1\n0.25,abc\n").unwrap();
        assert!(matches!(ProbTable::read_csv(&path), Err(Error::NonNumeric { row: 1, .. })));
        std::fs::write(&path, "0,1\n0.5,0.6\n").unwrap();
        assert!(matches!(ProbTable::read_csv(&path), Err(Error::Domain(_))));
    }

    fn table(rows: Vec<Vec<f64>>) -> SharedProbModel<usize> {
        Arc::new(FnProbModel::new(rows[0].len(), move |&i: &usize| Ok(rows[i].clone())))
    }

    #[test]
    fn estimation_error_examples() {
        let rows = vec![vec![0.6, 0.4], vec![0.3, 0.7]];
        let support = WeightedSupport::new(vec![0, 1], vec![0.25, 0.75]).unwrap();
        let truth = build_reject_controlled_rejection(table(rows.clone()), 2, 0.2).unwrap();
        assert_eq!(estimation_errors(&truth, &truth, &support).unwrap(), (0.0, 0.0));

        // L̂ = L + 0.1 on one action everywhere
        let shifted = Problem::new(
            truth.actions.clone(),
            {
                let l = truth.loss.clone();
                crate::problem::LossOracle::new(3, move |x: &usize| {
                    let mut v = l.eval(x)?;
                    v[1] += 0.1;
                    Ok(v)
                })
            },
            truth.constraints.clone(),
        )
        .unwrap();
        let (dl, dc) = estimation_errors(&shifted, &truth, &support).unwrap();
        assert_abs_diff_eq!(dl, 0.1, epsilon = 1e-15);
        assert_eq!(dc, 0.0);

        // random perturbation against a brute-force loop
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let est_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let e = rng.random_range(-0.2..0.2);
                vec![r[0] + e, r[1] - e]
            })
            .collect();
        let g: crate::constraints::LabelFn<usize> = Arc::new(|&i: &usize| Ok(i));
        let t2 = build_churn(table(rows.clone()), Arc::clone(&g), 2, 0.3).unwrap();
        let e2 = build_churn(table(est_rows.clone()), g, 2, 0.3).unwrap();
        let (dl, dc) = estimation_errors(&e2, &t2, &support).unwrap();
        let mut bl = 0.0;
        for (i, w) in [0.25, 0.75].iter().enumerate() {
            let m = (0..2).map(|a| (rows[i][a] - est_rows[i][a]).abs()).fold(0.0, f64::max);
            bl += w * m;
        }
        assert_abs_diff_eq!(dl, bl, epsilon = 1e-15);
        assert_eq!(dc, 0.0);

        let t3 = build_reject_controlled_error(table(rows.clone()), 2, 0.1).unwrap();
        let e3 = build_reject_controlled_error(table(est_rows.clone()), 2, 0.1).unwrap();
        let (dl, dc) = estimation_errors(&e3, &t3, &support).unwrap();
        let mut bc = 0.0;
        for (i, w) in [0.25, 0.75].iter().enumerate() {
            let m = (0..2).map(|a| (rows[i][a] - est_rows[i][a]).abs()).fold(0.0, f64::max);
            bc += w * m * m;
        }
        assert_eq!(dl, 0.0);
        assert_abs_diff_eq!(dc, f64::sqrt(bc), epsilon = 1e-15);

        let std = crate::constraints::build_standard(table(rows), 2).unwrap();
        assert!(matches!(estimation_errors(&std, &t2, &support), Err(Error::ShapeMismatch(_))));
    }
}
