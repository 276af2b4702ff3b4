//! Dense least squares via Householder QR with column pivoting.
//!
//! Every candidate model in the tree search is an ordinary Gaussian linear
//! model, so fitting, deviance, likelihood and BIC all live here.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Relative pivot tolerance used to decide numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Variance floor used when a training fit is perfect.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// What a design column encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Intercept,
    Cluster(usize),
    Leaf(usize),
    Linear(usize),
    Other(usize),
}

impl fmt::Display for ColumnRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRole::Intercept => write!(f, "intercept"),
            ColumnRole::Cluster(c) => write!(f, "cluster[{c}]"),
            ColumnRole::Leaf(m) => write!(f, "leaf[{m}]"),
            ColumnRole::Linear(k) => write!(f, "x[{k}]"),
            ColumnRole::Other(j) => write!(f, "column[{j}]"),
        }
    }
}

/// Column-major N×q design matrix with column descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    roles: Vec<ColumnRole>,
}

impl DesignMatrix {
    pub fn new(n_rows: usize) -> Self {
        Self { n_rows, columns: Vec::new(), roles: Vec::new() }
    }

    /// Builds a design from plain columns, tagging them `Other(j)`.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        let mut d = Self::new(n_rows);
        for (j, c) in columns.into_iter().enumerate() {
            d.push(c, ColumnRole::Other(j))?;
        }
        Ok(d)
    }

    pub fn push(&mut self, column: Vec<f64>, role: ColumnRole) -> Result<()> {
        if column.len() != self.n_rows {
            return Err(Error::Encoding(format!(
                "column {role} has {} rows, expected {}",
                column.len(),
                self.n_rows
            )));
        }
        self.columns.push(column);
        self.roles.push(role);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    /// Returns the design with column `j` removed.
    pub fn without_column(&self, j: usize) -> Self {
        let mut d = self.clone();
        d.columns.remove(j);
        d.roles.remove(j);
        d
    }

    /// Row-wise product `X β`.
    pub fn mul(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        for (col, &b) in self.columns.iter().zip(beta) {
            for (o, &x) in out.iter_mut().zip(col) {
                *o += x * b;
            }
        }
        out
    }
}

/// Householder QR factorisation with column pivoting.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    n_rows: usize,
    /// Reflected matrix: R in the upper triangle, Householder vectors below.
    a: Vec<Vec<f64>>,
    /// Householder scaling factors.
    tau: Vec<f64>,
    /// `perm[j]` is the original index of the column in pivot position j.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn factor(design: &DesignMatrix) -> Self {
        let n = design.n_rows();
        let q = design.n_cols();
        let mut a: Vec<Vec<f64>> = design.columns().to_vec();
        let mut perm: Vec<usize> = (0..q).collect();
        let mut tau = vec![0.0; q.min(n)];
        let steps = q.min(n);
        let mut largest = 0.0_f64;
        let mut rank = 0;
        for k in 0..steps {
            // choose the remaining column with the largest trailing norm
            let (best, best_norm) = (k..q)
                .map(|j| (j, a[j][k..].iter().map(|v| v * v).sum::<f64>()))
                .fold((k, -1.0), |acc, (j, s)| if s > acc.1 { (j, s) } else { acc });
            a.swap(k, best);
            perm.swap(k, best);
            let norm = best_norm.sqrt();
            if k == 0 {
                largest = norm;
            }
            if norm <= RANK_TOLERANCE * largest || norm == 0.0 {
                break;
            }
            rank += 1;
            let col = &mut a[k];
            let alpha = if col[k] > 0.0 { -norm } else { norm };
            let v0 = col[k] - alpha;
            // normalise so v[k] = 1
            for v in col[k + 1..].iter_mut() {
                *v /= v0;
            }
            tau[k] = (alpha - col[k]) / alpha;
            col[k] = alpha;
            let (head, tail) = a.split_at_mut(k + 1);
            let v = &head[k];
            for other in tail.iter_mut() {
                let mut dot = other[k];
                for i in k + 1..n {
                    dot += v[i] * other[i];
                }
                dot *= tau[k];
                other[k] -= dot;
                for i in k + 1..n {
                    other[i] -= dot * v[i];
                }
            }
        }
        Self { n_rows: n, a, tau, perm, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Original indices of columns beyond the numerical rank.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut d = self.perm[self.rank..].to_vec();
        d.sort_unstable();
        d
    }

    fn apply_qt(&self, y: &mut [f64]) {
        for k in 0..self.rank {
            let v = &self.a[k];
            let mut dot = y[k];
            for i in k + 1..self.n_rows {
                dot += v[i] * y[i];
            }
            dot *= self.tau[k];
            y[k] -= dot;
            for i in k + 1..self.n_rows {
                y[i] -= dot * v[i];
            }
        }
    }

    fn apply_q(&self, y: &mut [f64]) {
        for k in (0..self.rank).rev() {
            let v = &self.a[k];
            let mut dot = y[k];
            for i in k + 1..self.n_rows {
                dot += v[i] * y[i];
            }
            dot *= self.tau[k];
            y[k] -= dot;
            for i in k + 1..self.n_rows {
                y[i] -= dot * v[i];
            }
        }
    }

    /// Least-squares coefficients in original column order (full rank only).
    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let r = self.rank;
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let mut z = vec![0.0; r];
        for k in (0..r).rev() {
            let mut s = qty[k];
            for j in k + 1..r {
                s -= self.a[j][k] * z[j];
            }
            z[k] = s / self.a[k][k];
        }
        let mut beta = vec![0.0; self.perm.len()];
        for (k, &j) in self.perm[..r].iter().enumerate() {
            beta[j] = z[k];
        }
        beta
    }

    /// Orthonormal basis (thin Q) of the column space, one vector per rank.
    pub fn thin_q(&self) -> Vec<Vec<f64>> {
        (0..self.rank)
            .map(|k| {
                let mut e = vec![0.0; self.n_rows];
                e[k] = 1.0;
                self.apply_q(&mut e);
                e
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// ML variance estimate `rss / N`.
    pub sigma2: f64,
    pub loglik: f64,
    pub q: usize,
    pub n_obs: usize,
    /// Set when `sigma2` fell below [`SIGMA2_FLOOR`], which is then used for likelihoods.
    pub sigma2_floored: bool,
}

impl FitResult {
    /// Variance used in likelihood evaluations.
    pub fn effective_sigma2(&self) -> f64 {
        if self.sigma2_floored {
            SIGMA2_FLOOR
        } else {
            self.sigma2
        }
    }
}

/// Gaussian log-likelihood of residuals with variance `sigma2`.
pub fn gaussian_loglik(residuals: &[f64], sigma2: f64) -> f64 {
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    -0.5 * residuals.len() as f64 * (2.0 * PI * sigma2).ln() - ss / (2.0 * sigma2)
}

/// Ordinary least squares by rank-revealing QR; rank-deficient designs are rejected.
pub fn ols_fit(design: &DesignMatrix, y: &[f64]) -> Result<FitResult> {
    let n = design.n_rows();
    let q = design.n_cols();
    if y.len() != n {
        return Err(Error::Validation(format!("outcome has {} rows, design {n}", y.len())));
    }
    if q == 0 {
        return Err(Error::Encoding("design has no columns".into()));
    }
    if n < q {
        return Err(Error::Validation(format!("{n} observations for {q} parameters")));
    }
    let qr = PivotedQr::factor(design);
    if qr.rank() < q {
        return Err(Error::RankDeficient {
            dependent: qr
                .dependent_columns()
                .into_iter()
                .map(|j| design.roles()[j].to_string())
                .collect(),
        });
    }
    let coefficients = qr.solve(y);
    let fitted = design.mul(&coefficients);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let sigma2 = rss / n as f64;
    let sigma2_floored = sigma2 < SIGMA2_FLOOR;
    let loglik = gaussian_loglik(&residuals, if sigma2_floored { SIGMA2_FLOOR } else { sigma2 });
    Ok(FitResult { coefficients, residuals, rss, sigma2, loglik, q, n_obs: n, sigma2_floored })
}

/// Gaussian deviance up to an affine transform: the residual sum of squares.
pub fn deviance(fit: &FitResult) -> f64 {
    fit.rss
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveLoglik {
    pub value: f64,
    pub sigma2_floored: bool,
}

/// Sum of Gaussian log-densities of held-out rows under the training fit.
pub fn predictive_loglik(fit: &FitResult, test: &DesignMatrix, y_test: &[f64]) -> Result<PredictiveLoglik> {
    if test.n_cols() != fit.coefficients.len() {
        return Err(Error::Validation(format!(
            "test design has {} columns, fit has {}",
            test.n_cols(),
            fit.coefficients.len()
        )));
    }
    if y_test.len() != test.n_rows() {
        return Err(Error::Validation("test outcome and design lengths differ".into()));
    }
    let pred = test.mul(&fit.coefficients);
    let residuals: Vec<f64> = y_test.iter().zip(&pred).map(|(a, b)| a - b).collect();
    Ok(PredictiveLoglik {
        value: gaussian_loglik(&residuals, fit.effective_sigma2()),
        sigma2_floored: fit.sigma2_floored,
    })
}

/// Schwarz criterion `-2 loglik + q log N`.
pub fn bic(fit: &FitResult) -> f64 {
    -2.0 * fit.loglik + fit.q as f64 * (fit.n_obs as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(cols: Vec<Vec<f64>>) -> DesignMatrix {
        DesignMatrix::from_columns(cols).unwrap()
    }

    #[test]
    fn intercept_only() {
        let f = ols_fit(&design(vec![vec![1.0; 3]]), &[1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(f.coefficients[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(f.rss, 2.0, epsilon = 1e-14);
        assert_relative_eq!(deviance(&f), 2.0, epsilon = 1e-14);
        let s2: f64 = 2.0 / 3.0;
        assert_relative_eq!(f.loglik, -1.5 * ((2.0 * PI * s2).ln() + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn duplicate_intercept_is_rank_deficient() {
        let err = ols_fit(&design(vec![vec![1.0; 3], vec![1.0; 3]]), &[1.0, 2.0, 3.0]).unwrap_err();
        match err {
            Error::RankDeficient { dependent } => assert_eq!(dependent.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn saturated_group_means() {
        let d = design(vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let f = ols_fit(&d, &[1.0, 1.0, 5.0]).unwrap();
        assert_relative_eq!(f.coefficients[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(f.coefficients[1], 5.0, epsilon = 1e-14);
        assert!(f.rss < 1e-28);
        assert!(f.sigma2_floored);
        assert_eq!(deviance(&f), f.rss);
    }

    #[test]
    fn adding_columns_never_increases_deviance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
        let mut cols = vec![vec![1.0; 30]];
        let mut last = f64::INFINITY;
        for _ in 0..5 {
            let f = ols_fit(&design(cols.clone()), &y).unwrap();
            assert!(f.rss <= last + 1e-12);
            last = f.rss;
            cols.push((0..30).map(|_| rng.sample(StandardNormal)).collect());
        }
    }

    #[test]
    fn predictive_loglik_examples() {
        let fit = FitResult {
            coefficients: vec![2.0],
            residuals: vec![],
            rss: 3.0,
            sigma2: 1.0,
            loglik: 0.0,
            q: 1,
            n_obs: 3,
            sigma2_floored: false,
        };
        let one = predictive_loglik(&fit, &design(vec![vec![1.0]]), &[2.0]).unwrap();
        assert_relative_eq!(one.value, -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
        let single = predictive_loglik(&fit, &design(vec![vec![1.0]]), &[3.1]).unwrap();
        let double = predictive_loglik(&fit, &design(vec![vec![1.0, 1.0]]), &[3.1, 3.1]).unwrap();
        assert_eq!(double.value, 2.0 * single.value);
    }

    #[test]
    fn predictive_loglik_matches_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x + rng.sample::<f64, _>(StandardNormal)).collect();
        let d = design(vec![vec![1.0; 20], xs.clone()]);
        let fit = ols_fit(&d, &y).unwrap();
        let xt: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
        let yt: Vec<f64> = xt.iter().map(|x| 1.0 + 2.0 * x + rng.sample::<f64, _>(StandardNormal)).collect();
        let got = predictive_loglik(&fit, &design(vec![vec![1.0; 20], xt.clone()]), &yt).unwrap();
        // density evaluated term by term
        let s2 = fit.rss / 20.0;
        let oracle: f64 = xt
            .iter()
            .zip(&yt)
            .map(|(x, yv)| {
                let mu = fit.coefficients[0] + fit.coefficients[1] * x;
                (1.0 / (2.0 * PI * s2).sqrt() * (-(yv - mu).powi(2) / (2.0 * s2)).exp()).ln()
            })
            .sum();
        assert_relative_eq!(got.value, oracle, epsilon = 1e-10);
    }

    #[test]
    fn perfect_training_fit_floors_variance() {
        let d = design(vec![vec![1.0, 1.0]]);
        let fit = ols_fit(&d, &[4.0, 4.0]).unwrap();
        let p = predictive_loglik(&fit, &d, &[4.0, 4.0]).unwrap();
        assert!(p.sigma2_floored);
        assert!(p.value.is_finite());
    }

    #[test]
    fn bic_examples() {
        let f = ols_fit(&design(vec![vec![1.0; 3]]), &[1.0, 2.0, 3.0]).unwrap();
        let loglik = -1.5 * ((2.0 * PI * 2.0 / 3.0).ln() + 1.0);
        assert_relative_eq!(bic(&f), -2.0 * loglik + 3f64.ln(), epsilon = 1e-12);
        let mut g = f.clone();
        g.q += 1;
        assert_relative_eq!(bic(&g) - bic(&f), 3f64.ln(), epsilon = 1e-12);
        assert!(bic(&f) < bic(&g));
    }

    #[test]
    fn matches_normal_equations_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..500 {
            let q = rng.random_range(1..=5);
            let n = 50;
            let mut cols = vec![vec![1.0; n]];
            for _ in 1..q {
                cols.push((0..n).map(|_| rng.sample(StandardNormal)).collect());
            }
            let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0 + 1.0).collect();
            let fit = ols_fit(&design(cols.clone()), &y).unwrap();
            let x = DMatrix::from_fn(n, q, |i, j| cols[j][i]);
            let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
            let beta = xtx_inv * x.transpose() * DVector::from_vec(y.clone());
            for j in 0..q {
                let scale = beta[j].abs().max(1.0);
                assert!((fit.coefficients[j] - beta[j]).abs() / scale < 1e-8);
            }
        }
    }

    #[test]
    fn loglik_invariant_to_column_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..25).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let y: Vec<f64> = (0..25).map(|_| rng.sample(StandardNormal)).collect();
        let a = ols_fit(&design(cols.clone()), &y).unwrap();
        let mut rev = cols.clone();
        rev.reverse();
        let b = ols_fit(&design(rev), &y).unwrap();
        assert_relative_eq!(a.loglik, b.loglik, max_relative = 1e-12);
    }

    #[test]
    fn thin_q_is_orthonormal_and_spans_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..10).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let d = design(cols.clone());
        let q = PivotedQr::factor(&d).thin_q();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = q[a].iter().zip(&q[b]).map(|(x, y)| x * y).sum();
                assert_relative_eq!(dot, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        // projecting a design column onto Q reproduces it
        for c in &cols {
            let mut proj = vec![0.0; 10];
            for qk in &q {
                let dot: f64 = qk.iter().zip(c).map(|(x, y)| x * y).sum();
                for (p, v) in proj.iter_mut().zip(qk) {
                    *p += dot * v;
                }
            }
            for (p, v) in proj.iter().zip(c) {
                assert_relative_eq!(p, v, epsilon = 1e-12);
            }
        }
    }
}
