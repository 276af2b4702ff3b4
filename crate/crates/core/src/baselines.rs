//! Reference models: the intercept-only model, linear terms with backward
//! elimination, the random-intercept mixed model, and fits of the true
//! structure.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};
use crate::linfit::{ols_fit, ColumnRole, DesignMatrix};
use crate::num;
use crate::pruning::fit_pruned;
use crate::stepwise::{grow_path, FitConfig};
use crate::trees::{ModelKind, TreeModel};

/// Intercept-only model.
pub fn fit_null(d: &ClusteredDataset) -> Result<TreeModel> {
    let cfg = FitConfig { model: ModelKind::Null, min_bucket: Some(1), ..FitConfig::default() };
    let mut m = grow_path(d, &cfg)?.models.pop().expect("root model");
    m.config = Some(cfg);
    Ok(m)
}

/// Pruned unit tree with linear covariates, then backward elimination by BIC.
pub fn fit_ltscb(d: &ClusteredDataset, cfg: &FitConfig) -> Result<TreeModel> {
    fit_pruned(d, &FitConfig { model: ModelKind::Ltscb, ..cfg.clone() })
}

/// `-2 loglik + q log N` with the ML variance `rss / N`.
pub fn tree_bic(m: &TreeModel) -> f64 {
    let n = m.n_obs as f64;
    let q = m.n_clusters() + m.covariate_tree.n_leaves() - 1 + m.linear_terms.len();
    let sigma2 = (m.rss / n).max(crate::linfit::SIGMA2_FLOOR);
    n * ((2.0 * PI * sigma2).ln() + 1.0) + q as f64 * n.ln()
}

/// Repeatedly drops the linear term whose removal lowers BIC the most,
/// keeping the tree structure fixed. Ties go to the earliest term.
pub fn eliminate_linear_terms(d: &ClusteredDataset, mut model: TreeModel) -> Result<TreeModel> {
    let mut bic = tree_bic(&model);
    while !model.linear_terms.is_empty() {
        let mut best: Option<(f64, TreeModel)> = None;
        for j in 0..model.linear_terms.len() {
            let mut linear = model.linear_terms.clone();
            linear.remove(j);
            let cand = TreeModel::fit(
                d,
                model.kind,
                model.covariate_tree.clone(),
                model.unit_tree.clone(),
                linear,
                Some(model.reference_leaf),
            )?;
            let b = tree_bic(&cand);
            if best.as_ref().is_none_or(|(v, _)| b < *v) {
                best = Some((b, cand));
            }
        }
        let (b, cand) = best.expect("at least one term");
        if b >= bic {
            break;
        }
        bic = b;
        model = cand;
    }
    Ok(model)
}

/// Profiled random-intercept fit on a fixed design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmCore {
    #[serde(with = "num::vec_str")]
    pub beta: Vec<f64>,
    #[serde(with = "num::f64_str")]
    pub sigma2_e: f64,
    #[serde(with = "num::f64_str")]
    pub sigma2_b: f64,
    /// Variance ratio `σ²_b / σ²_ε`.
    #[serde(with = "num::f64_str")]
    pub psi: f64,
    #[serde(with = "num::f64_str")]
    pub loglik: f64,
    /// Predicted random intercept per unit.
    #[serde(with = "num::vec_str")]
    pub blup: Vec<f64>,
    /// The optimum sat on the search boundary even after widening it.
    pub at_boundary: bool,
}

const PSI_UPPER: f64 = 1e4;
const GRID: usize = 21;

struct Profile<'a> {
    design: &'a DesignMatrix,
    y: &'a [f64],
    units: &'a [usize],
    sizes: Vec<usize>,
}

impl Profile<'_> {
    fn transformed(&self, psi: f64) -> (DesignMatrix, Vec<f64>) {
        let lambda: Vec<f64> = self.sizes.iter().map(|&n| 1.0 - 1.0 / (1.0 + psi * n as f64).sqrt()).collect();
        let shrink = |v: &[f64]| -> Vec<f64> {
            let mut sums = vec![0.0; self.sizes.len()];
            for (x, &u) in v.iter().zip(self.units) {
                sums[u] += x;
            }
            v.iter()
                .zip(self.units)
                .map(|(x, &u)| x - lambda[u] * sums[u] / self.sizes[u] as f64)
                .collect()
        };
        let mut x = DesignMatrix::new(self.y.len());
        for (col, role) in self.design.columns().iter().zip(self.design.roles()) {
            x.push(shrink(col), *role).expect("same row count");
        }
        (x, shrink(self.y))
    }

    fn fit(&self, psi: f64) -> Result<(f64, Vec<f64>, f64)> {
        let (x, y) = self.transformed(psi);
        let f = ols_fit(&x, &y)?;
        let n = self.y.len() as f64;
        let sigma2 = (f.rss / n).max(crate::linfit::SIGMA2_FLOOR);
        let logdet: f64 = self.sizes.iter().map(|&s| (1.0 + psi * s as f64).ln()).sum();
        let ll = -0.5 * n * ((2.0 * PI * sigma2).ln() + 1.0) - 0.5 * logdet;
        Ok((ll, f.coefficients, sigma2))
    }

    fn loglik_tau(&self, tau: f64) -> Result<f64> {
        Ok(self.fit(tau.exp_m1())?.0)
    }

    /// Grid plus golden-section maximisation over `τ = ln(1 + ψ)` on `[0, hi]`.
    fn maximise(&self, hi: f64) -> Result<f64> {
        let step = hi / (GRID - 1) as f64;
        let mut vals = Vec::with_capacity(GRID);
        for k in 0..GRID {
            vals.push(self.loglik_tau(k as f64 * step)?);
        }
        let k = (0..GRID).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
        let mut a = (k.saturating_sub(1)) as f64 * step;
        let mut b = ((k + 1).min(GRID - 1)) as f64 * step;
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut e = a + g * (b - a);
        let mut fc = self.loglik_tau(c)?;
        let mut fe = self.loglik_tau(e)?;
        while b - a > 1e-10 * (1.0 + b) {
            if fc >= fe {
                b = e;
                e = c;
                fe = fc;
                c = b - g * (b - a);
                fc = self.loglik_tau(c)?;
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + g * (b - a);
                fe = self.loglik_tau(e)?;
            }
        }
        let mut best = (if fc >= fe { c } else { e }, fc.max(fe));
        for t in [0.0, k as f64 * step] {
            let v = self.loglik_tau(t)?;
            if v > best.1 {
                best = (t, v);
            }
        }
        Ok(best.0)
    }
}

/// Random-intercept ML fit `y = Xβ + b_unit + ε` for a design that includes
/// an intercept column. `units[r]` indexes `0..n_units`.
pub fn fit_lmm_design(design: &DesignMatrix, y: &[f64], units: &[usize], n_units: usize) -> Result<LmmCore> {
    if units.len() != y.len() || design.n_rows() != y.len() {
        return Err(Error::Validation("design, outcome and unit vectors differ in length".into()));
    }
    let mut sizes = vec![0usize; n_units];
    for &u in units {
        if u >= n_units {
            return Err(Error::Validation(format!("unit index {u} out of range")));
        }
        sizes[u] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::Validation("every unit needs at least one observation".into()));
    }
    let profile = Profile { design, y, units, sizes };
    let mut hi = (1.0 + PSI_UPPER).ln();
    let mut tau = profile.maximise(hi)?;
    let mut at_boundary = tau >= hi * (1.0 - 1e-6);
    if at_boundary {
        hi = (1.0 + 100.0 * PSI_UPPER).ln();
        tau = profile.maximise(hi)?;
        at_boundary = tau >= hi * (1.0 - 1e-6);
    }
    let psi = tau.exp_m1();
    let (loglik, beta, sigma2_e) = profile.fit(psi)?;
    let fitted = design.mul(&beta);
    let mut rsum = vec![0.0; n_units];
    for ((yv, f), &u) in y.iter().zip(&fitted).zip(units) {
        rsum[u] += yv - f;
    }
    let blup = (0..n_units)
        .map(|u| {
            let w = psi * profile.sizes[u] as f64;
            w / (1.0 + w) * rsum[u] / profile.sizes[u] as f64
        })
        .collect();
    Ok(LmmCore { beta, sigma2_e, sigma2_b: psi * sigma2_e, psi, loglik, blup, at_boundary })
}

/// Random-intercept model with all covariates entering linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub outcome: String,
    pub covariates: Vec<String>,
    pub units: Vec<String>,
    pub unit_sizes: Vec<usize>,
    /// Intercept first, then one slope per covariate.
    #[serde(flatten)]
    pub core: LmmCore,
}

pub fn fit_lmm(d: &ClusteredDataset) -> Result<LmmFit> {
    let n = d.n_obs();
    let mut design = DesignMatrix::new(n);
    design.push(vec![1.0; n], ColumnRole::Intercept)?;
    for k in 0..d.n_covariates() {
        design.push(d.column(k).to_vec(), ColumnRole::Linear(k))?;
    }
    let core = fit_lmm_design(&design, d.y(), d.units(), d.n_units())?;
    Ok(LmmFit {
        outcome: d.outcome_name().to_string(),
        covariates: d.covariate_names(),
        units: d.unit_labels().to_vec(),
        unit_sizes: d.unit_sizes(),
        core,
    })
}

impl LmmFit {
    pub fn intercept(&self) -> f64 {
        self.core.beta[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.core.beta[1..]
    }

    pub fn unit_index(&self, label: &str) -> Option<usize> {
        self.units.iter().position(|u| u == label)
    }

    /// `x'β` without the intercept.
    pub fn covariate_effect(&self, x: &[f64]) -> f64 {
        self.slopes().iter().zip(x).map(|(b, v)| b * v).sum()
    }

    /// `β0 + b_i + x'β`; an unseen unit gets `b = 0` when `allow_fallback`.
    pub fn predict(&self, x: &[f64], unit: &str, allow_fallback: bool) -> Result<(f64, Option<usize>)> {
        if x.len() != self.covariates.len() {
            return Err(Error::Prediction(format!(
                "expected {} covariates, got {}",
                self.covariates.len(),
                x.len()
            )));
        }
        let base = self.intercept() + self.covariate_effect(x);
        match self.unit_index(unit) {
            Some(u) => Ok((base + self.core.blup[u], Some(u))),
            None if allow_fallback => Ok((base, None)),
            None => Err(Error::Prediction(format!("unit `{unit}` was not seen when fitting"))),
        }
    }

    /// Covariate part per row of `d` and `β0 + b_i` per unit of `d`.
    pub fn decompose(&self, d: &ClusteredDataset) -> Result<(Vec<f64>, Vec<f64>)> {
        let eta_x = (0..d.n_obs()).map(|r| self.covariate_effect(&d.row(r))).collect();
        let eta_i = d
            .unit_labels()
            .iter()
            .map(|l| {
                self.unit_index(l)
                    .map(|u| self.intercept() + self.core.blup[u])
                    .ok_or_else(|| Error::Prediction(format!("unit `{l}` was not seen when fitting")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((eta_x, eta_i))
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), (String, String)> {
        let p = self.covariates.len();
        if self.core.beta.len() != p + 1 {
            return Err(("beta".into(), format!("expected {} values", p + 1)));
        }
        if self.core.blup.len() != self.units.len() {
            return Err(("blup".into(), format!("expected {} values", self.units.len())));
        }
        if self.unit_sizes.len() != self.units.len() {
            return Err(("unit_sizes".into(), "length differs from units".into()));
        }
        Ok(())
    }
}

/// Covariate part of a true model.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariatePart {
    None,
    /// Linear in these covariates.
    Linear(Vec<usize>),
    /// Piecewise constant on known regions; one region index per row.
    Regions(Vec<usize>),
}

/// Unit part of a true model.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitPart {
    /// Normal random intercepts.
    Random,
    /// Fixed cluster intercepts; one cluster index per unit.
    Clusters(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub covariate: CovariatePart,
    pub unit: UnitPart,
}

/// Estimates of a correctly specified model.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfectFit {
    /// Covariate part per row.
    pub eta_x: Vec<f64>,
    /// Unit part per unit.
    pub eta_i: Vec<f64>,
    pub rss: f64,
}

fn indicator_columns(labels: &[usize], skip_last: bool) -> Vec<Vec<f64>> {
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if skip_last {
        present.pop();
    }
    present
        .iter()
        .map(|&g| labels.iter().map(|&l| f64::from(u8::from(l == g))).collect())
        .collect()
}

/// Fits the true structure: least squares for fixed clusters, the mixed
/// model for random intercepts.
pub fn fit_perfect(d: &ClusteredDataset, spec: &OracleSpec) -> Result<PerfectFit> {
    let n = d.n_obs();
    let mut cov_cols: Vec<Vec<f64>> = Vec::new();
    match &spec.covariate {
        CovariatePart::None => {}
        CovariatePart::Linear(ks) => cov_cols.extend(ks.iter().map(|&k| d.column(k).to_vec())),
        CovariatePart::Regions(r) => {
            if r.len() != n {
                return Err(Error::Validation("region labels must cover every row".into()));
            }
            cov_cols.extend(indicator_columns(r, true));
        }
    }
    let n_cov = cov_cols.len();
    let mut design = DesignMatrix::new(n);
    let (fitted_cov, eta_i, fitted) = match &spec.unit {
        UnitPart::Clusters(per_unit) => {
            if per_unit.len() != d.n_units() {
                return Err(Error::Validation("cluster labels must cover every unit".into()));
            }
            let row_cluster: Vec<usize> = (0..n).map(|r| per_unit[d.unit_of(r)]).collect();
            let cl = indicator_columns(&row_cluster, false);
            let n_cl = cl.len();
            for c in cl {
                design.push(c, ColumnRole::Other(design.n_cols()))?;
            }
            for c in cov_cols {
                design.push(c, ColumnRole::Other(design.n_cols()))?;
            }
            let f = ols_fit(&design, d.y())?;
            let mut present: Vec<usize> = row_cluster.clone();
            present.sort_unstable();
            present.dedup();
            let eta_i = per_unit
                .iter()
                .map(|c| f.coefficients[present.binary_search(c).expect("present")])
                .collect();
            let cov_part = DesignMatrix::from_columns(design.columns()[n_cl..].to_vec());
            let fitted_cov = match cov_part {
                Ok(m) if n_cov > 0 => m.mul(&f.coefficients[n_cl..]),
                _ => vec![0.0; n],
            };
            let fitted = design.mul(&f.coefficients);
            (fitted_cov, eta_i, fitted)
        }
        UnitPart::Random => {
            design.push(vec![1.0; n], ColumnRole::Intercept)?;
            for c in cov_cols {
                design.push(c, ColumnRole::Other(design.n_cols()))?;
            }
            let core = fit_lmm_design(&design, d.y(), d.units(), d.n_units())?;
            let fixed = design.mul(&core.beta);
            let fitted_cov: Vec<f64> = fixed.iter().map(|v| v - core.beta[0]).collect();
            let eta_i: Vec<f64> = core.blup.iter().map(|b| core.beta[0] + b).collect();
            let fitted = (0..n).map(|r| fixed[r] + core.blup[d.unit_of(r)]).collect();
            (fitted_cov, eta_i, fitted)
        }
    };
    let rss = d.y().iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(PerfectFit { eta_x: fitted_cov, eta_i, rss })
}
