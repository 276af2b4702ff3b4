//! Choosing the number of splits by k-fold cross-validation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{assign_folds, ClusteredDataset};
use crate::error::{Error, Result};
use crate::linfit::{gaussian_loglik, SIGMA2_FLOOR};
use crate::num;
use crate::stepwise::{grow_path, FitConfig};
use crate::trees::{ModelKind, TreeModel};

/// Cross-validated predictive log-likelihood per number of splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    /// Mean over folds of the per-observation held-out log-likelihood.
    #[serde(with = "num::vec_str")]
    pub mean: Vec<f64>,
    #[serde(with = "num::vec_str")]
    pub se: Vec<f64>,
    pub s_max: usize,
    pub s_1se: usize,
    /// The size actually used.
    pub selected: usize,
    pub folds: usize,
    /// Folds that had at least one evaluable held-out row.
    pub effective_folds: usize,
    /// Path length (splits + 1) reached in each fold.
    pub fold_lengths: Vec<usize>,
    /// Held-out rows whose unit was absent from the training part.
    pub dropped_rows: usize,
    pub seed: u64,
}

/// Index of the maximum; the smallest index on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sd(values: &[f64]) -> f64 {
    let k = values.len();
    if k < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
}

/// Builds the curve from per-fold scores (`None` marks a fold without
/// evaluable rows). Every score vector must be at least `len` long.
pub fn summarize_folds(scores: &[Option<Vec<f64>>], len: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let usable: Vec<&Vec<f64>> = scores.iter().flatten().collect();
    let k = usable.len();
    let mut mean = Vec::with_capacity(len);
    let mut se = Vec::with_capacity(len);
    for s in 0..len {
        let col: Vec<f64> = usable.iter().map(|f| f[s]).collect();
        mean.push(col.iter().sum::<f64>() / k as f64);
        se.push(sd(&col) / (k as f64).sqrt());
    }
    (mean, se, k)
}

/// `(s_max, s_1se)`: the maximiser of the mean, and the smallest size whose
/// mean is within one standard error of it.
pub fn select_sizes(mean: &[f64], se: &[f64]) -> (usize, usize) {
    let s_max = argmax(mean);
    let bar = mean[s_max] - se[s_max];
    let s_1se = mean.iter().position(|&m| m >= bar).unwrap_or(s_max);
    (s_max, s_1se)
}

/// Per-observation held-out log-likelihood of each model on the path.
/// `None` when no held-out row belongs to a training unit.
fn fold_scores(models: &[TreeModel], test: &ClusteredDataset, dropped: &mut usize) -> Result<Option<Vec<f64>>> {
    let labels = test.unit_labels();
    let rows: Vec<usize> = (0..test.n_obs())
        .filter(|&r| models[0].unit_index(&labels[test.unit_of(r)]).is_some())
        .collect();
    *dropped = test.n_obs() - rows.len();
    if rows.is_empty() {
        return Ok(None);
    }
    let xs: Vec<Vec<f64>> = rows.iter().map(|&r| test.row(r)).collect();
    models
        .iter()
        .map(|m| {
            let residuals = rows
                .iter()
                .zip(&xs)
                .map(|(&r, x)| Ok(test.y()[r] - m.predict(x, &labels[test.unit_of(r)], false)?.value))
                .collect::<Result<Vec<f64>>>()?;
            let sigma2 = m.sigma2.max(SIGMA2_FLOOR);
            Ok(gaussian_loglik(&residuals, sigma2) / rows.len() as f64)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Cross-validation curve for the path grown under `cfg`.
///
/// The minimal bucket size is resolved once on the full data, so every fold
/// uses the same absolute value.
pub fn cv_curve(d: &ClusteredDataset, cfg: &FitConfig) -> Result<CvCurve> {
    cfg.validate()?;
    let cfg = FitConfig { min_bucket: Some(cfg.min_bucket_for(d.n_obs())), ..cfg.clone() };
    let folds = assign_folds(d, cfg.folds, cfg.seed)?;
    let per_fold = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let train = d.subset(&folds.train_rows(f))?;
            let test = d.subset(&folds.test_rows(f))?;
            let path = grow_path(&train, &cfg)?;
            let mut dropped = 0;
            let scores = fold_scores(&path.models, &test, &mut dropped)?;
            Ok((path.len(), scores, dropped))
        })
        .collect::<Result<Vec<_>>>()?;
    let fold_lengths: Vec<usize> = per_fold.iter().map(|p| p.0).collect();
    let len = *fold_lengths.iter().min().expect("at least two folds");
    let scores: Vec<Option<Vec<f64>>> = per_fold.iter().map(|p| p.1.clone()).collect();
    let (mean, se, effective_folds) = summarize_folds(&scores, len);
    if effective_folds == 0 {
        return Err(Error::Validation("no fold has a held-out row from a training unit".into()));
    }
    let (s_max, s_1se) = select_sizes(&mean, &se);
    Ok(CvCurve {
        mean,
        se,
        s_max,
        s_1se,
        selected: if cfg.one_se { s_1se } else { s_max },
        folds: cfg.folds,
        effective_folds,
        fold_lengths,
        dropped_rows: per_fold.iter().map(|p| p.2).sum(),
        seed: cfg.seed,
    })
}

/// Grows the path on all data and keeps the cross-validated size.
///
/// For [`ModelKind::Ltscb`] the pruned unit tree is followed by backward
/// elimination of linear terms.
pub fn fit_pruned(d: &ClusteredDataset, cfg: &FitConfig) -> Result<TreeModel> {
    if cfg.model == ModelKind::Lmm {
        return Err(Error::Config("the mixed model has no tree to prune".into()));
    }
    cfg.validate()?;
    let cfg = FitConfig { min_bucket: Some(cfg.min_bucket_for(d.n_obs())), ..cfg.clone() };
    let curve = cv_curve(d, &cfg)?;
    let grow_cfg = FitConfig { max_splits: curve.selected.min(cfg.max_splits), ..cfg.clone() };
    let path = grow_path(d, &grow_cfg)?;
    let mut model = path.models.into_iter().last().expect("path has the root model");
    if cfg.model == ModelKind::Ltscb {
        model = crate::baselines::eliminate_linear_terms(d, model)?;
    }
    model.config = Some(cfg);
    model.cv_curve = Some(curve);
    Ok(model)
}

/// Writes the curve as CSV: `s, mean_loglik, se, is_s_max, is_s_1se, selected`.
pub fn write_cv_csv<W: Write>(curve: &CvCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["s", "mean_loglik", "se", "is_s_max", "is_s_1se", "selected"])?;
    for s in 0..curve.mean.len() {
        w.write_record([
            s.to_string(),
            curve.mean[s].to_string(),
            curve.se[s].to_string(),
            u8::from(s == curve.s_max).to_string(),
            u8::from(s == curve.s_1se).to_string(),
            u8::from(s == curve.selected).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
