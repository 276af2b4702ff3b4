//! Stepwise growth of the two trees by deviance minimisation.
//!
//! Every step evaluates all admissible one-split extensions of the current
//! model. A split always adds exactly one indicator column `z` to the column
//! space of the design (the indicator of the left child), so the refitted
//! residual sum of squares is
//!
//! ```text
//! RSS' = RSS - (z'r)^2 / (z'z - |Q'z|^2)
//! ```
//!
//! with `r` the current residuals and `Q` an orthonormal basis of the current
//! design. Both inner products are sums over the rows of the left child, so
//! one pass over the rows in sorted order scores every threshold. The
//! committed model is always refitted from scratch.

use serde::{Deserialize, Serialize};

use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};
use crate::linfit::PivotedQr;
use crate::trees::{encode_design_with, order_units, CovNode, ModelKind, TreeModel, UnitTree};

/// How candidate splits are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Rank-one update of the current least-squares fit.
    #[default]
    Projection,
    /// Encode and refit every candidate model.
    FullRefit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    /// Maximal number of splits over both trees together.
    pub max_splits: usize,
    /// Minimal observations per terminal node; `None` means `⌊0.1·N⌋`.
    pub min_bucket: Option<usize>,
    /// Maximal depth of each tree; `None` means unlimited.
    pub max_depth: Option<usize>,
    pub folds: usize,
    pub one_se: bool,
    pub seed: u64,
    #[serde(default)]
    pub scoring: Scoring,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Ttsc,
            max_splits: 20,
            min_bucket: None,
            max_depth: None,
            folds: 10,
            one_se: true,
            seed: 1,
            scoring: Scoring::Projection,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.min_bucket == Some(0) {
            return Err(Error::Config("min_bucket must be at least 1".into()));
        }
        Ok(())
    }

    /// Minimal bucket size for a data set with `n_obs` rows.
    pub fn min_bucket_for(&self, n_obs: usize) -> usize {
        self.min_bucket.unwrap_or(n_obs / 10).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitCandidate {
    Covariate { leaf: usize, variable: usize, threshold: f64 },
    /// Cut position in the unit ordering; `cluster` is the cluster it splits.
    Unit { cluster: usize, cut: usize },
}

/// Nested sequence of models; `models[s]` has `s` splits.
#[derive(Debug, Clone)]
pub struct FitPath {
    pub models: Vec<TreeModel>,
    pub deviances: Vec<f64>,
    pub steps: Vec<SplitCandidate>,
}

impl FitPath {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn max_splits(&self) -> usize {
        self.models.len() - 1
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Per-dataset data reused across steps.
struct Search<'a> {
    d: &'a ClusteredDataset,
    /// Rows sorted by each covariate.
    sorted: Vec<Vec<usize>>,
    n_mb: usize,
    max_depth: usize,
    covariate_splits: bool,
    unit_splits: bool,
}

/// Current residuals and orthonormal basis, row-major.
struct Projection {
    residuals: Vec<f64>,
    q_rows: Vec<f64>,
    rank: usize,
}

impl<'a> Search<'a> {
    fn new(d: &'a ClusteredDataset, cfg: &FitConfig) -> Self {
        let sorted = (0..d.n_covariates())
            .map(|k| {
                let col = d.column(k);
                let mut rows: Vec<usize> = (0..d.n_obs()).collect();
                rows.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                rows
            })
            .collect();
        Self {
            d,
            sorted,
            n_mb: cfg.min_bucket_for(d.n_obs()),
            max_depth: cfg.max_depth.unwrap_or(usize::MAX),
            covariate_splits: cfg.model == ModelKind::Ttsc,
            unit_splits: matches!(cfg.model, ModelKind::Ttsc | ModelKind::Ltsc | ModelKind::Ltscb),
        }
    }

    fn projection(&self, model: &TreeModel) -> Result<Projection> {
        let design = encode_design_with(
            self.d,
            &model.covariate_tree,
            &model.unit_tree,
            &model.linear_terms,
            Some(model.reference_leaf),
        )?;
        let qr = PivotedQr::factor(&design);
        let q = qr.thin_q();
        let n = self.d.n_obs();
        let rank = q.len();
        let y = self.d.y();
        let mut residuals = y.to_vec();
        for qk in &q {
            let dot: f64 = qk.iter().zip(y).map(|(a, b)| a * b).sum();
            for (r, v) in residuals.iter_mut().zip(qk) {
                *r -= dot * v;
            }
        }
        let mut q_rows = vec![0.0; n * rank];
        for (k, qk) in q.iter().enumerate() {
            for (i, v) in qk.iter().enumerate() {
                q_rows[i * rank + k] = *v;
            }
        }
        Ok(Projection { residuals, q_rows, rank })
    }

    /// Candidates in enumeration order, each with its deviance under the
    /// projection update when `proj` is given (`None` marks a split whose
    /// indicator already lies in the column space).
    fn candidates(&self, model: &TreeModel, proj: Option<&Projection>) -> Vec<(SplitCandidate, Option<f64>)> {
        let d = self.d;
        let n = d.n_obs();
        let mut out = Vec::new();
        let rank = proj.map_or(0, |p| p.rank);
        let rss = model.rss;
        let score = |cnt: usize, sr: f64, sq: &[f64]| -> Option<f64> {
            let denom = cnt as f64 - sq.iter().map(|v| v * v).sum::<f64>();
            if denom <= 1e-9 * cnt as f64 {
                None
            } else {
                Some((rss - sr * sr / denom).max(0.0))
            }
        };

        if self.covariate_splits {
            let leaf_of: Vec<usize> = (0..n).map(|r| model.covariate_tree.leaf_for(|k| d.x(r, k))).collect();
            let depths = model.covariate_tree.leaf_depths();
            let mut leaf_count = vec![0usize; depths.len()];
            for &m in &leaf_of {
                leaf_count[m] += 1;
            }
            let mut sq = vec![0.0; rank];
            for (m, &depth) in depths.iter().enumerate() {
                let total = leaf_count[m];
                if depth + 1 > self.max_depth || total < 2 * self.n_mb {
                    continue;
                }
                for k in 0..d.n_covariates() {
                    let col = d.column(k);
                    let rows: Vec<usize> = self.sorted[k].iter().copied().filter(|&r| leaf_of[r] == m).collect();
                    let mut cnt = 0usize;
                    let mut sr = 0.0;
                    sq.iter_mut().for_each(|v| *v = 0.0);
                    for (pos, &r) in rows.iter().enumerate() {
                        cnt += 1;
                        if let Some(p) = proj {
                            sr += p.residuals[r];
                            for (a, b) in sq.iter_mut().zip(&p.q_rows[r * rank..(r + 1) * rank]) {
                                *a += b;
                            }
                        }
                        let Some(&next) = rows.get(pos + 1) else { break };
                        let (a, b) = (col[r], col[next]);
                        if a == b || cnt < self.n_mb || total - cnt < self.n_mb {
                            continue;
                        }
                        let cand = SplitCandidate::Covariate { leaf: m, variable: k, threshold: midpoint(a, b) };
                        out.push((cand, proj.and_then(|_| score(cnt, sr, &sq))));
                    }
                }
            }
        }

        if self.unit_splits {
            let tree = &model.unit_tree;
            let n_units = d.n_units();
            let mut unit_count = vec![0usize; n_units];
            let mut unit_r = vec![0.0; n_units];
            let mut unit_q = vec![0.0; n_units * rank];
            for r in 0..n {
                let u = d.unit_of(r);
                unit_count[u] += 1;
                if let Some(p) = proj {
                    unit_r[u] += p.residuals[r];
                    for (a, b) in unit_q[u * rank..(u + 1) * rank].iter_mut().zip(&p.q_rows[r * rank..(r + 1) * rank]) {
                        *a += b;
                    }
                }
            }
            let mut sq = vec![0.0; rank];
            for c in 0..tree.n_clusters() {
                let bounds = tree.bounds(c);
                if bounds.len() < 2 || tree.depths()[c] + 1 > self.max_depth {
                    continue;
                }
                let members = tree.units_in(c);
                let total: usize = members.iter().map(|&u| unit_count[u]).sum();
                let mut cnt = 0usize;
                let mut sr = 0.0;
                sq.iter_mut().for_each(|v| *v = 0.0);
                for (i, &u) in members[..members.len() - 1].iter().enumerate() {
                    cnt += unit_count[u];
                    sr += unit_r[u];
                    for (a, b) in sq.iter_mut().zip(&unit_q[u * rank..(u + 1) * rank]) {
                        *a += b;
                    }
                    if cnt < self.n_mb || total - cnt < self.n_mb {
                        continue;
                    }
                    let cand = SplitCandidate::Unit { cluster: c, cut: bounds.start + i + 1 };
                    out.push((cand, proj.and_then(|_| score(cnt, sr, &sq))));
                }
            }
        }
        out
    }
}

/// Applies a candidate split to a model's structure and refits.
pub fn apply_split(d: &ClusteredDataset, model: &TreeModel, cand: &SplitCandidate) -> Result<TreeModel> {
    let (cov, units) = match *cand {
        SplitCandidate::Covariate { leaf, variable, threshold } => {
            (model.covariate_tree.split_leaf(leaf, variable, threshold)?, model.unit_tree.clone())
        }
        SplitCandidate::Unit { cut, .. } => (model.covariate_tree.clone(), model.unit_tree.split(cut)?),
    };
    TreeModel::fit(d, model.kind, cov, units, model.linear_terms.clone(), None)
}

/// All admissible one-split extensions of `model`, in enumeration order:
/// covariate splits by (leaf, variable, threshold), then unit cuts by
/// (cluster, cut position).
pub fn enumerate_candidates(d: &ClusteredDataset, model: &TreeModel, cfg: &FitConfig) -> Vec<SplitCandidate> {
    Search::new(d, cfg).candidates(model, None).into_iter().map(|(c, _)| c).collect()
}

/// Index of the selected candidate: the first one (in enumeration order)
/// whose deviance is within `1e-10 · parent_rss` of the minimum.
pub fn select_candidate(deviances: &[Option<f64>], parent_rss: f64) -> Option<usize> {
    let best = deviances.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tol = 1e-10 * parent_rss.max(f64::MIN_POSITIVE);
    deviances.iter().position(|d| d.is_some_and(|v| v <= best + tol))
}

fn initial_model(d: &ClusteredDataset, cfg: &FitConfig) -> Result<TreeModel> {
    let linear = match cfg.model {
        ModelKind::Ltsc | ModelKind::Ltscb => (0..d.n_covariates()).collect(),
        _ => Vec::new(),
    };
    TreeModel::fit(d, cfg.model, CovNode::default(), UnitTree::new(order_units(d))?, linear, None)
}

/// Grows the nested model sequence up to `cfg.max_splits` splits.
pub fn grow_path(d: &ClusteredDataset, cfg: &FitConfig) -> Result<FitPath> {
    cfg.validate()?;
    if cfg.model == ModelKind::Lmm {
        return Err(Error::Config("the mixed model is not grown stepwise".into()));
    }
    let search = Search::new(d, cfg);
    let mut model = initial_model(d, cfg)?;
    let mut path = FitPath { deviances: vec![model.rss], models: vec![model.clone()], steps: Vec::new() };
    if cfg.model == ModelKind::Null {
        return Ok(path);
    }
    let sum_y2: f64 = d.y().iter().map(|v| v * v).sum();
    while path.steps.len() < cfg.max_splits && model.rss > 1e-20 * sum_y2 {
        let scored = match cfg.scoring {
            Scoring::Projection => {
                let proj = search.projection(&model)?;
                search.candidates(&model, Some(&proj))
            }
            Scoring::FullRefit => search
                .candidates(&model, None)
                .into_iter()
                .map(|(c, _)| {
                    let dev = match apply_split(d, &model, &c) {
                        Ok(m) => Some(m.rss),
                        Err(Error::RankDeficient { .. } | Error::Encoding(_)) => None,
                        Err(e) => return Err(e),
                    };
                    Ok((c, dev))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let (cands, mut devs): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
        let next = loop {
            let Some(i) = select_candidate(&devs, model.rss) else { break None };
            match apply_split(d, &model, &cands[i]) {
                Ok(m) => break Some((cands[i], m)),
                Err(Error::RankDeficient { .. } | Error::Encoding(_)) => devs[i] = None,
                Err(e) => return Err(e),
            }
        };
        let Some((cand, next)) = next else { break };
        path.deviances.push(next.rss);
        path.steps.push(cand);
        path.models.push(next.clone());
        model = next;
    }
    Ok(path)
}

/// Unit-tree-only growth with all covariates entering linearly.
pub fn grow_path_ltsc(d: &ClusteredDataset, cfg: &FitConfig) -> Result<FitPath> {
    let cfg = FitConfig { model: ModelKind::Ltsc, ..cfg.clone() };
    grow_path(d, &cfg)
}
