//! The covariate tree, the unit tree, and the fitted two-tree model.
//!
//! A fitted model predicts `tr0(i) + tr(x)`: a cluster intercept chosen by the
//! unit's position in the ordering of unit means, plus a leaf effect chosen by
//! the covariate tree. The right-most covariate leaf is the reference (effect
//! fixed at zero) unless another one is requested.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};
use crate::linfit::{ols_fit, ColumnRole, DesignMatrix};
use crate::num;
use crate::pruning::CvCurve;
use crate::stepwise::FitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ttsc,
    Ltsc,
    Ltscb,
    Null,
    Lmm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::Ttsc, Self::Ltsc, Self::Ltscb, Self::Null, Self::Lmm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ttsc => "ttsc",
            Self::Ltsc => "ltsc",
            Self::Ltscb => "ltscb",
            Self::Null => "null",
            Self::Lmm => "lmm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!("unknown model kind `{s}` (expected ttsc, ltsc, ltscb, null or lmm)"))
            })
    }
}

/// Binary tree over the covariates. Leaves are numbered left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovNode {
    Leaf {
        id: usize,
    },
    Split {
        variable: usize,
        #[serde(with = "num::f64_str")]
        threshold: f64,
        depth: usize,
        left: Box<CovNode>,
        right: Box<CovNode>,
    },
}

impl Default for CovNode {
    fn default() -> Self {
        CovNode::Leaf { id: 0 }
    }
}

impl CovNode {
    pub fn leaf_for(&self, x: impl Fn(usize) -> f64) -> usize {
        let mut node = self;
        loop {
            match node {
                CovNode::Leaf { id } => return *id,
                CovNode::Split { variable, threshold, left, right, .. } => {
                    node = if x(*variable) <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            CovNode::Leaf { .. } => 1,
            CovNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn n_splits(&self) -> usize {
        self.n_leaves() - 1
    }

    /// Depth of each leaf in left-to-right order (root leaf has depth 0).
    pub fn leaf_depths(&self) -> Vec<usize> {
        fn walk(node: &CovNode, depth: usize, out: &mut Vec<usize>) {
            match node {
                CovNode::Leaf { .. } => out.push(depth),
                CovNode::Split { left, right, .. } => {
                    walk(left, depth + 1, out);
                    walk(right, depth + 1, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, 0, &mut out);
        out
    }

    /// Variables used by at least one split.
    pub fn split_variables(&self) -> BTreeSet<usize> {
        fn walk(node: &CovNode, out: &mut BTreeSet<usize>) {
            if let CovNode::Split { variable, left, right, .. } = node {
                out.insert(*variable);
                walk(left, out);
                walk(right, out);
            }
        }
        let mut out = BTreeSet::new();
        walk(self, &mut out);
        out
    }

    /// Replaces leaf `leaf` by a split; leaves are renumbered left to right.
    pub fn split_leaf(&self, leaf: usize, variable: usize, threshold: f64) -> Result<CovNode> {
        fn walk(node: &CovNode, leaf: usize, variable: usize, threshold: f64, depth: usize, done: &mut bool) -> CovNode {
            match node {
                CovNode::Leaf { id } if *id == leaf => {
                    *done = true;
                    CovNode::Split {
                        variable,
                        threshold,
                        depth,
                        left: Box::new(CovNode::Leaf { id: 0 }),
                        right: Box::new(CovNode::Leaf { id: 0 }),
                    }
                }
                CovNode::Leaf { id } => CovNode::Leaf { id: *id },
                CovNode::Split { variable: v, threshold: t, depth: d, left, right } => CovNode::Split {
                    variable: *v,
                    threshold: *t,
                    depth: *d,
                    left: Box::new(walk(left, leaf, variable, threshold, depth + 1, done)),
                    right: Box::new(walk(right, leaf, variable, threshold, depth + 1, done)),
                },
            }
        }
        let mut done = false;
        let mut tree = walk(self, leaf, variable, threshold, 0, &mut done);
        if !done {
            return Err(Error::Validation(format!("covariate tree has no leaf {leaf}")));
        }
        tree.renumber();
        Ok(tree)
    }

    fn renumber(&mut self) {
        fn walk(node: &mut CovNode, next: &mut usize) {
            match node {
                CovNode::Leaf { id } => {
                    *id = *next;
                    *next += 1;
                }
                CovNode::Split { left, right, .. } => {
                    walk(left, next);
                    walk(right, next);
                }
            }
        }
        let mut next = 0;
        walk(self, &mut next);
    }

    /// Human-readable conjunction of split conditions per leaf.
    pub fn leaf_rules(&self, names: &[String]) -> Vec<String> {
        fn walk(node: &CovNode, names: &[String], path: &mut Vec<String>, out: &mut Vec<String>) {
            match node {
                CovNode::Leaf { .. } => {
                    out.push(if path.is_empty() { "(all)".to_string() } else { path.join(" & ") })
                }
                CovNode::Split { variable, threshold, left, right, .. } => {
                    let name = names.get(*variable).cloned().unwrap_or_else(|| format!("x[{variable}]"));
                    path.push(format!("{name} <= {threshold}"));
                    walk(left, names, path, out);
                    path.pop();
                    path.push(format!("{name} > {threshold}"));
                    walk(right, names, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(self, names, &mut Vec::new(), &mut out);
        out
    }

    /// Checks leaf numbering, recorded depths and variable indices.
    fn validate(&self, n_covariates: usize) -> std::result::Result<(), String> {
        fn walk(node: &CovNode, depth: usize, next: &mut usize, p: usize) -> std::result::Result<(), String> {
            match node {
                CovNode::Leaf { id } => {
                    if *id != *next {
                        return Err(format!("leaf id {id} out of left-to-right order (expected {next})"));
                    }
                    *next += 1;
                    Ok(())
                }
                CovNode::Split { variable, threshold, depth: d, left, right } => {
                    if *variable >= p {
                        return Err(format!("split variable {variable} but only {p} covariates"));
                    }
                    if !threshold.is_finite() {
                        return Err("non-finite threshold".into());
                    }
                    if *d != depth {
                        return Err(format!("split recorded at depth {d} but sits at depth {depth}"));
                    }
                    walk(left, depth + 1, next, p)?;
                    walk(right, depth + 1, next, p)
                }
            }
        }
        walk(self, 0, &mut 0, n_covariates)
    }
}

#[derive(Serialize, Deserialize)]
struct RawUnitTree {
    ordering: Vec<usize>,
    cuts: Vec<usize>,
    depths: Vec<usize>,
}

/// Contiguous clusters of units over a fixed ordering.
///
/// A cut at position `t` separates `ordering[..t]` from `ordering[t..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawUnitTree", into = "RawUnitTree")]
pub struct UnitTree {
    ordering: Vec<usize>,
    cuts: Vec<usize>,
    depths: Vec<usize>,
    position: Vec<usize>,
}

impl From<UnitTree> for RawUnitTree {
    fn from(t: UnitTree) -> Self {
        RawUnitTree { ordering: t.ordering, cuts: t.cuts, depths: t.depths }
    }
}

impl TryFrom<RawUnitTree> for UnitTree {
    type Error = String;

    fn try_from(raw: RawUnitTree) -> std::result::Result<Self, String> {
        UnitTree::from_parts(raw.ordering, raw.cuts, raw.depths).map_err(|e| e.to_string())
    }
}

impl UnitTree {
    /// A single cluster holding every unit.
    pub fn new(ordering: Vec<usize>) -> Result<Self> {
        Self::from_parts(ordering, Vec::new(), vec![0])
    }

    pub fn from_parts(ordering: Vec<usize>, cuts: Vec<usize>, depths: Vec<usize>) -> Result<Self> {
        let n = ordering.len();
        if n == 0 {
            return Err(Error::Validation("unit ordering is empty".into()));
        }
        let mut position = vec![usize::MAX; n];
        for (pos, &u) in ordering.iter().enumerate() {
            if u >= n || position[u] != usize::MAX {
                return Err(Error::Validation(format!("ordering is not a permutation of 0..{n}")));
            }
            position[u] = pos;
        }
        for (i, &c) in cuts.iter().enumerate() {
            if c == 0 || c >= n {
                return Err(Error::Validation(format!("cut index {c} outside 1..{}", n - 1)));
            }
            if i > 0 && cuts[i - 1] >= c {
                return Err(Error::Validation("cuts are not strictly increasing".into()));
            }
        }
        if depths.len() != cuts.len() + 1 {
            return Err(Error::Validation(format!(
                "{} cluster depths for {} clusters",
                depths.len(),
                cuts.len() + 1
            )));
        }
        Ok(Self { ordering, cuts, depths, position })
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    pub fn depths(&self) -> &[usize] {
        &self.depths
    }

    pub fn n_units(&self) -> usize {
        self.ordering.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Range of ordering positions covered by cluster `c`.
    pub fn bounds(&self, c: usize) -> Range<usize> {
        let start = if c == 0 { 0 } else { self.cuts[c - 1] };
        let end = self.cuts.get(c).copied().unwrap_or(self.ordering.len());
        start..end
    }

    pub fn units_in(&self, c: usize) -> &[usize] {
        &self.ordering[self.bounds(c)]
    }

    pub fn cluster_at_position(&self, pos: usize) -> usize {
        self.cuts.partition_point(|&c| c <= pos)
    }

    pub fn cluster_of_unit(&self, unit: usize) -> usize {
        self.cluster_at_position(self.position[unit])
    }

    /// Adds a cut, splitting the cluster that contains position `cut`.
    pub fn split(&self, cut: usize) -> Result<UnitTree> {
        if cut == 0 || cut >= self.ordering.len() || self.cuts.contains(&cut) {
            return Err(Error::Validation(format!("invalid unit cut {cut}")));
        }
        let c = self.cluster_at_position(cut);
        let mut cuts = self.cuts.clone();
        cuts.insert(c, cut);
        let mut depths = self.depths.clone();
        let d = depths[c] + 1;
        depths[c] = d;
        depths.insert(c + 1, d);
        Ok(Self { ordering: self.ordering.clone(), cuts, depths, position: self.position.clone() })
    }
}

/// Raw (reference-coded) coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    #[serde(with = "num::vec_str")]
    pub cluster: Vec<f64>,
    /// One entry per leaf; the reference leaf holds 0.
    #[serde(with = "num::vec_str")]
    pub leaf: Vec<f64>,
    #[serde(with = "num::vec_str")]
    pub linear: Vec<f64>,
}

/// Coefficients after moving the mean leaf effect into the cluster intercepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjusted {
    #[serde(with = "num::f64_str")]
    pub gamma_bar: f64,
    #[serde(with = "num::vec_str")]
    pub cluster: Vec<f64>,
    #[serde(with = "num::vec_str")]
    pub leaf: Vec<f64>,
}

/// A fitted tree-structured fixed-effects model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeModel {
    pub kind: ModelKind,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub units: Vec<String>,
    pub unit_sizes: Vec<usize>,
    pub covariate_tree: CovNode,
    pub unit_tree: UnitTree,
    /// Covariates entering linearly (LTSC-type models).
    pub linear_terms: Vec<usize>,
    pub reference_leaf: usize,
    pub coefficients: Coefficients,
    pub adjusted: Adjusted,
    #[serde(with = "num::f64_str")]
    pub sigma2: f64,
    #[serde(with = "num::f64_str")]
    pub rss: f64,
    pub n_obs: usize,
    #[serde(default)]
    pub config: Option<FitConfig>,
    #[serde(default)]
    pub cv_curve: Option<CvCurve>,
    #[serde(skip)]
    unit_index: OnceLock<HashMap<String, usize>>,
}

/// Builds the design of a two-tree model: cluster indicators (or one intercept
/// when there is a single cluster), then one indicator per non-reference leaf.
/// The right-most leaf is the reference.
pub fn encode_design(d: &ClusteredDataset, cov: &CovNode, units: &UnitTree) -> Result<DesignMatrix> {
    encode_design_with(d, cov, units, &[], None)
}

/// [`encode_design`] with linear covariate columns appended and an optional
/// non-default reference leaf.
pub fn encode_design_with(
    d: &ClusteredDataset,
    cov: &CovNode,
    units: &UnitTree,
    linear: &[usize],
    reference_leaf: Option<usize>,
) -> Result<DesignMatrix> {
    if units.n_units() != d.n_units() {
        return Err(Error::Encoding(format!(
            "unit tree covers {} units, data has {}",
            units.n_units(),
            d.n_units()
        )));
    }
    let n = d.n_obs();
    let leaves: Vec<usize> = (0..n).map(|r| cov.leaf_for(|k| d.x(r, k))).collect();
    let n_leaves = cov.n_leaves();
    let reference = reference_leaf.unwrap_or(n_leaves - 1);
    if reference >= n_leaves {
        return Err(Error::Encoding(format!("reference leaf {reference} but only {n_leaves} leaves")));
    }
    let mut counts = vec![0usize; n_leaves];
    for &m in &leaves {
        counts[m] += 1;
    }
    if let Some(m) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Encoding(format!("leaf {m} contains no observations")));
    }
    let mut design = DesignMatrix::new(n);
    let clusters: Vec<usize> = (0..n).map(|r| units.cluster_of_unit(d.unit_of(r))).collect();
    if units.n_clusters() == 1 {
        design.push(vec![1.0; n], ColumnRole::Intercept)?;
    } else {
        for c in 0..units.n_clusters() {
            let col = clusters.iter().map(|&x| f64::from(u8::from(x == c))).collect();
            design.push(col, ColumnRole::Cluster(c))?;
        }
    }
    for m in (0..n_leaves).filter(|&m| m != reference) {
        let col = leaves.iter().map(|&x| f64::from(u8::from(x == m))).collect();
        design.push(col, ColumnRole::Leaf(m))?;
    }
    for &k in linear {
        if k >= d.n_covariates() {
            return Err(Error::Encoding(format!("linear term {k} out of range")));
        }
        design.push(d.column(k).to_vec(), ColumnRole::Linear(k))?;
    }
    Ok(design)
}

/// Ascending unit means; ties go to the smaller unit index.
pub fn order_units(d: &ClusteredDataset) -> Vec<usize> {
    let means = d.unit_means();
    let mut order: Vec<usize> = (0..d.n_units()).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    order
}

/// Prediction for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub leaf: usize,
    /// `None` when the unit was unseen and the fallback was used.
    pub cluster: Option<usize>,
}

impl TreeModel {
    /// Least-squares fit of a fixed structure on `d`, with adjusted coefficients.
    pub fn fit(
        d: &ClusteredDataset,
        kind: ModelKind,
        cov: CovNode,
        units: UnitTree,
        linear: Vec<usize>,
        reference_leaf: Option<usize>,
    ) -> Result<Self> {
        let design = encode_design_with(d, &cov, &units, &linear, reference_leaf)?;
        let fit = ols_fit(&design, d.y())?;
        let n_clusters = units.n_clusters();
        let n_leaves = cov.n_leaves();
        let reference = reference_leaf.unwrap_or(n_leaves - 1);
        let mut cluster = vec![0.0; n_clusters];
        let mut leaf = vec![0.0; n_leaves];
        let mut lin = vec![0.0; linear.len()];
        let mut next_linear = 0;
        for (role, &b) in design.roles().iter().zip(&fit.coefficients) {
            match *role {
                ColumnRole::Intercept => cluster[0] = b,
                ColumnRole::Cluster(c) => cluster[c] = b,
                ColumnRole::Leaf(m) => leaf[m] = b,
                ColumnRole::Linear(_) => {
                    lin[next_linear] = b;
                    next_linear += 1;
                }
                ColumnRole::Other(_) => unreachable!("tree designs carry no untyped columns"),
            }
        }
        let model = Self {
            kind,
            outcome: d.outcome_name().to_string(),
            covariates: d.covariate_names(),
            units: d.unit_labels().to_vec(),
            unit_sizes: d.unit_sizes(),
            covariate_tree: cov,
            unit_tree: units,
            linear_terms: linear,
            reference_leaf: reference,
            coefficients: Coefficients { cluster, leaf, linear: lin },
            adjusted: Adjusted { gamma_bar: 0.0, cluster: vec![], leaf: vec![] },
            sigma2: fit.sigma2,
            rss: fit.rss,
            n_obs: d.n_obs(),
            config: None,
            cv_curve: None,
            unit_index: OnceLock::new(),
        };
        Ok(adjust_coefficients(model, d))
    }

    pub fn n_covariate_splits(&self) -> usize {
        self.covariate_tree.n_splits()
    }

    pub fn n_clusters(&self) -> usize {
        self.unit_tree.n_clusters()
    }

    /// Total number of splits over both trees.
    pub fn n_splits(&self) -> usize {
        self.n_covariate_splits() + self.n_clusters() - 1
    }

    /// Covariates the model uses: split variables plus linear terms.
    pub fn selected_covariates(&self) -> BTreeSet<usize> {
        let mut s = self.covariate_tree.split_variables();
        s.extend(self.linear_terms.iter().copied());
        s
    }

    pub fn unit_index(&self, label: &str) -> Option<usize> {
        self.unit_index
            .get_or_init(|| self.units.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect())
            .get(label)
            .copied()
    }

    pub fn cluster_of_label(&self, label: &str) -> Option<usize> {
        self.unit_index(label).map(|u| self.unit_tree.cluster_of_unit(u))
    }

    /// Leaf effect plus linear part for a covariate vector, raw coding.
    pub fn covariate_effect(&self, x: &[f64]) -> f64 {
        let m = self.covariate_tree.leaf_for(|k| x[k]);
        self.coefficients.leaf[m] + self.linear_part(x)
    }

    fn linear_part(&self, x: &[f64]) -> f64 {
        self.linear_terms.iter().zip(&self.coefficients.linear).map(|(&k, &b)| b * x[k]).sum()
    }

    /// Predicts `tr0(i) + tr(x)` from the adjusted coefficients.
    ///
    /// An unseen unit is an error unless `allow_fallback`, in which case the
    /// cluster intercepts are averaged with weights equal to each cluster's
    /// share of units.
    pub fn predict(&self, x: &[f64], unit: &str, allow_fallback: bool) -> Result<Prediction> {
        if x.len() != self.covariates.len() {
            return Err(Error::Prediction(format!(
                "expected {} covariates, got {}",
                self.covariates.len(),
                x.len()
            )));
        }
        let leaf = self.covariate_tree.leaf_for(|k| x[k]);
        let rest = self.adjusted.leaf[leaf] + self.linear_part(x);
        match self.cluster_of_label(unit) {
            Some(c) => Ok(Prediction { value: self.adjusted.cluster[c] + rest, leaf, cluster: Some(c) }),
            None if allow_fallback => {
                let n = self.unit_tree.n_units() as f64;
                let intercept: f64 = (0..self.n_clusters())
                    .map(|c| self.unit_tree.units_in(c).len() as f64 / n * self.adjusted.cluster[c])
                    .sum();
                Ok(Prediction { value: intercept + rest, leaf, cluster: None })
            }
            None => Err(Error::Prediction(format!("unit `{unit}` was not seen when fitting"))),
        }
    }

    /// Covariate part `η_X` per row and unit part `η_I` per unit of `d`
    /// (raw coding; units must be known to the model).
    pub fn decompose(&self, d: &ClusteredDataset) -> Result<(Vec<f64>, Vec<f64>)> {
        let eta_x = (0..d.n_obs()).map(|r| self.covariate_effect(&d.row(r))).collect();
        let eta_i = d
            .unit_labels()
            .iter()
            .map(|l| {
                self.cluster_of_label(l)
                    .map(|c| self.coefficients.cluster[c])
                    .ok_or_else(|| Error::Prediction(format!("unit `{l}` was not seen when fitting")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((eta_x, eta_i))
    }

    /// Structural checks run after deserialising a model document.
    pub(crate) fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |path: &str, msg: String| Err((path.to_string(), msg));
        let p = self.covariates.len();
        if let Err(e) = self.covariate_tree.validate(p) {
            return fail("covariate_tree", e);
        }
        if self.unit_tree.n_units() != self.units.len() {
            return fail(
                "unit_tree.ordering",
                format!("{} units in ordering, {} labels", self.unit_tree.n_units(), self.units.len()),
            );
        }
        if self.unit_sizes.len() != self.units.len() {
            return fail("unit_sizes", "length differs from units".into());
        }
        let m = self.covariate_tree.n_leaves();
        let c = self.unit_tree.n_clusters();
        if self.coefficients.cluster.len() != c {
            return fail("coefficients.cluster", format!("expected {c} values"));
        }
        if self.coefficients.leaf.len() != m {
            return fail("coefficients.leaf", format!("expected {m} values"));
        }
        if self.reference_leaf >= m {
            return fail("reference_leaf", format!("{} is not a leaf", self.reference_leaf));
        }
        if self.coefficients.leaf[self.reference_leaf] != 0.0 {
            return fail("coefficients.leaf", "reference leaf effect must be 0".into());
        }
        if self.coefficients.linear.len() != self.linear_terms.len() {
            return fail("coefficients.linear", "length differs from linear_terms".into());
        }
        if let Some(j) = self.linear_terms.iter().position(|&k| k >= p) {
            return fail(&format!("linear_terms[{j}]"), "covariate index out of range".into());
        }
        if self.adjusted.cluster.len() != c {
            return fail("adjusted.cluster", format!("expected {c} values"));
        }
        if self.adjusted.leaf.len() != m {
            return fail("adjusted.leaf", format!("expected {m} values"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(j) = self.units.iter().position(|u| !seen.insert(u)) {
            return fail(&format!("units[{j}]"), "duplicate unit label".into());
        }
        Ok(())
    }
}

/// Moves the unit-weighted mean leaf effect `γ̄ = (1/n) Σ_i (1/n_i) Σ_j tr(x_ij)`
/// into the cluster intercepts.
pub fn adjust_coefficients(mut model: TreeModel, d: &ClusteredDataset) -> TreeModel {
    let n_units = d.n_units() as f64;
    let mut gamma_bar = 0.0;
    for u in 0..d.n_units() {
        let rows = d.unit_rows(u);
        let s: f64 = rows
            .iter()
            .map(|&r| model.coefficients.leaf[model.covariate_tree.leaf_for(|k| d.x(r, k))])
            .sum();
        gamma_bar += s / rows.len() as f64;
    }
    gamma_bar /= n_units;
    model.adjusted = Adjusted {
        gamma_bar,
        cluster: model.coefficients.cluster.iter().map(|b| b + gamma_bar).collect(),
        leaf: model.coefficients.leaf.iter().map(|g| g - gamma_bar).collect(),
    };
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy() -> ClusteredDataset {
        // two units, one covariate
        ClusteredDataset::from_labels(
            vec![1.0, 2.0, 4.0, 3.0, 6.0, 8.0],
            &["a", "a", "a", "b", "b", "b"],
            vec!["x".into()],
            vec![vec![0.1, 0.5, 0.9, 0.2, 0.6, 0.8]],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn empty_trees_encode_to_intercept() {
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap();
        let x = encode_design(&d, &CovNode::default(), &ut).unwrap();
        assert_eq!(x.n_cols(), 1);
        assert_eq!(x.column(0), &[1.0; 6]);
        assert_eq!(x.roles(), &[ColumnRole::Intercept]);
    }

    #[test]
    fn one_covariate_split_encodes_global_intercept_and_left_indicator() {
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap();
        let cov = CovNode::default().split_leaf(0, 0, 0.55).unwrap();
        let x = encode_design(&d, &cov, &ut).unwrap();
        assert_eq!(x.n_cols(), 2);
        assert_eq!(x.column(0), &[1.0; 6]);
        assert_eq!(x.column(1), &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_clusters_and_split_encode_cluster_indicators() {
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap().split(1).unwrap();
        let cov = CovNode::default().split_leaf(0, 0, 0.55).unwrap();
        let x = encode_design(&d, &cov, &ut).unwrap();
        assert_eq!(x.roles(), &[ColumnRole::Cluster(0), ColumnRole::Cluster(1), ColumnRole::Leaf(0)]);
        assert_eq!(x.column(0), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(x.column(1), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        for r in 0..6 {
            assert_eq!(x.column(0)[r] + x.column(1)[r], 1.0);
        }
    }

    #[test]
    fn empty_leaf_is_an_encoding_error() {
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap();
        let cov = CovNode::default().split_leaf(0, 0, 5.0).unwrap();
        assert!(matches!(encode_design(&d, &cov, &ut), Err(Error::Encoding(_))));
    }

    #[test]
    fn split_leaf_renumbers_left_to_right() {
        let t = CovNode::default().split_leaf(0, 0, 0.0).unwrap();
        let t = t.split_leaf(0, 1, 1.0).unwrap();
        assert_eq!(t.n_leaves(), 3);
        assert_eq!(t.leaf_depths(), vec![2, 2, 1]);
        assert_eq!(t.leaf_for(|k| [-1.0, 0.5][k]), 0);
        assert_eq!(t.leaf_for(|k| [-1.0, 1.5][k]), 1);
        assert_eq!(t.leaf_for(|k| [1.0, 0.0][k]), 2);
        assert!(t.validate(2).is_ok());
        assert_eq!(t.split_variables().into_iter().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn unit_tree_split_and_lookup() {
        let t = UnitTree::new(vec![2, 0, 3, 1]).unwrap();
        let t = t.split(2).unwrap().split(1).unwrap();
        assert_eq!(t.cuts(), &[1, 2]);
        assert_eq!(t.depths(), &[2, 2, 1]);
        assert_eq!(t.cluster_of_unit(2), 0);
        assert_eq!(t.cluster_of_unit(0), 1);
        assert_eq!(t.cluster_of_unit(3), 2);
        assert_eq!(t.cluster_of_unit(1), 2);
        assert_eq!(t.units_in(2), &[3, 1]);
        assert!(t.split(2).is_err());
        assert!(t.split(4).is_err());
    }

    #[test]
    fn order_units_examples() {
        let d = ClusteredDataset::from_labels(vec![2.0, 0.5, 1.0], &["1", "2", "3"], vec![], vec![], &[]).unwrap();
        assert_eq!(order_units(&d), vec![1, 2, 0]);
        let d = ClusteredDataset::from_labels(vec![1.0, 1.0, 1.0], &["1", "2", "3"], vec![], vec![], &[]).unwrap();
        assert_eq!(order_units(&d), vec![0, 1, 2]);
        let d = ClusteredDataset::from_labels(vec![4.0], &["1"], vec![], vec![], &[]).unwrap();
        assert_eq!(order_units(&d), vec![0]);
    }

    #[test]
    fn adjustment_with_empty_tree_is_identity() {
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap().split(1).unwrap();
        let m = TreeModel::fit(&d, ModelKind::Ttsc, CovNode::default(), ut, vec![], None).unwrap();
        assert_eq!(m.adjusted.gamma_bar, 0.0);
        assert_eq!(m.adjusted.cluster, m.coefficients.cluster);
    }

    #[test]
    fn adjustment_two_units_by_hand() {
        // unit 1 sits in leaf 0 with γ = 2, unit 2 in the reference leaf
        let d = ClusteredDataset::from_labels(
            vec![3.0, 1.0],
            &["1", "2"],
            vec!["x".into()],
            vec![vec![0.0, 1.0]],
            &[],
        )
        .unwrap();
        let ut = UnitTree::new(vec![0, 1]).unwrap();
        let cov = CovNode::default().split_leaf(0, 0, 0.5).unwrap();
        let mut m = TreeModel::fit(&d, ModelKind::Ttsc, cov, ut, vec![], None).unwrap();
        m.coefficients.cluster = vec![1.0];
        m.coefficients.leaf = vec![2.0, 0.0];
        let m = adjust_coefficients(m, &d);
        assert_relative_eq!(m.adjusted.gamma_bar, 1.0);
        assert_eq!(m.adjusted.leaf, vec![1.0, -1.0]);
        assert_eq!(m.adjusted.cluster, vec![2.0]);
        // idempotent
        let again = adjust_coefficients(m.clone(), &d);
        assert_eq!(again.adjusted, m.adjusted);
    }

    #[test]
    fn adjustment_absorbs_constant_shift() {
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap().split(1).unwrap();
        let cov = CovNode::default().split_leaf(0, 0, 0.55).unwrap();
        let m = TreeModel::fit(&d, ModelKind::Ttsc, cov, ut, vec![], None).unwrap();
        let mut shifted = m.clone();
        for b in &mut shifted.coefficients.cluster {
            *b += 3.25;
        }
        for g in &mut shifted.coefficients.leaf {
            *g -= 3.25;
        }
        let shifted = adjust_coefficients(shifted, &d);
        for (a, b) in m.adjusted.cluster.iter().zip(&shifted.adjusted.cluster) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in m.adjusted.leaf.iter().zip(&shifted.adjusted.leaf) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn predict_known_structure() {
        // three-split structure with known coefficients
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap().split(1).unwrap();
        let cov = CovNode::default().split_leaf(0, 0, 0.55).unwrap().split_leaf(0, 0, 0.15).unwrap();
        let mut m = TreeModel::fit(&d, ModelKind::Ttsc, cov, ut, vec![], None).unwrap();
        m.coefficients.cluster = vec![10.0, 20.0];
        m.coefficients.leaf = vec![1.5, -0.5, 0.0];
        let m = adjust_coefficients(m, &d);
        // left-left region, unit in the first cluster
        let p = m.predict(&[0.1], "a", false).unwrap();
        assert_relative_eq!(p.value, 10.0 + 1.5, epsilon = 1e-12);
        assert_eq!(p.leaf, 0);
        assert_eq!(p.cluster, Some(0));
        let p = m.predict(&[0.9], "b", false).unwrap();
        assert_relative_eq!(p.value, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn predict_unseen_unit() {
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap().split(1).unwrap();
        let m = TreeModel::fit(&d, ModelKind::Ttsc, CovNode::default(), ut, vec![], None).unwrap();
        assert!(matches!(m.predict(&[0.3], "zzz", false), Err(Error::Prediction(_))));
        let p = m.predict(&[0.3], "zzz", true).unwrap();
        assert_eq!(p.cluster, None);
        // unit means 7/3 and 17/3, one unit per cluster
        assert_relative_eq!(p.value, 0.5 * (7.0 / 3.0) + 0.5 * (17.0 / 3.0), epsilon = 1e-12);
    }

    #[test]
    fn zero_split_model_predicts_grand_mean() {
        let d = toy();
        let ut = UnitTree::new(order_units(&d)).unwrap();
        let m = TreeModel::fit(&d, ModelKind::Null, CovNode::default(), ut, vec![], None).unwrap();
        for (x, u) in [(0.1, "a"), (0.7, "b")] {
            assert_relative_eq!(m.predict(&[x], u, false).unwrap().value, 4.0, epsilon = 1e-12);
        }
    }
}
