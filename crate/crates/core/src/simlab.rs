//! Simulation study: data-generating processes, accuracy metrics, a parallel
//! replication runner, and result summaries.
//!
//! Four scenarios cross a linear or tree-shaped covariate effect with normal
//! random or clustered fixed unit intercepts. Six settings vary one design
//! parameter each against the base setting (20 units of 50 observations, ten
//! covariates, unit error variance).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_lmm, fit_ltscb, fit_null, fit_perfect, CovariatePart, OracleSpec, UnitPart};
use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};
use crate::pruning::fit_pruned;
use crate::stepwise::FitConfig;
use crate::trees::{ModelKind, TreeModel};

/// Informative covariates (0-based): X1, X2 and X7.
pub const INFORMATIVE: [usize; 3] = [0, 1, 6];

const BETA: [(usize, f64); 3] = [(0, 0.8), (1, 0.4), (6, 0.8)];
const GAMMA: [f64; 4] = [-1.35, -0.45, 0.45, 1.35];
const CLUSTERS_3: [f64; 3] = [-1.25, 0.0, 1.25];
const CLUSTERS_6: [f64; 6] = [-1.5, -0.9, -0.3, 0.3, 0.9, 1.5];

/// Random-stream purposes.
pub const STREAM_DATA: u64 = 0;
pub const STREAM_CV: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub scenario: u8,
    pub setting: u8,
    /// Replaces the setting's error variance, e.g. 0 for noiseless data.
    pub noise_var: Option<f64>,
}

impl SimSpec {
    pub fn new(scenario: u8, setting: u8) -> Result<Self> {
        if !(1..=4).contains(&scenario) {
            return Err(Error::Config(format!("scenario must be 1-4, got {scenario}")));
        }
        if !(1..=6).contains(&setting) {
            return Err(Error::Config(format!("setting must be 1-6, got {setting}")));
        }
        Ok(Self { scenario, setting, noise_var: None })
    }

    pub fn with_noise_var(mut self, v: f64) -> Self {
        self.noise_var = Some(v);
        self
    }

    pub fn n_units(&self) -> usize {
        match self.setting {
            2 => 40,
            3 => 100,
            _ => 20,
        }
    }

    pub fn per_unit(&self) -> usize {
        match self.setting {
            2 => 25,
            3 => 10,
            _ => 50,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_units() * self.per_unit()
    }

    pub fn n_covariates(&self) -> usize {
        if self.setting == 4 {
            100
        } else {
            10
        }
    }

    pub fn sigma2(&self) -> f64 {
        self.noise_var.unwrap_or(if self.setting == 5 { 2.0 } else { 1.0 })
    }

    /// Random unit intercepts (scenarios 1 and 2) versus clustered fixed ones.
    pub fn random_units(&self) -> bool {
        self.scenario <= 2
    }

    /// Tree-shaped covariate effect (scenarios 2 and 4) versus linear.
    pub fn tree_covariates(&self) -> bool {
        self.scenario.is_multiple_of(2)
    }

    /// Correlation between X1, X2 and the random intercepts.
    pub fn rho(&self) -> Option<f64> {
        (self.random_units() && self.setting == 6).then_some(0.9)
    }

    pub fn cluster_intercepts(&self) -> Option<&'static [f64]> {
        match (self.random_units(), self.setting) {
            (true, _) => None,
            (false, 6) => Some(&CLUSTERS_6),
            (false, _) => Some(&CLUSTERS_3),
        }
    }
}

impl fmt::Display for SimSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scenario {} setting {}", self.scenario, self.setting)
    }
}

/// The generating model of one simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    /// Covariate part per row.
    pub eta_x: Vec<f64>,
    /// Unit part per unit.
    pub eta_i: Vec<f64>,
    pub informative: Vec<usize>,
    pub oracle: OracleSpec,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream keyed by `(seed, scenario, setting, rep, purpose)`.
pub fn stream_rng(seed: u64, spec: &SimSpec, rep: usize, purpose: u64) -> ChaCha8Rng {
    let mut state = seed;
    for part in [u64::from(spec.scenario), u64::from(spec.setting), rep as u64, purpose] {
        state = splitmix64(&mut state) ^ part;
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Leaf of the true covariate tree.
fn region(x1: f64, x2: f64, x7: f64) -> usize {
    match (x1 <= 0.0, x2 <= 0.0, x7 == 1.0) {
        (true, true, _) => 0,
        (true, false, _) => 1,
        (false, _, false) => 2,
        (false, _, true) => 3,
    }
}

/// Draws one replication's data set.
pub fn generate(spec: &SimSpec, seed: u64, rep: usize) -> Result<(ClusteredDataset, SimTruth)> {
    let mut rng = stream_rng(seed, spec, rep, STREAM_DATA);
    let (n, m, p) = (spec.n_units(), spec.per_unit(), spec.n_covariates());
    let n_obs = n * m;
    let coin = Bernoulli::new(0.5).expect("valid probability");

    let (eta_i, clusters): (Vec<f64>, Option<Vec<usize>>) = match spec.cluster_intercepts() {
        None => ((0..n).map(|_| rng.sample(StandardNormal)).collect(), None),
        Some(levels) => {
            let c = levels.len();
            let idx: Vec<usize> = (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    ((u * c as f64).ceil() as usize).clamp(1, c) - 1
                })
                .collect();
            (idx.iter().map(|&k| levels[k]).collect(), Some(idx))
        }
    };

    let mut columns = vec![Vec::with_capacity(n_obs); p];
    let mut labels = Vec::with_capacity(n_obs);
    let mut eta_x = Vec::with_capacity(n_obs);
    let mut regions = Vec::with_capacity(n_obs);
    let mut y = Vec::with_capacity(n_obs);
    let sd = spec.sigma2().sqrt();
    for (i, &unit_effect) in eta_i.iter().enumerate() {
        for _ in 0..m {
            for (k, col) in columns.iter_mut().enumerate() {
                let continuous = k < 6 || (10..15).contains(&k);
                let v = if continuous {
                    let z: f64 = rng.sample(StandardNormal);
                    match spec.rho() {
                        Some(r) if k < 2 => r * unit_effect + (1.0 - r * r).sqrt() * z,
                        _ => z,
                    }
                } else {
                    f64::from(u8::from(rng.sample(coin)))
                };
                col.push(v);
            }
            let r = region(columns[0].last().copied().unwrap(), columns[1].last().copied().unwrap(), columns[6].last().copied().unwrap());
            let ex = if spec.tree_covariates() {
                GAMMA[r]
            } else {
                BETA.iter().map(|&(k, b)| b * columns[k].last().unwrap()).sum()
            };
            let noise: f64 = rng.sample(StandardNormal);
            y.push(ex + unit_effect + sd * noise);
            eta_x.push(ex);
            regions.push(r);
            labels.push(format!("u{:03}", i + 1));
        }
    }
    let names = (1..=p).map(|k| format!("X{k}")).collect();
    let d = ClusteredDataset::from_labels(y, &labels, names, columns, &[])?.with_outcome_name("y");
    let oracle = OracleSpec {
        covariate: if spec.tree_covariates() {
            CovariatePart::Regions(regions)
        } else {
            CovariatePart::Linear(INFORMATIVE.to_vec())
        },
        unit: match clusters {
            Some(c) => UnitPart::Clusters(c),
            None => UnitPart::Random,
        },
    };
    Ok((d, SimTruth { eta_x, eta_i, informative: INFORMATIVE.to_vec(), oracle }))
}

/// `(1/n) Σ_i (1/n_i) Σ_j v_ij` for a per-row vector.
pub fn unit_weighted_mean(d: &ClusteredDataset, v: &[f64]) -> f64 {
    let n = d.n_units();
    (0..n)
        .map(|u| {
            let rows = d.unit_rows(u);
            rows.iter().map(|&r| v[r]).sum::<f64>() / rows.len() as f64
        })
        .sum::<f64>()
        / n as f64
}

/// Weighted RMS difference of the centred covariate parts.
pub fn rmse_x(d: &ClusteredDataset, true_x: &[f64], est_x: &[f64]) -> f64 {
    let shift = unit_weighted_mean(d, true_x) - unit_weighted_mean(d, est_x);
    let diff: Vec<f64> = true_x.iter().zip(est_x).map(|(t, e)| (t - e - shift).powi(2)).collect();
    unit_weighted_mean(d, &diff).sqrt()
}

/// Weighted RMS difference of the expected unit outcomes
/// `η_I(i) + mean η_X` (true and estimated sides alike).
pub fn rmse_i(d: &ClusteredDataset, true_x: &[f64], true_i: &[f64], est_x: &[f64], est_i: &[f64]) -> f64 {
    let shift = unit_weighted_mean(d, true_x) - unit_weighted_mean(d, est_x);
    let n = d.n_units();
    let ss: f64 = (0..n).map(|u| (true_i[u] - est_i[u] + shift).powi(2)).sum();
    (ss / n as f64).sqrt()
}

/// `(TPR, FPR)` of a selected covariate set.
pub fn tpr_fpr(selected: &BTreeSet<usize>, informative: &[usize], p: usize) -> (f64, f64) {
    let info: BTreeSet<usize> = informative.iter().copied().collect();
    let tp = selected.intersection(&info).count();
    let fp = selected.iter().filter(|k| **k < p && !info.contains(k)).count();
    let noise = p - info.len();
    let tpr = if info.is_empty() { 0.0 } else { tp as f64 / info.len() as f64 };
    let fpr = if noise == 0 { 0.0 } else { fp as f64 / noise as f64 };
    (tpr, fpr)
}

/// Models compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StudyModel {
    Ttsc,
    Ltsc,
    Ltscb,
    Lmm,
    Null,
    Perfect,
}

impl StudyModel {
    pub const ALL: [StudyModel; 6] = [Self::Ttsc, Self::Ltsc, Self::Ltscb, Self::Lmm, Self::Null, Self::Perfect];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ttsc => "ttsc",
            Self::Ltsc => "ltsc",
            Self::Ltscb => "ltscb",
            Self::Lmm => "lmm",
            Self::Null => "null",
            Self::Perfect => "perfect",
        }
    }

    /// Whether TPR and FPR are reported for this model.
    pub fn selects_variables(self) -> bool {
        matches!(self, Self::Ttsc | Self::Ltscb | Self::Null)
    }
}

impl fmt::Display for StudyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::Config(format!("unknown model `{s}` (expected ttsc, ltsc, ltscb, lmm, null or perfect)"))
        })
    }
}

/// One line of the raw results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: u8,
    pub setting: u8,
    pub rep: usize,
    pub model: String,
    pub rmse_x: f64,
    pub rmse_i: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub n_splits_cov: Option<usize>,
    pub n_clusters: Option<usize>,
    pub seed: u64,
}

/// A model that failed to fit in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub scenario: u8,
    pub setting: u8,
    pub rep: usize,
    pub model: StudyModel,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<Failure>,
}

/// Fit settings used for tree models in the study.
pub fn study_config(model: ModelKind, cv_seed: u64) -> FitConfig {
    FitConfig { model, max_splits: 20, min_bucket: None, max_depth: None, folds: 10, one_se: true, seed: cv_seed, ..FitConfig::default() }
}

struct Outcome {
    eta_x: Vec<f64>,
    eta_i: Vec<f64>,
    selected: Option<BTreeSet<usize>>,
    tree: Option<(usize, usize)>,
}

fn tree_outcome(m: &TreeModel, d: &ClusteredDataset, selects: bool) -> Result<Outcome> {
    let (eta_x, eta_i) = m.decompose(d)?;
    Ok(Outcome {
        eta_x,
        eta_i,
        selected: selects.then(|| m.selected_covariates()),
        tree: Some((m.n_covariate_splits(), m.n_clusters())),
    })
}

fn fit_one(model: StudyModel, d: &ClusteredDataset, truth: &SimTruth, cv_seed: u64) -> Result<Outcome> {
    match model {
        StudyModel::Ttsc => tree_outcome(&fit_pruned(d, &study_config(ModelKind::Ttsc, cv_seed))?, d, true),
        StudyModel::Ltsc => tree_outcome(&fit_pruned(d, &study_config(ModelKind::Ltsc, cv_seed))?, d, false),
        StudyModel::Ltscb => tree_outcome(&fit_ltscb(d, &study_config(ModelKind::Ltscb, cv_seed))?, d, true),
        StudyModel::Null => tree_outcome(&fit_null(d)?, d, true),
        StudyModel::Lmm => {
            let (eta_x, eta_i) = fit_lmm(d)?.decompose(d)?;
            Ok(Outcome { eta_x, eta_i, selected: None, tree: None })
        }
        StudyModel::Perfect => {
            let f = fit_perfect(d, &truth.oracle)?;
            Ok(Outcome { eta_x: f.eta_x, eta_i: f.eta_i, selected: None, tree: None })
        }
    }
}

/// Generates one replication and fits every model on the same data.
pub fn run_replication(spec: &SimSpec, models: &[StudyModel], seed: u64, rep: usize) -> StudyOutput {
    let mut out = StudyOutput::default();
    let fail = |model: StudyModel, e: Error| Failure {
        scenario: spec.scenario,
        setting: spec.setting,
        rep,
        model,
        message: e.to_string(),
    };
    let (d, truth) = match generate(spec, seed, rep) {
        Ok(x) => x,
        Err(e) => {
            out.failures.extend(models.iter().map(|&m| fail(m, Error::Validation(e.to_string()))));
            return out;
        }
    };
    let cv_seed = stream_rng(seed, spec, rep, STREAM_CV).next_u64();
    for &model in models {
        match fit_one(model, &d, &truth, cv_seed) {
            Ok(o) => {
                let (tpr, fpr) = match &o.selected {
                    Some(s) => {
                        let (t, f) = tpr_fpr(s, &truth.informative, d.n_covariates());
                        (Some(t), Some(f))
                    }
                    None => (None, None),
                };
                out.rows.push(ResultRow {
                    scenario: spec.scenario,
                    setting: spec.setting,
                    rep,
                    model: model.to_string(),
                    rmse_x: rmse_x(&d, &truth.eta_x, &o.eta_x),
                    rmse_i: rmse_i(&d, &truth.eta_x, &truth.eta_i, &o.eta_x, &o.eta_i),
                    tpr,
                    fpr,
                    n_splits_cov: o.tree.map(|t| t.0),
                    n_clusters: o.tree.map(|t| t.1),
                    seed,
                });
            }
            Err(e) => out.failures.push(fail(model, e)),
        }
    }
    out
}

/// Runs `reps` replications of every spec, in parallel over replications.
/// Rows come back ordered by (spec, rep, model) whatever the worker count.
pub fn run_study(
    specs: &[SimSpec],
    models: &[StudyModel],
    reps: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<StudyOutput> {
    let jobs: Vec<(SimSpec, usize)> = specs.iter().flat_map(|s| (0..reps).map(move |r| (*s, r))).collect();
    let run = || jobs.par_iter().map(|(s, r)| run_replication(s, models, seed, *r)).collect::<Vec<_>>();
    let parts = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {w} workers: {e}")))?
            .install(run),
        None => run(),
    };
    let mut out = StudyOutput::default();
    for p in parts {
        out.rows.extend(p.rows);
        out.failures.extend(p.failures);
    }
    Ok(out)
}

pub fn write_results<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record([
        "scenario", "setting", "rep", "model", "rmse_x", "rmse_i", "tpr", "fpr", "n_splits_cov", "n_clusters", "seed",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows = rdr
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Load(format!("results row {}: {e}", i + 1))))
        .collect::<Result<Vec<ResultRow>>>()?;
    if rows.is_empty() {
        return Err(Error::Load("results file has no rows".into()));
    }
    Ok(rows)
}

/// Type-7 sample quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Rows grouped by (scenario, setting, model).
type Groups<'a> = BTreeMap<(u8, u8, String), Vec<&'a ResultRow>>;

fn groups(rows: &[ResultRow]) -> Groups<'_> {
    let mut g: Groups = BTreeMap::new();
    for r in rows {
        g.entry((r.scenario, r.setting, r.model.clone())).or_default().push(r);
    }
    g
}

/// Known models first in their usual order, unknown names after.
fn model_order(names: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = names.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    v.sort_by_key(|n| (n.parse::<StudyModel>().map_or(usize::MAX, |m| m as usize), n.clone()));
    v
}

/// Markdown tables: mean TPR/FPR of the selecting models, then median RMSEs,
/// one block per scenario with settings as columns.
pub fn write_summary<W: Write>(rows: &[ResultRow], mut w: W) -> Result<()> {
    let g = groups(rows);
    let scenarios: BTreeSet<u8> = rows.iter().map(|r| r.scenario).collect();
    for s in scenarios {
        let settings: BTreeSet<u8> = rows.iter().filter(|r| r.scenario == s).map(|r| r.setting).collect();
        let models = model_order(rows.iter().filter(|r| r.scenario == s).map(|r| r.model.clone()));
        let header = |w: &mut W, first: &str| -> Result<()> {
            write!(w, "| {first} |")?;
            for st in &settings {
                write!(w, " setting {st} |")?;
            }
            writeln!(w)?;
            write!(w, "|---|")?;
            for _ in &settings {
                write!(w, "---|")?;
            }
            writeln!(w)?;
            Ok(())
        };
        writeln!(w, "## Scenario {s}\n")?;
        writeln!(w, "### Variable selection (mean TPR / FPR)\n")?;
        header(&mut w, "model")?;
        for m in &models {
            let cells: Vec<Option<String>> = settings
                .iter()
                .map(|st| {
                    let rs = g.get(&(s, *st, m.clone()))?;
                    let tpr: Vec<f64> = rs.iter().filter_map(|r| r.tpr).collect();
                    let fpr: Vec<f64> = rs.iter().filter_map(|r| r.fpr).collect();
                    (!tpr.is_empty()).then(|| format!("{:.3} / {:.3}", mean(&tpr), mean(&fpr)))
                })
                .collect();
            if cells.iter().all(Option::is_none) {
                continue;
            }
            write!(w, "| {m} |")?;
            for c in cells {
                write!(w, " {} |", c.unwrap_or_else(|| "-".into()))?;
            }
            writeln!(w)?;
        }
        for (title, metric) in [("RMSE_X", 0), ("RMSE_I", 1)] {
            writeln!(w, "\n### {title} (median)\n")?;
            header(&mut w, "model")?;
            for m in &models {
                write!(w, "| {m} |")?;
                for st in &settings {
                    match g.get(&(s, *st, m.clone())) {
                        Some(rs) => {
                            let v: Vec<f64> = rs.iter().map(|r| if metric == 0 { r.rmse_x } else { r.rmse_i }).collect();
                            write!(w, " {:.3} |", median(&v))?;
                        }
                        None => write!(w, " - |")?,
                    }
                }
                writeln!(w)?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Five-number summaries of both RMSEs per (scenario, setting, model).
pub fn write_quartiles<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "setting", "model", "metric", "n", "min", "q1", "median", "q3", "max"])?;
    let g = groups(rows);
    let mut keys: Vec<&(u8, u8, String)> = g.keys().collect();
    let order = model_order(rows.iter().map(|r| r.model.clone()));
    keys.sort_by_key(|(s, st, m)| (*s, *st, order.iter().position(|o| o == m)));
    for key in keys {
        let rs = &g[key];
        for (metric, pick) in [("rmse_x", 0), ("rmse_i", 1)] {
            let mut v: Vec<f64> = rs.iter().map(|r| if pick == 0 { r.rmse_x } else { r.rmse_i }).collect();
            v.sort_by(f64::total_cmp);
            let mut rec = vec![key.0.to_string(), key.1.to_string(), key.2.clone(), metric.to_string(), v.len().to_string()];
            rec.extend([0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&q| quantile(&v, q).to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_units() -> ClusteredDataset {
        ClusteredDataset::from_labels(vec![0.0; 4], &["a", "a", "b", "b"], vec![], vec![], &[]).unwrap()
    }

    #[test]
    fn rmse_x_hand_case() {
        // centred truth (.5,.5,-.5,-.5), centred estimate (.75,-.25,-.25,-.25):
        // unit means of squared differences .3125 and .0625
        let got = rmse_x(&two_units(), &[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]);
        assert!((got - 0.1875f64.sqrt()).abs() < 1e-15, "{got}");
    }

    #[test]
    fn rmse_x_ignores_constants() {
        let d = two_units();
        let t = [0.3, -1.0, 2.0, 0.1];
        let e: Vec<f64> = t.iter().map(|v| v + 7.5).collect();
        assert!(rmse_x(&d, &t, &e) < 1e-15);
    }

    #[test]
    fn rmse_i_shift_between_parts() {
        let d = two_units();
        let tx = [0.3, -1.0, 2.0, 0.1];
        let ti = [1.0, -1.0];
        let ex = [0.2, -0.8, 1.9, 0.3];
        let ei = [0.7, -1.4];
        let a = (rmse_x(&d, &tx, &ex), rmse_i(&d, &tx, &ti, &ex, &ei));
        let ex2: Vec<f64> = ex.iter().map(|v| v + 3.0).collect();
        let ei2: Vec<f64> = ei.iter().map(|v| v - 3.0).collect();
        let b = (rmse_x(&d, &tx, &ex2), rmse_i(&d, &tx, &ti, &ex2, &ei2));
        assert!((a.0 - b.0).abs() < 1e-14 && (a.1 - b.1).abs() < 1e-14);
        assert!(rmse_i(&d, &tx, &ti, &tx, &ti) < 1e-15);
    }

    #[test]
    fn tpr_fpr_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(tpr_fpr(&s(&[0, 6]), &INFORMATIVE, 10), (2.0 / 3.0, 0.0));
        assert_eq!(tpr_fpr(&s(&(0..10).collect::<Vec<_>>()), &INFORMATIVE, 10), (1.0, 1.0));
        assert_eq!(tpr_fpr(&s(&[]), &INFORMATIVE, 10), (0.0, 0.0));
        assert_eq!(tpr_fpr(&s(&[6, 3, 0]), &[6, 1, 0], 10), tpr_fpr(&s(&[0, 3, 6]), &INFORMATIVE, 10));
    }

    #[test]
    fn spec_table() {
        let s = |a, b| SimSpec::new(a, b).unwrap();
        assert_eq!((s(1, 1).n_units(), s(1, 1).per_unit(), s(1, 1).n_covariates(), s(1, 1).sigma2()), (20, 50, 10, 1.0));
        assert_eq!((s(2, 2).n_units(), s(2, 2).per_unit()), (40, 25));
        assert_eq!((s(3, 3).n_units(), s(3, 3).per_unit()), (100, 10));
        assert_eq!(s(4, 4).n_covariates(), 100);
        assert_eq!(s(1, 5).sigma2(), 2.0);
        assert_eq!(s(1, 6).rho(), Some(0.9));
        assert_eq!(s(3, 6).rho(), None);
        assert_eq!(s(3, 6).cluster_intercepts().unwrap().len(), 6);
        assert_eq!(s(4, 1).cluster_intercepts().unwrap(), &CLUSTERS_3);
        assert!(SimSpec::new(5, 1).is_err());
        assert!(SimSpec::new(1, 0).is_err());
    }

    #[test]
    fn noiseless_outcome_is_the_predictor() {
        for scenario in 1..=4 {
            let spec = SimSpec::new(scenario, 1).unwrap().with_noise_var(0.0);
            let (d, t) = generate(&spec, 5, 0).unwrap();
            for r in 0..d.n_obs() {
                assert_eq!(d.y()[r], t.eta_x[r] + t.eta_i[d.unit_of(r)]);
            }
        }
    }

    #[test]
    fn generated_design_matches_scenario() {
        let (d, t) = generate(&SimSpec::new(2, 1).unwrap(), 1, 3).unwrap();
        assert_eq!((d.n_obs(), d.n_units(), d.n_covariates()), (1000, 20, 10));
        for r in 0..d.n_obs() {
            let want = GAMMA[region(d.x(r, 0), d.x(r, 1), d.x(r, 6))];
            assert_eq!(t.eta_x[r], want);
            for k in 6..10 {
                assert!(d.x(r, k) == 0.0 || d.x(r, k) == 1.0);
            }
        }
        let (d, t) = generate(&SimSpec::new(3, 1).unwrap(), 1, 3).unwrap();
        assert!(t.eta_i.iter().all(|v| CLUSTERS_3.contains(v)));
        for r in 0..d.n_obs() {
            let want = 0.8 * d.x(r, 0) + 0.4 * d.x(r, 1) + 0.8 * d.x(r, 6);
            assert!((t.eta_x[r] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn continuous_covariates_are_standard_normal() {
        let (d, _) = generate(&SimSpec::new(1, 4).unwrap(), 2, 0).unwrap();
        for k in (0..6).chain(10..15) {
            let c = d.column(k);
            let m = mean(c);
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64;
            assert!(m.abs() < 0.1 && (v - 1.0).abs() < 0.15, "X{}: {m} {v}", k + 1);
        }
    }

    #[test]
    fn correlated_setting_hits_target() {
        let (d, t) = generate(&SimSpec::new(1, 6).unwrap(), 4, 0).unwrap();
        let b: Vec<f64> = (0..d.n_obs()).map(|r| t.eta_i[d.unit_of(r)]).collect();
        for k in 0..2 {
            let x = d.column(k);
            let (mx, mb) = (mean(x), mean(&b));
            let cov: f64 = x.iter().zip(&b).map(|(a, c)| (a - mx) * (c - mb)).sum();
            let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let vb: f64 = b.iter().map(|c| (c - mb).powi(2)).sum();
            let r = cov / (vx * vb).sqrt();
            assert!((r - 0.9).abs() < 0.05, "corr {r}");
        }
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let s = SimSpec::new(1, 1).unwrap();
        let a = stream_rng(1, &s, 0, STREAM_DATA).next_u64();
        assert_eq!(a, stream_rng(1, &s, 0, STREAM_DATA).next_u64());
        assert_ne!(a, stream_rng(1, &s, 1, STREAM_DATA).next_u64());
        assert_ne!(a, stream_rng(1, &s, 0, STREAM_CV).next_u64());
        assert_ne!(a, stream_rng(2, &s, 0, STREAM_DATA).next_u64());
        assert_ne!(a, stream_rng(1, &SimSpec::new(2, 1).unwrap(), 0, STREAM_DATA).next_u64());
    }

    #[test]
    fn quantiles_type_seven() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[3.0], 0.75), 3.0);
    }

    #[test]
    fn null_replication_has_closed_form_rmse() {
        let spec = SimSpec::new(3, 1).unwrap();
        let out = run_study(&[spec], &[StudyModel::Null], 1, 9, Some(1)).unwrap();
        assert!(out.failures.is_empty());
        let row = &out.rows[0];
        assert_eq!((row.tpr, row.fpr), (Some(0.0), Some(0.0)));
        let (d, t) = generate(&spec, 9, 0).unwrap();
        // Null: η̂_X ≡ 0 so RMSE_X is the weighted RMS of the centred truth
        let cx = unit_weighted_mean(&d, &t.eta_x);
        let sq: Vec<f64> = t.eta_x.iter().map(|v| (v - cx).powi(2)).collect();
        assert!((row.rmse_x - unit_weighted_mean(&d, &sq).sqrt()).abs() < 1e-12);
        // η̂_I is the grand mean; compare expected unit outcomes
        let grand = d.y().iter().sum::<f64>() / d.n_obs() as f64;
        let ss: f64 = t.eta_i.iter().map(|b| (b + cx - grand).powi(2)).sum();
        assert!((row.rmse_i - (ss / 20.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn results_round_trip_through_csv() {
        let rows = vec![
            ResultRow { scenario: 1, setting: 2, rep: 0, model: "lmm".into(), rmse_x: 0.125, rmse_i: 0.3, tpr: None, fpr: None, n_splits_cov: None, n_clusters: None, seed: 7 },
            ResultRow { scenario: 1, setting: 2, rep: 0, model: "ttsc".into(), rmse_x: 0.1, rmse_i: 0.2, tpr: Some(1.0), fpr: Some(0.0), n_splits_cov: Some(3), n_clusters: Some(2), seed: 7 },
        ];
        let mut buf = Vec::new();
        write_results(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario,setting,rep,model,rmse_x,rmse_i,tpr,fpr,n_splits_cov,n_clusters,seed\n"));
        assert!(text.contains("1,2,0,lmm,0.125,0.3,,,,,7"));
        assert_eq!(read_results(buf.as_slice()).unwrap(), rows);
        assert!(read_results("scenario,setting,rep,model,rmse_x,rmse_i,tpr,fpr,n_splits_cov,n_clusters,seed\n".as_bytes()).is_err());
    }
}
