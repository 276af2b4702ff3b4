//! JSON model documents.
//!
//! Floats are stored as decimal strings so documents round-trip bit for bit.

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_lmm, fit_null, LmmFit};
use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};
use crate::pruning::fit_pruned;
use crate::stepwise::FitConfig;
use crate::trees::{ModelKind, TreeModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub enum FittedModel {
    Tree(TreeModel),
    Lmm(LmmFit),
}

#[derive(Serialize)]
struct Document<'a, M> {
    format_version: u32,
    family: &'a str,
    model: &'a M,
}

fn parse_error(path: &str, message: impl ToString) -> Error {
    Error::Parse { path: path.to_string(), message: message.to_string() }
}

fn field<T: for<'de> Deserialize<'de>>(v: serde_json::Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
        parse_error(&path, e.inner())
    })
}

/// One prediction with its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedRow {
    pub value: f64,
    pub leaf: Option<usize>,
    /// Cluster (tree models) or unit (mixed model); `None` for the fallback.
    pub group: Option<usize>,
    pub fallback: bool,
}

/// Fits the model named in `cfg`, with cross-validated pruning for the tree models.
pub fn fit_model(d: &ClusteredDataset, cfg: &FitConfig) -> Result<FittedModel> {
    match cfg.model {
        ModelKind::Lmm => Ok(FittedModel::Lmm(fit_lmm(d)?)),
        ModelKind::Null => Ok(FittedModel::Tree(fit_null(d)?)),
        _ => Ok(FittedModel::Tree(fit_pruned(d, cfg)?)),
    }
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Tree(m) => m.kind,
            FittedModel::Lmm(_) => ModelKind::Lmm,
        }
    }

    pub fn covariates(&self) -> &[String] {
        match self {
            FittedModel::Tree(m) => &m.covariates,
            FittedModel::Lmm(m) => &m.covariates,
        }
    }

    pub fn predict(&self, x: &[f64], unit: &str, allow_fallback: bool) -> Result<PredictedRow> {
        match self {
            FittedModel::Tree(m) => {
                let p = m.predict(x, unit, allow_fallback)?;
                Ok(PredictedRow { value: p.value, leaf: Some(p.leaf), group: p.cluster, fallback: p.cluster.is_none() })
            }
            FittedModel::Lmm(m) => {
                let (value, u) = m.predict(x, unit, allow_fallback)?;
                Ok(PredictedRow { value, leaf: None, group: u, fallback: u.is_none() })
            }
        }
    }

    /// Covariate part per row and unit part per unit.
    pub fn decompose(&self, d: &ClusteredDataset) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            FittedModel::Tree(m) => m.decompose(d),
            FittedModel::Lmm(m) => m.decompose(d),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let text = match self {
            FittedModel::Tree(m) => {
                serde_json::to_string_pretty(&Document { format_version: FORMAT_VERSION, family: "tree", model: m })
            }
            FittedModel::Lmm(m) => {
                serde_json::to_string_pretty(&Document { format_version: FORMAT_VERSION, family: "lmm", model: m })
            }
        };
        text.map_err(|e| parse_error(".", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(".", e))?;
        let obj = doc.as_object_mut().ok_or_else(|| parse_error(".", "expected a JSON object"))?;
        let version: u32 = field(obj.remove("format_version").unwrap_or_default(), "format_version")?;
        if version != FORMAT_VERSION {
            return Err(parse_error(
                "format_version",
                format!("unsupported version {version} (expected {FORMAT_VERSION})"),
            ));
        }
        let family: String = field(obj.remove("family").unwrap_or_default(), "family")?;
        let model = obj.remove("model").ok_or_else(|| parse_error("model", "missing field"))?;
        let (parsed, checked) = match family.as_str() {
            "tree" => {
                let m: TreeModel = field(model, "model")?;
                let c = m.validate();
                (FittedModel::Tree(m), c)
            }
            "lmm" => {
                let m: LmmFit = field(model, "model")?;
                let c = m.validate();
                (FittedModel::Lmm(m), c)
            }
            other => return Err(parse_error("family", format!("unknown model family `{other}`"))),
        };
        checked.map_err(|(path, message)| parse_error(&format!("model.{path}"), message))?;
        Ok(parsed)
    }
}
