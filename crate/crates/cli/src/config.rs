//! Layered fit configuration: defaults, then the TOML file, then flags.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use fetree::{CovariateKind, FitConfig, ModelKind};
use serde::Deserialize;

use crate::{FitArgs, ModelArg, DEFAULT_SEED};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub outcome: Option<String>,
    pub unit: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub kinds: Option<HashMap<String, CovariateKind>>,
    pub model: Option<ModelKind>,
    pub max_splits: Option<usize>,
    pub min_bucket: Option<usize>,
    pub max_depth: Option<usize>,
    pub folds: Option<usize>,
    pub one_se: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub cv_out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct FitPlan {
    pub data: PathBuf,
    pub outcome: String,
    pub unit: String,
    /// `None` selects every remaining column.
    pub covariates: Option<Vec<String>>,
    pub kinds: HashMap<String, CovariateKind>,
    pub fit: FitConfig,
    pub out: PathBuf,
    pub cv_out: PathBuf,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ttsc => ModelKind::Ttsc,
            ModelArg::Ltsc => ModelKind::Ltsc,
            ModelArg::Ltscb => ModelKind::Ltscb,
            ModelArg::Null => ModelKind::Null,
            ModelArg::Lmm => ModelKind::Lmm,
        }
    }
}

pub fn read_file(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn parse_kinds(pairs: &[String]) -> anyhow::Result<HashMap<String, CovariateKind>> {
    pairs
        .iter()
        .map(|p| {
            let (name, kind) = p.split_once('=').ok_or_else(|| anyhow!("kind override `{p}` is not NAME=KIND"))?;
            Ok((name.trim().to_string(), kind.parse::<CovariateKind>()?))
        })
        .collect()
}

/// Sibling path with the extension replaced, e.g. `model.json` → `model.cv.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Merges flags over the file over defaults and checks the result.
pub fn resolve(args: FitArgs) -> anyhow::Result<FitPlan> {
    let file = match &args.config {
        Some(p) => read_file(p)?,
        None => FileConfig::default(),
    };
    let data = args.data.or(file.data).ok_or_else(|| anyhow!("no data file given (--data or `data` in the config)"))?;
    let kinds = match args.kinds {
        Some(k) => parse_kinds(&k)?,
        None => file.kinds.unwrap_or_default(),
    };
    let default = FitConfig::default();
    let fit = FitConfig {
        model: args.model.map(ModelKind::from).or(file.model).unwrap_or(default.model),
        max_splits: args.max_splits.or(file.max_splits).unwrap_or(default.max_splits),
        min_bucket: args.min_bucket.or(file.min_bucket),
        max_depth: args.max_depth.or(file.max_depth),
        folds: args.folds.or(file.folds).unwrap_or(default.folds),
        one_se: args.one_se.or(file.one_se).unwrap_or(default.one_se),
        seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        scoring: default.scoring,
    };
    fit.validate()?;
    if fit.max_depth == Some(0) && fit.max_splits > 0 && fit.model != ModelKind::Null && fit.model != ModelKind::Lmm {
        bail!("max_depth 0 allows no splits; set max_splits to 0 or raise max_depth");
    }
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("model.json"));
    let cv_out = args.cv_out.or(file.cv_out).unwrap_or_else(|| sibling(&out, ".cv.csv"));
    Ok(FitPlan {
        data,
        outcome: args.outcome.or(file.outcome).unwrap_or_else(|| "y".into()),
        unit: args.unit.or(file.unit).unwrap_or_else(|| "unit".into()),
        covariates: args.covariates.or(file.covariates),
        kinds,
        fit,
        out,
        cv_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "data = \"a.csv\"\nmax_splits = 7\nfolds = 5\nmodel = \"ltsc\"\n").unwrap();
        let plan = resolve(FitArgs { config: Some(cfg), folds: Some(3), ..FitArgs::default() }).unwrap();
        assert_eq!(plan.fit.max_splits, 7);
        assert_eq!(plan.fit.folds, 3);
        assert_eq!(plan.fit.model, ModelKind::Ltsc);
        assert_eq!(plan.data, PathBuf::from("a.csv"));
        assert_eq!(plan.cv_out, PathBuf::from("model.cv.csv"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "max_split = 7\n").unwrap();
        assert!(resolve(FitArgs { config: Some(cfg), ..FitArgs::default() }).is_err());
    }

    #[test]
    fn kind_pairs() {
        let k = parse_kinds(&["a=binary".into(), "b = ordinal".into()]).unwrap();
        assert_eq!(k["a"], CovariateKind::Binary);
        assert_eq!(k["b"], CovariateKind::Ordinal);
        assert!(parse_kinds(&["a".into()]).is_err());
    }
}
