//! Tree-structured fixed-effects regression for clustered data.
//!
//! A model combines a covariate tree (piecewise-constant effects of the
//! covariates) with a unit tree (contiguous clusters of units ordered by their
//! mean outcome), fitted jointly by least squares and grown one split at a
//! time. Cross-validation picks the number of splits.

pub mod baselines;
pub mod dataset;
pub mod document;
pub mod error;
pub mod linfit;
pub mod num;
pub mod pruning;
pub mod simlab;
pub mod stepwise;
pub mod trees;

pub use baselines::{fit_lmm, fit_ltscb, fit_null, fit_perfect, LmmFit, OracleSpec};
pub use dataset::{load_csv, ClusteredDataset, CovariateKind, CsvColumns};
pub use document::{fit_model, FittedModel};
pub use error::{Error, Result};
pub use pruning::{cv_curve, fit_pruned, CvCurve};
pub use stepwise::{grow_path, FitConfig, FitPath};
pub use trees::{ModelKind, TreeModel};
