//! Human-readable fit summaries.

use std::fmt::Write;

use fetree::{FitConfig, FittedModel, LmmFit, TreeModel};

fn config_header(out: &mut String, cfg: &FitConfig) {
    let opt = |v: Option<usize>| v.map_or("none".to_string(), |x| x.to_string());
    writeln!(
        out,
        "config: model={} max_splits={} min_bucket={} max_depth={} folds={} one_se={} seed={}",
        cfg.model,
        cfg.max_splits,
        opt(cfg.min_bucket),
        opt(cfg.max_depth),
        cfg.folds,
        cfg.one_se,
        cfg.seed
    )
    .unwrap();
}

fn tree(out: &mut String, m: &TreeModel) {
    writeln!(out, "observations: {}  units: {}  outcome: {}", m.n_obs, m.units.len(), m.outcome).unwrap();
    if let Some(c) = &m.cv_curve {
        writeln!(
            out,
            "cross-validation: s_max={} s_1se={} selected={} (folds used {}, held-out rows dropped {})",
            c.s_max, c.s_1se, c.selected, c.effective_folds, c.dropped_rows
        )
        .unwrap();
    }
    writeln!(
        out,
        "splits: {} covariate, {} unit; rss {}; sigma2 {}",
        m.n_covariate_splits(),
        m.n_clusters() - 1,
        m.rss,
        m.sigma2
    )
    .unwrap();
    writeln!(out, "mean leaf effect moved into intercepts: {}", m.adjusted.gamma_bar).unwrap();

    writeln!(out, "\nclusters").unwrap();
    writeln!(out, "{:>7}  {:>14}  units", "cluster", "intercept").unwrap();
    for c in 0..m.n_clusters() {
        let labels: Vec<&str> = m.unit_tree.units_in(c).iter().map(|&u| m.units[u].as_str()).collect();
        writeln!(out, "{c:>7}  {:>14.6}  {}", m.adjusted.cluster[c], labels.join(" ")).unwrap();
    }

    writeln!(out, "\nleaves").unwrap();
    writeln!(out, "{:>7}  {:>14}  rule", "leaf", "effect").unwrap();
    for (l, rule) in m.covariate_tree.leaf_rules(&m.covariates).iter().enumerate() {
        let mark = if l == m.reference_leaf { " (reference)" } else { "" };
        writeln!(out, "{l:>7}  {:>14.6}  {rule}{mark}", m.adjusted.leaf[l]).unwrap();
    }

    if !m.linear_terms.is_empty() {
        writeln!(out, "\nlinear terms").unwrap();
        for (&k, b) in m.linear_terms.iter().zip(&m.coefficients.linear) {
            writeln!(out, "{:>14}  {b:>14.6}", m.covariates[k]).unwrap();
        }
    }
}

fn lmm(out: &mut String, m: &LmmFit) {
    writeln!(out, "observations: {}  units: {}  outcome: {}", m.unit_sizes.iter().sum::<usize>(), m.units.len(), m.outcome)
        .unwrap();
    writeln!(
        out,
        "variance components: unit {}  residual {}  (ratio {}); loglik {}",
        m.core.sigma2_b, m.core.sigma2_e, m.core.psi, m.core.loglik
    )
    .unwrap();
    if m.core.at_boundary {
        writeln!(out, "warning: variance ratio at the upper search bound").unwrap();
    }
    writeln!(out, "\nfixed effects").unwrap();
    writeln!(out, "{:>14}  {:>14.6}", "(intercept)", m.intercept()).unwrap();
    for (name, b) in m.covariates.iter().zip(m.slopes()) {
        writeln!(out, "{name:>14}  {b:>14.6}").unwrap();
    }
    writeln!(out, "\nunit intercepts (predicted)").unwrap();
    for (u, b) in m.units.iter().zip(&m.core.blup) {
        writeln!(out, "{u:>14}  {:>14.6}", m.intercept() + b).unwrap();
    }
}

pub fn render(model: &FittedModel, cfg: &FitConfig) -> String {
    let mut out = String::new();
    config_header(&mut out, cfg);
    match model {
        FittedModel::Tree(m) => tree(&mut out, m),
        FittedModel::Lmm(m) => lmm(&mut out, m),
    }
    out
}
