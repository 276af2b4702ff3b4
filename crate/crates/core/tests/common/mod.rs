#![allow(dead_code)]

use fetree::ClusteredDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random clustered data: unit sizes in `1..=max_per_unit`, `p` covariates
/// (even-indexed continuous, odd-indexed binary), a unit shift, a step in
/// X1 and unit-variance noise. `coarse` rounds continuous values to a
/// 0.5 grid so ties occur.
pub fn random_data(seed: u64, n_units: usize, max_per_unit: usize, p: usize, coarse: bool) -> ClusteredDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::new();
    let mut y = Vec::new();
    let mut cols = vec![Vec::new(); p];
    for u in 0..n_units {
        let shift: f64 = rng.sample::<f64, _>(StandardNormal) * 2.0;
        let size = rng.random_range(1..=max_per_unit);
        for _ in 0..size {
            let mut row = Vec::with_capacity(p);
            for (k, col) in cols.iter_mut().enumerate() {
                let v = if k % 2 == 1 {
                    f64::from(u8::from(rng.random_bool(0.5)))
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    if coarse {
                        (z * 2.0).round() / 2.0
                    } else {
                        z
                    }
                };
                col.push(v);
                row.push(v);
            }
            let step = if p > 0 && row[0] > 0.0 { 1.5 } else { 0.0 };
            let e: f64 = rng.sample(StandardNormal);
            y.push(shift + step + e);
            labels.push(format!("g{u}"));
        }
    }
    let names = (1..=p).map(|k| format!("x{k}")).collect();
    ClusteredDataset::from_labels(y, &labels, names, cols, &[]).unwrap()
}

/// Same rows in the order given by `perm`.
pub fn permute_rows(d: &ClusteredDataset, perm: &[usize]) -> ClusteredDataset {
    let labels: Vec<&str> = perm.iter().map(|&r| d.unit_labels()[d.unit_of(r)].as_str()).collect();
    let y = perm.iter().map(|&r| d.y()[r]).collect();
    let cols = (0..d.n_covariates()).map(|k| perm.iter().map(|&r| d.x(r, k)).collect()).collect();
    ClusteredDataset::from_labels(y, &labels, d.covariate_names(), cols, &[]).unwrap()
}

/// Plain least squares RSS via normal equations with Gaussian elimination,
/// or `None` when the columns are linearly dependent.
pub fn brute_rss(cols: &[Vec<f64>], y: &[f64]) -> Option<f64> {
    let q = cols.len();
    let mut a = vec![vec![0.0; q + 1]; q];
    for i in 0..q {
        for j in 0..q {
            a[i][j] = cols[i].iter().zip(&cols[j]).map(|(x, z)| x * z).sum();
        }
        a[i][q] = cols[i].iter().zip(y).map(|(x, z)| x * z).sum();
    }
    let scale = a.iter().enumerate().map(|(i, r)| r[i]).fold(0.0_f64, f64::max).max(1.0);
    for c in 0..q {
        let piv = (c..q).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-9 * scale {
            return None;
        }
        a.swap(c, piv);
        for r in 0..q {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=q {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..q).map(|i| a[i][q] / a[i][i]).collect();
    Some(
        y.iter()
            .enumerate()
            .map(|(r, v)| {
                let fit: f64 = cols.iter().zip(&beta).map(|(c, b)| c[r] * b).sum();
                (v - fit).powi(2)
            })
            .sum(),
    )
}

/// Per-row fitted values `y - residual` of a model's own design.
pub fn fitted_values(m: &fetree::TreeModel, d: &ClusteredDataset) -> Vec<f64> {
    (0..d.n_obs())
        .map(|r| {
            let leaf = m.covariate_tree.leaf_for(|k| d.x(r, k));
            let c = m.unit_tree.cluster_of_unit(d.unit_of(r));
            let lin: f64 = m.linear_terms.iter().zip(&m.coefficients.linear).map(|(&k, b)| b * d.x(r, k)).sum();
            m.coefficients.cluster[c] + m.coefficients.leaf[leaf] + lin
        })
        .collect()
}
