use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{DesignMatrix, Factor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    OneWay,
    TwoWay,
}

impl std::str::FromStr for ClusterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_way" | "oneway" | "one-way" => Ok(ClusterMode::OneWay),
            "two_way" | "twoway" | "two-way" => Ok(ClusterMode::TwoWay),
            other => Err(Error::Data(format!("unknown cluster mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredVcov {
    pub matrix: Vec<Vec<f64>>,
    /// Negative eigenvalues were floored at zero.
    pub repaired: bool,
    /// Cluster counts per dimension used (the intersection is not listed).
    pub n_clusters: Vec<usize>,
}

fn to_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let k = m.len();
    DMatrix::from_fn(k, k, |i, j| m[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// CR1 sandwich for one clustering:
/// `G/(G-1) * (N-1)/(N-K) * B (sum_g s_g s_g') B` with `s_g = sum_{i in g} x_i e_i`.
///
/// `k` is the total parameter count, absorbed fixed effects included.
pub fn cr1_component(
    dm: &DesignMatrix,
    residuals: &[f64],
    bread: &[Vec<f64>],
    cluster: &Factor,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = dm.n_rows();
    let g = cluster.n_levels;
    if g < 2 {
        return Err(Error::SingleCluster(cluster.name.clone()));
    }
    if n <= k {
        return Err(Error::Data(format!("{n} observations for {k} parameters")));
    }
    let mut scores = DMatrix::<f64>::zeros(g, dm.n_cols());
    for (j, col) in dm.columns.iter().enumerate() {
        for ((x, e), &c) in col.iter().zip(residuals).zip(&cluster.codes) {
            scores[(c, j)] += x * e;
        }
    }
    let meat = scores.transpose() * &scores;
    let b = to_matrix(bread);
    let factor = (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - k) as f64);
    Ok(to_rows(&((&b * meat * &b) * factor)))
}

/// One-way uses the first cluster factor; two-way combines both by
/// inclusion-exclusion, `V_A + V_B - V_{A∩B}`, flooring negative eigenvalues.
/// `k` is passed through to [`cr1_component`].
pub fn cluster_robust_vcov(
    dm: &DesignMatrix,
    residuals: &[f64],
    bread: &[Vec<f64>],
    mode: ClusterMode,
    k: usize,
) -> Result<ClusteredVcov> {
    match mode {
        ClusterMode::OneWay => {
            let a = dm
                .clusters
                .first()
                .ok_or_else(|| Error::Data("no cluster labels supplied".into()))?;
            Ok(ClusteredVcov {
                matrix: cr1_component(dm, residuals, bread, a, k)?,
                repaired: false,
                n_clusters: vec![a.n_levels],
            })
        }
        ClusterMode::TwoWay => {
            if dm.clusters.len() < 2 {
                return Err(Error::Data("two-way clustering needs two cluster factors".into()));
            }
            let (a, b) = (&dm.clusters[0], &dm.clusters[1]);
            let ab = a.intersect(b);
            let va = to_matrix(&cr1_component(dm, residuals, bread, a, k)?);
            let vb = to_matrix(&cr1_component(dm, residuals, bread, b, k)?);
            let vab = if ab.n_levels >= 2 {
                to_matrix(&cr1_component(dm, residuals, bread, &ab, k)?)
            } else {
                DMatrix::zeros(dm.n_cols(), dm.n_cols())
            };
            let mut v = va + vb - vab;
            v = (&v + v.transpose()) * 0.5;
            let eig = SymmetricEigen::new(v.clone());
            let repaired = eig.eigenvalues.iter().any(|&l| l < 0.0);
            if repaired {
                let floored = eig.eigenvalues.map(|l| l.max(0.0));
                v = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
                v = (&v + v.transpose()) * 0.5;
            }
            Ok(ClusteredVcov {
                matrix: to_rows(&v),
                repaired,
                n_clusters: vec![a.n_levels, b.n_levels],
            })
        }
    }
}
