//! Fixed-effects least squares with cluster-robust inference.
//!
//! Fixed effects are absorbed by alternating within-group demeaning, the
//! slope coefficients come from a Householder QR solve on the demeaned
//! design, and the covariance is a CR1 sandwich (one-way) or the
//! Cameron–Gelbach–Miller combination of three CR1 sandwiches (two-way).

mod absorb;
mod fit;
mod qr;
mod rolling;
mod vcov;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub use absorb::{absorb_fixed_effects, fe_parameter_count, AbsorbOptions, AbsorptionReport};
pub use fit::{estimate, CoefficientRow, EstimatorOptions, FitResult};
pub use qr::{ols_fit, LeastSquares};
pub use rolling::{
    first_persistent_significance, rolling_fit, RollingOptions, RollingResult, RollingWindow,
};
pub use vcov::{cluster_robust_vcov, cr1_component, ClusterMode, ClusteredVcov};

/// A categorical variable coded `0..n_levels`. Codes follow the sorted order
/// of the original labels, so relabeling that preserves order preserves codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub codes: Vec<usize>,
    pub n_levels: usize,
}

impl Factor {
    pub fn from_labels<S: AsRef<str>>(name: &str, labels: &[S]) -> Self {
        let mut dict: BTreeMap<&str, usize> = BTreeMap::new();
        for l in labels {
            dict.insert(l.as_ref(), 0);
        }
        for (i, v) in dict.values_mut().enumerate() {
            *v = i;
        }
        Self {
            name: name.to_string(),
            codes: labels.iter().map(|l| dict[l.as_ref()]).collect(),
            n_levels: dict.len(),
        }
    }

    pub fn from_codes(name: &str, codes: Vec<usize>) -> Self {
        let mut dict: BTreeMap<usize, usize> = codes.iter().map(|&c| (c, 0)).collect();
        for (i, v) in dict.values_mut().enumerate() {
            *v = i;
        }
        Self {
            name: name.to_string(),
            n_levels: dict.len(),
            codes: codes.iter().map(|c| dict[c]).collect(),
        }
    }

    /// Cells of the cross-classification of `self` and `other`.
    pub fn intersect(&self, other: &Factor) -> Factor {
        let codes = self
            .codes
            .iter()
            .zip(&other.codes)
            .map(|(&a, &b)| a * other.n_levels + b)
            .collect();
        Factor::from_codes(&format!("{}#{}", self.name, other.name), codes)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_levels];
        for &code in &self.codes {
            c[code] += 1;
        }
        c
    }
}

/// Named regressor columns, response, fixed-effect factors and cluster
/// factors, all of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    pub fe_groups: Vec<Factor>,
    pub clusters: Vec<Factor>,
}

impl DesignMatrix {
    pub fn new(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        response: Vec<f64>,
        fe_groups: Vec<Factor>,
        clusters: Vec<Factor>,
    ) -> Result<Self> {
        let n = response.len();
        if names.len() != columns.len() {
            return Err(Error::Data(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Data(format!(
                    "column `{name}` has {} rows, response has {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("column `{name}` has non-finite entries")));
            }
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("response has non-finite entries".into()));
        }
        for f in fe_groups.iter().chain(&clusters) {
            if f.len() != n {
                return Err(Error::Data(format!(
                    "factor `{}` has {} rows, response has {n}",
                    f.name,
                    f.len()
                )));
            }
            if n > 0 && f.n_levels == 0 {
                return Err(Error::Data(format!("factor `{}` has no levels", f.name)));
            }
        }
        Ok(Self {
            names,
            columns,
            response,
            fe_groups,
            clusters,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_codes_follow_label_order() {
        let f = Factor::from_labels("r", &["b", "a", "b", "c"]);
        assert_eq!(f.codes, vec![1, 0, 1, 2]);
        assert_eq!(f.n_levels, 3);
        assert_eq!(f.counts(), vec![1, 2, 1]);
    }

    #[test]
    fn intersection_cells() {
        let a = Factor::from_labels("a", &["x", "x", "y", "y"]);
        let b = Factor::from_labels("b", &["1", "2", "1", "1"]);
        let ab = a.intersect(&b);
        assert_eq!(ab.n_levels, 3);
        assert_eq!(ab.codes[2], ab.codes[3]);
        assert_ne!(ab.codes[0], ab.codes[1]);
    }

    #[test]
    fn design_rejects_ragged_and_nonfinite() {
        let f = Factor::from_labels("g", &["a", "b"]);
        assert!(DesignMatrix::new(vec!["x".into()], vec![vec![1.0]], vec![1.0, 2.0], vec![f.clone()], vec![]).is_err());
        assert!(DesignMatrix::new(vec!["x".into()], vec![vec![1.0, f64::NAN]], vec![1.0, 2.0], vec![f], vec![]).is_err());
    }
}
