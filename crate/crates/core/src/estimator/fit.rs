use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::{
    absorb_fixed_effects, cluster_robust_vcov, ols_fit, AbsorbOptions, AbsorptionReport,
    ClusterMode, DesignMatrix, Factor,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub absorb: AbsorbOptions,
    pub cluster_mode: ClusterMode,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            absorb: AbsorbOptions::default(),
            cluster_mode: ClusterMode::TwoWay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec_name: String,
    pub coef_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub n_obs: usize,
    /// `1 - RSS/TSS` with TSS of the raw response, so absorbed fixed effects
    /// count as explained variation.
    pub r_squared: f64,
    /// `1 - RSS/TSS` with TSS of the demeaned response.
    pub r_squared_within: f64,
    pub fe_absorbed: Vec<String>,
    /// Regressors dropped because absorption left them without variation.
    pub dropped_columns: Vec<String>,
    pub convergence: AbsorptionReport,
    pub cluster_mode: Option<ClusterMode>,
    pub n_clusters: Vec<usize>,
    pub vcov_repaired: bool,
    /// `mean(y) - mean(x)'b`: the average of the absorbed effects.
    pub intercept: Option<f64>,
}

impl FitResult {
    /// A fit assembled from externally supplied coefficients, for running
    /// the downstream analytics without estimation.
    pub fn from_coefficients(
        spec_name: &str,
        names: Vec<String>,
        coefficients: Vec<f64>,
        vcov: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = names.len();
        if coefficients.len() != k || vcov.len() != k || vcov.iter().any(|r| r.len() != k) {
            return Err(Error::Data(format!(
                "{} names, {} coefficients and a {}-row covariance do not line up",
                k,
                coefficients.len(),
                vcov.len()
            )));
        }
        Ok(Self {
            spec_name: spec_name.to_string(),
            coef_names: names,
            coefficients,
            vcov,
            n_obs: 0,
            r_squared: f64::NAN,
            r_squared_within: f64::NAN,
            fe_absorbed: Vec::new(),
            dropped_columns: Vec::new(),
            convergence: AbsorptionReport::default(),
            cluster_mode: None,
            n_clusters: Vec::new(),
            vcov_repaired: false,
            intercept: None,
        })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coef_names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.coefficients[i])
    }

    pub fn require(&self, name: &str) -> Result<f64> {
        self.coef(name)
            .ok_or_else(|| Error::MissingCoefficient(name.to_string()))
    }

    pub fn covariance(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.vcov[self.index_of(a)?][self.index_of(b)?])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.covariance(name, name).map(|v| v.max(0.0).sqrt())
    }

    /// Degrees of freedom for t-based inference: smallest cluster count
    /// minus one, or `None` (normal reference) when unclustered.
    pub fn inference_df(&self) -> Option<f64> {
        self.n_clusters
            .iter()
            .min()
            .map(|&g| (g.max(2) - 1) as f64)
    }

    /// Two-sided critical value at the given confidence level.
    pub fn critical_value(&self, level: f64) -> f64 {
        let q = 0.5 + level / 2.0;
        match self.inference_df() {
            Some(df) => StudentsT::new(0.0, 1.0, df)
                .expect("positive df")
                .inverse_cdf(q),
            None => Normal::standard().inverse_cdf(q),
        }
    }

    pub fn p_value(&self, t: f64) -> f64 {
        let tail = match self.inference_df() {
            Some(df) => 1.0 - StudentsT::new(0.0, 1.0, df).expect("positive df").cdf(t.abs()),
            None => 1.0 - Normal::standard().cdf(t.abs()),
        };
        2.0 * tail
    }

    pub fn confidence_interval(&self, name: &str, level: f64) -> Option<(f64, f64)> {
        let b = self.coef(name)?;
        let se = self.std_error(name)?;
        let c = self.critical_value(level);
        Some((b - c * se, b + c * se))
    }

    pub fn coefficient_table(&self) -> Vec<CoefficientRow> {
        self.coef_names
            .iter()
            .zip(&self.coefficients)
            .enumerate()
            .map(|(i, (name, &estimate))| {
                let std_error = self.vcov[i][i].max(0.0).sqrt();
                let t_stat = estimate / std_error;
                CoefficientRow {
                    name: name.clone(),
                    estimate,
                    std_error,
                    t_stat,
                    p_value: self.p_value(t_stat),
                }
            })
            .collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Absorbs the fixed effects, solves least squares and attaches the
/// clustered covariance. Without fixed-effect groups a constant is absorbed
/// (plain OLS with intercept).
pub fn estimate(spec_name: &str, dm: &DesignMatrix, options: &EstimatorOptions) -> Result<FitResult> {
    let n = dm.n_rows();
    if n == 0 {
        return Err(Error::Data(format!("{spec_name}: empty estimation sample")));
    }
    let fe_absorbed: Vec<String> = dm.fe_groups.iter().map(|f| f.name.clone()).collect();
    let (demeaned, report) = if dm.fe_groups.is_empty() {
        let mut with_const = dm.clone();
        with_const.fe_groups = vec![Factor::from_codes("intercept", vec![0; n])];
        absorb_fixed_effects(&with_const, &options.absorb)?
    } else {
        absorb_fixed_effects(dm, &options.absorb)?
    };
    if demeaned.n_cols() == 0 {
        return Err(Error::Data(format!("{spec_name}: every regressor was absorbed")));
    }
    let ls = ols_fit(&demeaned)?;
    let n_parameters = demeaned.n_cols() + report.fe_parameters;
    let vc = cluster_robust_vcov(&demeaned, &ls.residuals, &ls.xtx_inv, options.cluster_mode, n_parameters)?;

    let rss: f64 = ls.residuals.iter().map(|e| e * e).sum();
    let y_bar = mean(&dm.response);
    let tss: f64 = dm.response.iter().map(|y| (y - y_bar).powi(2)).sum();
    let tss_within: f64 = demeaned.response.iter().map(|y| y * y).sum();
    let r2 = |tss: f64| if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };

    let intercept = {
        let mut c = y_bar;
        for (name, b) in demeaned.names.iter().zip(&ls.coefficients) {
            let idx = dm.names.iter().position(|n| n == name).expect("kept column");
            c -= b * mean(&dm.columns[idx]);
        }
        Some(c)
    };

    Ok(FitResult {
        spec_name: spec_name.to_string(),
        coef_names: demeaned.names.clone(),
        coefficients: ls.coefficients,
        vcov: vc.matrix,
        n_obs: n,
        r_squared: r2(tss),
        r_squared_within: r2(tss_within),
        fe_absorbed,
        dropped_columns: report.absorbed_columns.clone(),
        convergence: report,
        cluster_mode: Some(options.cluster_mode),
        n_clusters: vc.n_clusters,
        vcov_repaired: vc.repaired,
        intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel_design(seed: u64, scale: f64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (regions, years) = (8, 6);
        let n = regions * years;
        let region: Vec<String> = (0..n).map(|i| format!("r{}", i / years)).collect();
        let year: Vec<String> = (0..n).map(|i| format!("y{}", i % years)).collect();
        let x1: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| scale * (0.7 * x1[i] - 0.2 * x2[i] + (i / years) as f64 * 0.3 + rng.random::<f64>()))
            .collect();
        DesignMatrix::new(
            vec!["x1".into(), "x2".into()],
            vec![x1, x2],
            y,
            vec![Factor::from_labels("region", &region), Factor::from_labels("year", &year)],
            vec![Factor::from_labels("region", &region), Factor::from_labels("year", &year)],
        )
        .unwrap()
    }

    #[test]
    fn response_scaling() {
        let opts = EstimatorOptions::default();
        let a = estimate("t", &panel_design(1, 1.0), &opts).unwrap();
        let b = estimate("t", &panel_design(1, 3.0), &opts).unwrap();
        for j in 0..2 {
            assert!((b.coefficients[j] - 3.0 * a.coefficients[j]).abs() < 1e-10);
            for k in 0..2 {
                assert!((b.vcov[j][k] - 9.0 * a.vcov[j][k]).abs() < 1e-10 * a.vcov[j][j].abs().max(1e-12));
            }
        }
    }

    #[test]
    fn r_squared_in_unit_interval_and_projected_exceeds_within() {
        let f = estimate("t", &panel_design(2, 1.0), &EstimatorOptions::default()).unwrap();
        assert!((0.0..=1.0).contains(&f.r_squared));
        assert!(f.r_squared >= f.r_squared_within);
        assert_eq!(f.fe_absorbed, vec!["region".to_string(), "year".to_string()]);
    }

    #[test]
    fn residuals_sum_to_zero_in_groups() {
        let dm = panel_design(3, 1.0);
        let (d, _) = absorb_fixed_effects(&dm, &AbsorbOptions::default()).unwrap();
        let ls = ols_fit(&d).unwrap();
        for f in &dm.fe_groups {
            let mut sums = vec![0.0; f.n_levels];
            for (e, &g) in ls.residuals.iter().zip(&f.codes) {
                sums[g] += e;
            }
            assert!(sums.iter().all(|s| s.abs() < 1e-10));
        }
    }

    #[test]
    fn table_and_intervals() {
        let f = estimate("t", &panel_design(4, 1.0), &EstimatorOptions::default()).unwrap();
        let table = f.coefficient_table();
        assert_eq!(table.len(), 2);
        let (lo, hi) = f.confidence_interval("x1", 0.95).unwrap();
        assert!(lo < f.coef("x1").unwrap() && f.coef("x1").unwrap() < hi);
        assert!(table.iter().all(|r| (0.0..=1.0).contains(&r.p_value)));
    }

    #[test]
    fn without_groups_matches_ols_with_intercept() {
        let mut dm = panel_design(5, 1.0);
        dm.fe_groups.clear();
        let f = estimate("t", &dm, &EstimatorOptions { cluster_mode: ClusterMode::OneWay, ..Default::default() }).unwrap();
        let x = nalgebra::DMatrix::from_fn(dm.n_rows(), 3, |i, j| if j == 0 { 1.0 } else { dm.columns[j - 1][i] });
        let y = nalgebra::DVector::from_vec(dm.response.clone());
        let beta = x.clone().pseudo_inverse(1e-14).unwrap() * y;
        assert!((f.coefficients[0] - beta[1]).abs() < 1e-10);
        assert!((f.intercept.unwrap() - beta[0]).abs() < 1e-10);
    }
}
