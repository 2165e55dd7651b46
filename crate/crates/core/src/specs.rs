//! The six named regression specifications.
//!
//! | name                  | regressors                                              | region FE | country-year FE | sample      |
//! |-----------------------|---------------------------------------------------------|-----------|-----------------|-------------|
//! | `adaptation`          | ln_slr, ln_slr_sq, ln_gdppc_lag, penalty                | yes       | yes             | all         |
//! | `dynamic`             | ln_slr, ln_slr_sq, ln_slr_lag, ln_slr_lag_sq, ln_gdppc_lag | no     | yes             | all         |
//! | `linear`              | ln_slr, ln_gdppc_lag, penalty                           | yes       | yes             | all         |
//! | `subsample_1980_2020` | as `adaptation`                                         | yes       | yes             | 1980–2020   |
//! | `fes_1`               | as `adaptation`                                         | yes       | no              | all         |
//! | `fes_2`               | as `adaptation`                                         | no        | yes             | all         |
//!
//! Standard errors are clustered by region and country-year.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate, ClusterMode, DesignMatrix, EstimatorOptions, Factor, FitResult};
use crate::panel::{PanelDataset, PanelRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Adaptation,
    Dynamic,
    Linear,
    #[serde(rename = "subsample_1980_2020")]
    Subsample1980_2020,
    #[serde(rename = "fes_1")]
    Fes1,
    #[serde(rename = "fes_2")]
    Fes2,
}

impl ModelName {
    pub const ALL: [ModelName; 6] = [
        ModelName::Adaptation,
        ModelName::Dynamic,
        ModelName::Linear,
        ModelName::Subsample1980_2020,
        ModelName::Fes1,
        ModelName::Fes2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Adaptation => "adaptation",
            ModelName::Dynamic => "dynamic",
            ModelName::Linear => "linear",
            ModelName::Subsample1980_2020 => "subsample_1980_2020",
            ModelName::Fes1 => "fes_1",
            ModelName::Fes2 => "fes_2",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownSpec(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    LnSlr,
    LnSlrSq,
    LnSlrLag,
    LnSlrLagSq,
    LnGdppcLag,
    Penalty,
}

impl Regressor {
    pub fn column_name(self) -> &'static str {
        match self {
            Regressor::LnSlr => "ln_slr",
            Regressor::LnSlrSq => "ln_slr_sq",
            Regressor::LnSlrLag => "ln_slr_lag",
            Regressor::LnSlrLagSq => "ln_slr_lag_sq",
            Regressor::LnGdppcLag => "ln_gdppc_lag",
            Regressor::Penalty => "penalty",
        }
    }

    pub fn value(self, row: &PanelRow) -> f64 {
        match self {
            Regressor::LnSlr => row.ln_slr,
            Regressor::LnSlrSq => row.ln_slr_sq,
            Regressor::LnSlrLag => row.ln_slr_lag,
            Regressor::LnSlrLagSq => row.ln_slr_lag_sq,
            Regressor::LnGdppcLag => row.ln_gdppc_lag,
            Regressor::Penalty => row.penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeGroup {
    Region,
    CountryYear,
}

impl FeGroup {
    pub fn name(self) -> &'static str {
        match self {
            FeGroup::Region => "region",
            FeGroup::CountryYear => "country_year",
        }
    }

    fn factor(self, rows: &[&PanelRow]) -> Factor {
        let labels: Vec<&str> = rows
            .iter()
            .map(|r| match self {
                FeGroup::Region => r.region_code.as_str(),
                FeGroup::CountryYear => r.country_year.as_str(),
            })
            .collect();
        Factor::from_labels(self.name(), &labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    pub regressors: Vec<Regressor>,
    pub fe_groups: Vec<FeGroup>,
    /// Inclusive year range.
    pub sample_filter: Option<(i32, i32)>,
    pub cluster_mode: ClusterMode,
}

pub fn build_spec(name: ModelName) -> ModelSpec {
    use Regressor::*;
    let adaptation = vec![LnSlr, LnSlrSq, LnGdppcLag, Penalty];
    let both = vec![FeGroup::Region, FeGroup::CountryYear];
    let (regressors, fe_groups, sample_filter) = match name {
        ModelName::Adaptation => (adaptation, both, None),
        ModelName::Dynamic => (
            vec![LnSlr, LnSlrSq, LnSlrLag, LnSlrLagSq, LnGdppcLag],
            vec![FeGroup::CountryYear],
            None,
        ),
        ModelName::Linear => (vec![LnSlr, LnGdppcLag, Penalty], both, None),
        ModelName::Subsample1980_2020 => (adaptation, both, Some((1980, 2020))),
        ModelName::Fes1 => (adaptation, vec![FeGroup::Region], None),
        ModelName::Fes2 => (adaptation, vec![FeGroup::CountryYear], None),
    };
    ModelSpec {
        name,
        regressors,
        fe_groups,
        sample_filter,
        cluster_mode: ClusterMode::TwoWay,
    }
}

pub fn build_spec_by_name(name: &str) -> Result<ModelSpec> {
    Ok(build_spec(name.parse()?))
}

impl ModelSpec {
    pub fn with_cluster_mode(mut self, mode: ClusterMode) -> Self {
        self.cluster_mode = mode;
        self
    }

    pub fn regressor_names(&self) -> Vec<&'static str> {
        self.regressors.iter().map(|r| r.column_name()).collect()
    }

    pub fn has_fe(&self, group: FeGroup) -> bool {
        self.fe_groups.contains(&group)
    }

    fn sample<'a>(&self, panel: &'a PanelDataset) -> Vec<&'a PanelRow> {
        panel
            .rows
            .iter()
            .filter(|r| match self.sample_filter {
                Some((lo, hi)) => r.year >= lo && r.year <= hi,
                None => true,
            })
            .collect()
    }

    /// Design matrix over the spec's sample, clustered by region then
    /// country-year.
    pub fn design_matrix(&self, panel: &PanelDataset) -> Result<DesignMatrix> {
        let rows = self.sample(panel);
        let k = self.regressors.len();
        let g = self.fe_groups.len();
        if rows.len() < k + g + 2 {
            return Err(Error::Data(format!(
                "{}: {} rows in the estimation sample, need at least {}",
                self.name,
                rows.len(),
                k + g + 2
            )));
        }
        let columns = self
            .regressors
            .iter()
            .map(|r| rows.iter().map(|row| r.value(row)).collect())
            .collect();
        let response = rows.iter().map(|r| r.d_ln_gdppc).collect();
        DesignMatrix::new(
            self.regressor_names().into_iter().map(String::from).collect(),
            columns,
            response,
            self.fe_groups.iter().map(|f| f.factor(&rows)).collect(),
            vec![FeGroup::Region.factor(&rows), FeGroup::CountryYear.factor(&rows)],
        )
    }
}

pub fn fit_panel(spec: &ModelSpec, panel: &PanelDataset) -> Result<FitResult> {
    fit_panel_with(spec, panel, &EstimatorOptions::default())
}

/// `options.cluster_mode` is overridden by the spec's own mode.
pub fn fit_panel_with(
    spec: &ModelSpec,
    panel: &PanelDataset,
    options: &EstimatorOptions,
) -> Result<FitResult> {
    let dm = spec.design_matrix(panel)?;
    let opts = EstimatorOptions {
        cluster_mode: spec.cluster_mode,
        ..*options
    };
    estimate(spec.name.as_str(), &dm, &opts)
}

/// Level (`beta`) and growth (`gamma`) parameters implied by the dynamic
/// specification: the lag coefficients equal `-beta`, the contemporaneous
/// ones `beta + gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicDecomposition {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

pub fn dynamic_decomposition(fit: &FitResult) -> Result<DynamicDecomposition> {
    let c1 = fit.require("ln_slr")?;
    let c2 = fit.require("ln_slr_sq")?;
    let l1 = fit.require("ln_slr_lag")?;
    let l2 = fit.require("ln_slr_lag_sq")?;
    Ok(DynamicDecomposition {
        beta1: -l1,
        beta2: -l2,
        gamma1: c1 + l1,
        gamma2: c2 + l2,
    })
}
