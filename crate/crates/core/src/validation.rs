//! Reference implementations and synthetic data.
//!
//! The oracles deliberately take a different numerical route from the
//! production estimator: fixed effects become explicit dummy columns, the
//! solve goes through an SVD pseudoinverse, and cluster covariances are
//! built by summing over pairs of observations that share a cluster.
//! Synthetic panels draw every random quantity from a generator keyed by
//! `(seed, stream, region, year)`, so content does not depend on
//! generation order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{ClusterMode, EstimatorOptions, Factor};
use crate::panel::{country_year_label, PanelDataset, PanelRow};
use crate::specs::{fit_panel_with, FeGroup, ModelSpec, Regressor};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for one `(seed, stream, a, b)` cell.
pub fn keyed_rng(seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut k = splitmix64(seed);
    for part in [stream, a, b] {
        k = splitmix64(k ^ part);
    }
    ChaCha8Rng::seed_from_u64(k)
}

fn std_normal(seed: u64, stream: u64, a: u64, b: u64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("unit normal")
        .sample(&mut keyed_rng(seed, stream, a, b))
}

fn uniform(seed: u64, stream: u64, a: u64, b: u64, lo: f64, hi: f64) -> f64 {
    Uniform::new(lo, hi)
        .expect("non-empty range")
        .sample(&mut keyed_rng(seed, stream, a, b))
}

mod stream {
    pub const BASE_LEVEL: u64 = 1;
    pub const TREND: u64 = 2;
    pub const SEA_NOISE: u64 = 3;
    pub const REGION_FE: u64 = 4;
    pub const COUNTRY_YEAR_FE: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const GDP_START: u64 = 7;
    pub const GDP_NOISE: u64 = 8;
    pub const STATION_OFFSET: u64 = 9;
    pub const STATION_NOISE: u64 = 10;
    pub const STATION_GAP: u64 = 11;
    pub const POPULATION: u64 = 12;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpCoefficients {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub theta: f64,
    /// Growth-effect terms of the dynamic model; when set the response
    /// follows the dynamic equation (no penalty term).
    pub gamma: Option<(f64, f64)>,
}

impl DgpCoefficients {
    pub const FULL_SCALE: DgpCoefficients = DgpCoefficients {
        beta1: 675.0,
        beta2: -38.0,
        beta3: -33.0,
        theta: -0.475,
        gamma: None,
    };

    /// True value of the coefficient estimated on `regressor`.
    pub fn truth(&self, regressor: Regressor) -> f64 {
        match (self.gamma, regressor) {
            (None, Regressor::LnSlr) => self.beta1,
            (None, Regressor::LnSlrSq) => self.beta2,
            (None, Regressor::Penalty) => self.beta3,
            (None, Regressor::LnSlrLag | Regressor::LnSlrLagSq) => 0.0,
            (Some((g1, _)), Regressor::LnSlr) => self.beta1 + g1,
            (Some((_, g2)), Regressor::LnSlrSq) => self.beta2 + g2,
            (Some(_), Regressor::LnSlrLag) => -self.beta1,
            (Some(_), Regressor::LnSlrLagSq) => -self.beta2,
            (Some(_), Regressor::Penalty) => 0.0,
            (_, Regressor::LnGdppcLag) => self.theta,
        }
    }
}

/// Region sea level in mm: `base + trend * decade + noise`, with
/// `base ~ U(base_mean ± base_half_width)` and `trend ~ N(trend_mean, trend_sd)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeaLevelProcess {
    pub base_mean_mm: f64,
    pub base_half_width_mm: f64,
    pub trend_mean_mm_per_decade: f64,
    pub trend_sd_mm_per_decade: f64,
    pub noise_sd_mm: f64,
}

impl Default for SeaLevelProcess {
    fn default() -> Self {
        Self {
            base_mean_mm: 7000.0,
            base_half_width_mm: 250.0,
            trend_mean_mm_per_decade: 20.0,
            trend_sd_mm_per_decade: 60.0,
            noise_sd_mm: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDgp {
    pub n_regions: usize,
    /// Grid points including the first (lag-only) decade; each region
    /// contributes `n_decades - 1` rows.
    pub n_decades: usize,
    pub n_countries: usize,
    pub end_year: i32,
    pub coefficients: DgpCoefficients,
    pub region_fe_sd: f64,
    pub country_year_fe_sd: f64,
    pub noise_sd: f64,
    /// AR(1) coefficient of the noise within a region.
    pub noise_rho: f64,
    pub sea_level: SeaLevelProcess,
    /// Sea-level terms act only from this year on.
    pub effect_onset_year: Option<i32>,
    pub seed: u64,
}

impl SyntheticDgp {
    /// 79 regions over 9 decade points ending in 2020, full-scale
    /// coefficients.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            n_regions: 79,
            n_decades: 9,
            n_countries: 12,
            end_year: 2020,
            coefficients: DgpCoefficients::FULL_SCALE,
            region_fe_sd: 0.1,
            country_year_fe_sd: 0.15,
            noise_sd: 0.05,
            noise_rho: 0.3,
            sea_level: SeaLevelProcess::default(),
            effect_onset_year: None,
            seed,
        }
    }

    pub fn years(&self) -> Vec<i32> {
        let start = self.end_year - 10 * (self.n_decades as i32 - 1);
        (0..self.n_decades).map(|j| start + 10 * j as i32).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn country_code(&self, region: usize) -> String {
        let c = region % self.n_countries;
        format!("{}{}", (b'A' + (c / 26) as u8) as char, (b'A' + (c % 26) as u8) as char)
    }

    pub fn region_code(&self, region: usize) -> String {
        let c = self.country_code(region);
        let k = region / self.n_countries;
        let digits = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";
        format!("{c}{}{}", digits[(k / 36) % 36] as char, digits[k % 36] as char)
    }

    fn validate(&self) -> Result<()> {
        if self.n_decades < 2 || self.n_regions == 0 || self.n_countries == 0 {
            return Err(Error::Data("synthetic panel needs regions, countries and two decades".into()));
        }
        if self.n_regions * (self.n_decades - 1) < 30 {
            return Err(Error::Data(format!(
                "{} regions x {} decades gives fewer than 30 rows",
                self.n_regions, self.n_decades
            )));
        }
        if self.noise_sd < 0.0 || !(0.0..1.0).contains(&self.noise_rho.abs()) {
            return Err(Error::Data("noise_sd must be >= 0 and |noise_rho| < 1".into()));
        }
        if self.n_regions > self.n_countries * 36 * 36 {
            return Err(Error::Data("too many regions for the code space".into()));
        }
        Ok(())
    }

    /// Noise-free sea level for region `r` at decade index `j`.
    pub fn sea_level_mm(&self, r: usize, j: usize) -> f64 {
        let p = &self.sea_level;
        let s = self.seed;
        let base = uniform(s, stream::BASE_LEVEL, r as u64, 0, -1.0, 1.0) * p.base_half_width_mm + p.base_mean_mm;
        let trend = p.trend_mean_mm_per_decade + p.trend_sd_mm_per_decade * std_normal(s, stream::TREND, r as u64, 0);
        base + trend * j as f64
    }

    fn observed_sea_level_mm(&self, r: usize, j: usize, year: i32) -> f64 {
        let level = self.sea_level_mm(r, j)
            + self.sea_level.noise_sd_mm * std_normal(self.seed, stream::SEA_NOISE, r as u64, year as u64);
        level.max(1.0)
    }
}

/// Draws a panel satisfying the generating equation up to the drawn noise.
///
/// `ln_gdppc_lag` is an exogenous random walk, independent of the noise,
/// so the within estimator is unbiased for every coefficient.
pub fn generate_panel(dgp: &SyntheticDgp) -> Result<PanelDataset> {
    dgp.validate()?;
    let years = dgp.years();
    let s = dgp.seed;
    let c = dgp.coefficients;
    let mut rows = Vec::with_capacity(dgp.n_regions * (dgp.n_decades - 1));
    for r in 0..dgp.n_regions {
        let country = dgp.country_code(r);
        let region = dgp.region_code(r);
        let ln_levels: Vec<f64> = years
            .iter()
            .enumerate()
            .map(|(j, &y)| dgp.observed_sea_level_mm(r, j, y).ln())
            .collect();
        let n_rows = years.len() - 1;
        let mean_ln = ln_levels[1..].iter().sum::<f64>() / n_rows as f64;
        let mut gdp = 9.0 + 0.5 * std_normal(s, stream::GDP_START, r as u64, 0);
        let alpha = dgp.region_fe_sd * std_normal(s, stream::REGION_FE, r as u64, 0);
        let mut prev_noise = 0.0;
        for j in 1..years.len() {
            let year = years[j];
            let (x, x_lag) = (ln_levels[j], ln_levels[j - 1]);
            let penalty = (x - mean_ln).powi(2);
            let active = dgp.effect_onset_year.is_none_or(|onset| year >= onset);
            let delta = dgp.country_year_fe_sd
                * std_normal(s, stream::COUNTRY_YEAR_FE, (r % dgp.n_countries) as u64, year as u64);
            let innovation = dgp.noise_sd * std_normal(s, stream::NOISE, r as u64, year as u64);
            let noise = if j == 1 {
                innovation / (1.0 - dgp.noise_rho * dgp.noise_rho).sqrt()
            } else {
                dgp.noise_rho * prev_noise + innovation
            };
            prev_noise = noise;
            let slr = match c.gamma {
                None => c.beta1 * x + c.beta2 * x * x + c.beta3 * penalty,
                Some((g1, g2)) => {
                    (c.beta1 + g1) * x + (c.beta2 + g2) * x * x - c.beta1 * x_lag - c.beta2 * x_lag * x_lag
                }
            };
            let d = alpha + delta + if active { slr } else { 0.0 } + c.theta * gdp + noise;
            rows.push(PanelRow {
                region_code: region.clone(),
                country_code: country.clone(),
                year,
                d_ln_gdppc: d,
                ln_gdppc_lag: gdp,
                ln_slr: x,
                ln_slr_sq: x * x,
                ln_slr_lag: x_lag,
                ln_slr_lag_sq: x_lag * x_lag,
                penalty,
                country_year: country_year_label(&country, year),
            });
            gdp += 0.15 + 0.1 * std_normal(s, stream::GDP_NOISE, r as u64, year as u64);
        }
    }
    PanelDataset::from_rows(rows)
}

/// Coefficients and covariance from the dummy-variable regression.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

/// Refuses designs larger than this many rows.
pub const ORACLE_MAX_ROWS: usize = 2000;

/// OLS with an intercept plus one dummy per fixed-effect level (first level
/// of each group dropped), solved by SVD pseudoinverse on an
/// equilibrated design. The covariance is the clustered sandwich of the
/// regressor block, summed pair by pair.
pub fn dense_dummy_ols(panel: &PanelDataset, spec: &ModelSpec) -> Result<OracleFit> {
    let dm = spec.design_matrix(panel)?;
    let n = dm.n_rows();
    if n > ORACLE_MAX_ROWS {
        return Err(Error::Data(format!(
            "dense oracle limited to {ORACLE_MAX_ROWS} rows, panel has {n}"
        )));
    }
    let k = dm.n_cols();
    // The constant column spans any shift, so centring leaves slopes and
    // residuals unchanged while keeping (ln s)^2 ~ 80 off the dummies.
    let centred = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        v.iter().map(|x| x - m).collect::<Vec<f64>>()
    };
    let mut cols: Vec<Vec<f64>> = dm.columns.iter().map(|c| centred(c)).collect();
    cols.push(vec![1.0; n]);
    for f in &dm.fe_groups {
        for level in 1..f.n_levels {
            cols.push(f.codes.iter().map(|&c| if c == level { 1.0 } else { 0.0 }).collect());
        }
    }
    let p = cols.len();
    let scale: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE))
        .collect();
    let x = DMatrix::from_fn(n, p, |i, j| cols[j][i] / scale[j]);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&v| v > 1e-10 * smax).count();
    let pinv = svd
        .pseudo_inverse(1e-10 * smax)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    // Rows of A map y to the (unscaled) regressor coefficients.
    let a = DMatrix::from_fn(k, n, |i, j| pinv[(i, j)] / scale[i]);
    let y = DVector::from_vec(centred(&dm.response));
    let beta = &a * &y;
    let full = &pinv * &y;
    let fitted = &x * full;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();

    let clusters = &dm.clusters;
    let vcov = match spec.cluster_mode {
        ClusterMode::OneWay => direct_cluster_vcov(&a, &residuals, &clusters[0], rank)?,
        ClusterMode::TwoWay => {
            let ab = clusters[0].intersect(&clusters[1]);
            let va = direct_cluster_vcov(&a, &residuals, &clusters[0], rank)?;
            let vb = direct_cluster_vcov(&a, &residuals, &clusters[1], rank)?;
            let vab = if ab.n_levels >= 2 {
                direct_cluster_vcov(&a, &residuals, &ab, rank)?
            } else {
                vec![vec![0.0; k]; k]
            };
            (0..k)
                .map(|i| (0..k).map(|j| va[i][j] + vb[i][j] - vab[i][j]).collect())
                .collect()
        }
    };
    Ok(OracleFit {
        names: dm.names.clone(),
        coefficients: beta.iter().copied().collect(),
        vcov,
        residuals,
    })
}

/// `c * sum_{i,j: g(i)=g(j)} e_i e_j a_i a_j'` with the CR1 factor
/// `G/(G-1) (N-1)/(N-P)`, where `a_i` is column `i` of the map from the
/// response to the coefficients and `P` the rank of the full design.
pub fn direct_cluster_vcov(
    a: &DMatrix<f64>,
    residuals: &[f64],
    cluster: &Factor,
    p_rank: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = residuals.len();
    let k = a.nrows();
    let g = cluster.n_levels;
    if g < 2 {
        return Err(Error::SingleCluster(cluster.name.clone()));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in cluster.codes.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    let mut v = vec![vec![0.0; k]; k];
    for idx in members.values() {
        for &i in idx {
            for &j in idx {
                let w = residuals[i] * residuals[j];
                for p in 0..k {
                    for q in 0..k {
                        v[p][q] += w * a[(p, i)] * a[(q, j)];
                    }
                }
            }
        }
    }
    let factor = (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - p_rank) as f64);
    for row in &mut v {
        for x in row.iter_mut() {
            *x *= factor;
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub mean_std_error: f64,
    /// Share of replications whose interval covers the truth.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub replications: usize,
    pub failures: usize,
    pub level: f64,
    pub coefficients: Vec<CoefficientSummary>,
}

impl MonteCarloSummary {
    pub fn get(&self, name: &str) -> Option<&CoefficientSummary> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Replication `i` uses seed `splitmix64(dgp.seed ^ i)`.
pub fn replication_seed(base: u64, replication: usize) -> u64 {
    splitmix64(base ^ (replication as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Fits `spec` on `replications` independent draws of `dgp` in parallel and
/// summarizes bias, dispersion and interval coverage per regressor.
pub fn monte_carlo(
    dgp: &SyntheticDgp,
    spec: &ModelSpec,
    replications: usize,
    level: f64,
    options: &EstimatorOptions,
) -> Result<MonteCarloSummary> {
    let draws: Vec<Option<Vec<(f64, f64, bool)>>> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let d = dgp.with_seed(replication_seed(dgp.seed, i));
            let panel = generate_panel(&d).ok()?;
            let fit = fit_panel_with(spec, &panel, options).ok()?;
            spec.regressors
                .iter()
                .map(|r| {
                    let name = r.column_name();
                    let b = fit.coef(name)?;
                    let se = fit.std_error(name)?;
                    let (lo, hi) = fit.confidence_interval(name, level)?;
                    let truth = dgp.coefficients.truth(*r);
                    Some((b, se, lo <= truth && truth <= hi))
                })
                .collect()
        })
        .collect();
    let ok: Vec<&Vec<(f64, f64, bool)>> = draws.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Numerical("every Monte Carlo replication failed".into()));
    }
    let m = ok.len() as f64;
    let coefficients = spec
        .regressors
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let mean = ok.iter().map(|d| d[j].0).sum::<f64>() / m;
            let var = ok.iter().map(|d| (d[j].0 - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            CoefficientSummary {
                name: r.column_name().to_string(),
                truth: dgp.coefficients.truth(*r),
                mean,
                sd: var.sqrt(),
                mean_std_error: ok.iter().map(|d| d[j].1).sum::<f64>() / m,
                coverage: ok.iter().filter(|d| d[j].2).count() as f64 / m,
            }
        })
        .collect();
    Ok(MonteCarloSummary {
        replications,
        failures: replications - ok.len(),
        level,
        coefficients,
    })
}

/// Raw input files in the on-disk formats the loaders read.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureCorpus {
    /// `(station_id, rlr annual file content)`.
    pub stations: Vec<(u32, String)>,
    pub station_list: String,
    pub mapping_csv: String,
    pub econ_csv: String,
    pub extension_csv: String,
    pub scenario_csv: String,
}

impl FixtureCorpus {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let rlr = dir.join("rlr");
        fs::create_dir_all(&rlr)?;
        for (id, content) in &self.stations {
            fs::write(rlr.join(format!("{id}.rlrdata")), content)?;
        }
        fs::write(rlr.join("filelist.txt"), &self.station_list)?;
        fs::write(dir.join("mapping.csv"), &self.mapping_csv)?;
        fs::write(dir.join("econ.csv"), &self.econ_csv)?;
        fs::write(dir.join("extension.csv"), &self.extension_csv)?;
        fs::write(dir.join("scenarios.csv"), &self.scenario_csv)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub dgp: SyntheticDgp,
    pub stations_per_region: usize,
    /// Probability that a station-year is written as the missing sentinel.
    pub gap_probability: f64,
    /// Regions in the economic data without any station.
    pub inland_regions: usize,
}

impl FixtureConfig {
    /// 30 coastal regions in 3 countries, 1900-2020, two stations each.
    pub fn standard(seed: u64) -> Self {
        Self {
            dgp: SyntheticDgp {
                n_regions: 30,
                n_decades: 13,
                n_countries: 3,
                end_year: 2020,
                coefficients: DgpCoefficients {
                    beta1: 2.0,
                    beta2: -0.15,
                    beta3: -20.0,
                    theta: -0.3,
                    gamma: None,
                },
                region_fe_sd: 0.05,
                country_year_fe_sd: 0.1,
                noise_sd: 0.03,
                noise_rho: 0.0,
                sea_level: SeaLevelProcess::default(),
                effect_onset_year: None,
                seed,
            },
            stations_per_region: 2,
            gap_probability: 0.03,
            inland_regions: 2,
        }
    }
}

/// Station files, mapping, decadal economic data to 2015 with annual growth
/// extension to 2020, and three scenario paths per region.
pub fn generate_fixture_corpus(cfg: &FixtureConfig) -> Result<FixtureCorpus> {
    let dgp = &cfg.dgp;
    dgp.validate()?;
    let s = dgp.seed;
    let start = dgp.years()[0];
    let mut stations = Vec::new();
    let mut station_list = String::new();
    let mut mapping_csv = String::from("station_id,region_code,country_code\n");
    for r in 0..dgp.n_regions {
        for k in 0..cfg.stations_per_region {
            let id = (r * cfg.stations_per_region + k + 1) as u32;
            let offset = 15.0 * std_normal(s, stream::STATION_OFFSET, id as u64, 0);
            let mut content = String::new();
            for year in start..=dgp.end_year {
                let j = (year - start) as f64 / 10.0;
                let lo = j.floor() as usize;
                let frac = j - lo as f64;
                let level = if frac == 0.0 {
                    dgp.sea_level_mm(r, lo)
                } else {
                    dgp.sea_level_mm(r, lo) * (1.0 - frac) + dgp.sea_level_mm(r, lo + 1) * frac
                };
                let noisy = level + offset + 10.0 * std_normal(s, stream::STATION_NOISE, id as u64, year as u64);
                let gap = uniform(s, stream::STATION_GAP, id as u64, year as u64, 0.0, 1.0) < cfg.gap_probability;
                let value = if gap { -99999.0 } else { noisy.round().max(1.0) };
                content.push_str(&format!("{year}; {value}; 0; 000\n"));
            }
            station_list.push_str(&format!(
                "{id}; {:.3}; {:.3}; STATION {id}; 000; {:03}; N\n",
                40.0 + r as f64 * 0.3,
                -5.0 + k as f64 * 0.2,
                id
            ));
            mapping_csv.push_str(&format!("{id},{},{}\n", dgp.region_code(r), dgp.country_code(r)));
            stations.push((id, content));
        }
    }

    // Economic data: GDP per capita follows the growth equation on the
    // decade grid using the noise-free sea level.
    let c = dgp.coefficients;
    let years = dgp.years();
    let mut econ_csv = String::from("region_code,country_code,year,gdp,population\n");
    let mut extension_csv = String::from("region_code,year,gdp_growth,pop_growth\n");
    let total = dgp.n_regions + cfg.inland_regions;
    for r in 0..total {
        let region = dgp.region_code(r);
        let country = dgp.country_code(r);
        let mut ln_gdppc = 8.0 + 0.3 * std_normal(s, stream::GDP_START, r as u64, 0);
        let pop0 = 1e6 * (1.0 + 2.0 * uniform(s, stream::POPULATION, r as u64, 0, 0.0, 1.0));
        let pop = |year: i32| pop0 * (1.0f64 + 0.005).powi(year - start);
        let alpha = dgp.region_fe_sd * std_normal(s, stream::REGION_FE, r as u64, 0);
        let mut levels = vec![(years[0], ln_gdppc)];
        for j in 1..years.len() {
            let year = years[j];
            let x = dgp.sea_level_mm(r.min(dgp.n_regions - 1), j).ln();
            let delta = dgp.country_year_fe_sd
                * std_normal(s, stream::COUNTRY_YEAR_FE, (r % dgp.n_countries) as u64, year as u64);
            let noise = dgp.noise_sd * std_normal(s, stream::NOISE, r as u64, year as u64);
            let growth = 0.2 + alpha + delta + c.beta1 * x + c.beta2 * x * x + c.theta * (ln_gdppc - 8.0) + noise
                - (c.beta1 * 8.85 + c.beta2 * 8.85 * 8.85);
            ln_gdppc += growth;
            levels.push((year, ln_gdppc));
        }
        for &(year, lg) in levels.iter().filter(|(y, _)| *y <= 2010) {
            let p = pop(year);
            econ_csv.push_str(&format!("{region},{country},{year},{},{}\n", lg.exp() * p / 1e6, p));
        }
        // 2015 from the 2010 level with half of the 2010-2020 growth, then
        // annual rates reaching the 2020 level.
        let l2010 = levels.iter().find(|(y, _)| *y == 2010).map(|l| l.1);
        let l2020 = levels.iter().find(|(y, _)| *y == 2020).map(|l| l.1);
        if let (Some(a), Some(b)) = (l2010, l2020) {
            let l2015 = 0.5 * (a + b);
            let p = pop(2015);
            econ_csv.push_str(&format!("{region},{country},2015,{},{}\n", l2015.exp() * p / 1e6, p));
            let annual = ((b - l2015) / 5.0).exp() * 1.005 - 1.0;
            for year in 2016..=2020 {
                extension_csv.push_str(&format!("{region},{year},{annual},0.005\n"));
            }
        }
    }

    let mut scenario_csv = String::from("scenario,ssp,rcp,ice,region_code,year,slr_mm_vs_base,population\n");
    let scenarios = [
        ("SSP1-RCP2.6-low", 1, "2.6", "low", 260.0),
        ("SSP2-RCP4.5-medium", 2, "4.5", "medium", 450.0),
        ("SSP5-RCP8.5-high_end", 5, "8.5", "high_end", 1100.0),
    ];
    for (label, ssp, rcp, ice, rise_2100) in scenarios {
        for r in 0..dgp.n_regions {
            // vertical land motion from the region's historical trend
            let land = dgp.sea_level.trend_mean_mm_per_decade - (dgp.sea_level_mm(r, 1) - dgp.sea_level_mm(r, 0));
            for year in (2030..=2100).step_by(10) {
                let t = (year - 2020) as f64 / 80.0;
                let rise = rise_2100 * t * t.sqrt() - land * (year - 2020) as f64 / 10.0 * 0.5;
                let popn = pop_fixture(s, r, year, ssp);
                scenario_csv.push_str(&format!(
                    "{label},{ssp},{rcp},{ice},{},{year},{rise},{popn}\n",
                    dgp.region_code(r)
                ));
            }
        }
    }
    Ok(FixtureCorpus {
        stations,
        station_list,
        mapping_csv,
        econ_csv,
        extension_csv,
        scenario_csv,
    })
}

fn pop_fixture(seed: u64, r: usize, year: i32, ssp: u8) -> f64 {
    let base = 1e6 * (1.0 + 2.0 * uniform(seed, stream::POPULATION, r as u64, 0, 0.0, 1.0));
    let g = match ssp {
        1 => -0.001,
        2 => 0.002,
        _ => 0.006,
    };
    (base * (1.0f64 + g).powi(year - 2020)).round()
}

/// Five stations over three regions plus one unmapped station, 1990-2020.
/// Small enough to enumerate the resulting panel by hand.
pub fn small_fixture_corpus() -> FixtureCorpus {
    let mut stations = Vec::new();
    let series = |base: f64, slope: f64, gaps: &[i32]| {
        let mut out = String::new();
        for year in 1990..=2020 {
            let v = if gaps.contains(&year) { -99999.0 } else { base + slope * (year - 1990) as f64 };
            out.push_str(&format!("{year}; {v}; 0; 000\n"));
        }
        out
    };
    stations.push((101, series(6980.0, 2.0, &[])));
    stations.push((102, series(7020.0, 2.0, &[2000])));
    stations.push((201, series(7100.0, -3.0, &[1988, 2010])));
    stations.push((301, series(6900.0, 1.0, &[1990, 1991, 1992, 1989, 1988])));
    stations.push((302, series(6950.0, 1.5, &[])));
    stations.push((999, series(7000.0, 0.0, &[])));
    let station_list = stations
        .iter()
        .map(|(id, _)| format!("{id}; 45.0; 12.0; GAUGE {id}; 000; 000; N\n"))
        .collect();
    let mapping_csv = "station_id,region_code,country_code\n101,ITH3,IT\n102,ITH3,IT\n201,ITH5,IT\n301,BE23,BE\n302,BE23,BE\n"
        .to_string();
    let mut econ_csv = String::from("region_code,country_code,year,gdp,population\n");
    for (region, country, g0) in [("ITH3", "IT", 25000.0), ("ITH5", "IT", 27000.0), ("BE23", "BE", 30000.0), ("ITC1", "IT", 29000.0)] {
        for (k, year) in [1990, 2000, 2010, 2015].into_iter().enumerate() {
            let pop = 1e6 + 1e4 * k as f64;
            let gdppc = g0 * 1.15f64.powi(k as i32);
            econ_csv.push_str(&format!("{region},{country},{year},{},{pop}\n", gdppc * pop / 1e6));
        }
    }
    let mut extension_csv = String::from("region_code,year,gdp_growth,pop_growth\n");
    for region in ["ITH3", "ITH5", "BE23", "ITC1"] {
        for year in 2016..=2020 {
            extension_csv.push_str(&format!("{region},{year},0.02,0.001\n"));
        }
    }
    let scenario_csv = String::from("scenario,ssp,rcp,ice,region_code,year,slr_mm_vs_base,population\n");
    FixtureCorpus {
        stations,
        station_list,
        mapping_csv,
        econ_csv,
        extension_csv,
        scenario_csv,
    }
}

/// A panel small enough for the dense oracle, with sea-level variation
/// wide enough to keep the quadratic terms well conditioned.
pub fn oracle_fixture(seed: u64) -> Result<PanelDataset> {
    let dgp = SyntheticDgp {
        n_regions: 40,
        n_decades: 11,
        n_countries: 4,
        end_year: 2020,
        coefficients: DgpCoefficients {
            beta1: 3.0,
            beta2: -0.2,
            beta3: -15.0,
            theta: -0.4,
            gamma: Some((0.5, -0.03)),
        },
        region_fe_sd: 0.1,
        country_year_fe_sd: 0.1,
        noise_sd: 0.05,
        noise_rho: 0.2,
        sea_level: SeaLevelProcess {
            base_mean_mm: 7000.0,
            base_half_width_mm: 1500.0,
            trend_mean_mm_per_decade: 50.0,
            trend_sd_mm_per_decade: 150.0,
            noise_sd_mm: 100.0,
        },
        effect_onset_year: None,
        seed,
    };
    generate_panel(&dgp)
}

/// Sixty rows: twenty regions in five countries over three decadal
/// changes. Balanced, with enough clusters per dimension that the two-way
/// combination usually stays positive semi-definite.
pub fn vcov_fixture(seed: u64) -> Result<PanelDataset> {
    let mut dgp = SyntheticDgp::full_scale(seed);
    dgp.n_regions = 20;
    dgp.n_countries = 5;
    dgp.n_decades = 4;
    dgp.sea_level.base_half_width_mm = 1000.0;
    dgp.sea_level.trend_sd_mm_per_decade = 120.0;
    dgp.sea_level.noise_sd_mm = 80.0;
    dgp.noise_sd = 0.1;
    generate_panel(&dgp)
}

/// Largest discrepancies between the production fit and the dense oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    /// `max_j |b_j - o_j| / |o_j|`.
    pub coefficient_rel: f64,
    /// `max_jk |V_jk - O_jk| / max_jk |O_jk|`.
    pub vcov_rel: f64,
    pub vcov_repaired: bool,
}

pub fn compare_to_oracle(
    panel: &PanelDataset,
    spec: &ModelSpec,
    options: &EstimatorOptions,
) -> Result<OracleComparison> {
    let fit = fit_panel_with(spec, panel, options)?;
    let oracle = dense_dummy_ols(panel, spec)?;
    if fit.coef_names != oracle.names {
        return Err(Error::Numerical(format!(
            "{}: estimator kept {:?}, oracle {:?}",
            spec.name, fit.coef_names, oracle.names
        )));
    }
    let coefficient_rel = fit
        .coefficients
        .iter()
        .zip(&oracle.coefficients)
        .map(|(a, o)| (a - o).abs() / o.abs())
        .fold(0.0, f64::max);
    let scale = oracle.vcov.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let vcov_rel = fit
        .vcov
        .iter()
        .flatten()
        .zip(oracle.vcov.iter().flatten())
        .map(|(a, o)| (a - o).abs() / scale)
        .fold(0.0, f64::max);
    Ok(OracleComparison {
        coefficient_rel,
        vcov_rel,
        vcov_repaired: fit.vcov_repaired,
    })
}

/// Groups rows by `FeGroup` for assertions in tests.
pub fn group_sums(panel: &PanelDataset, group: FeGroup, values: &[f64]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (row, v) in panel.rows.iter().zip(values) {
        let key = match group {
            FeGroup::Region => row.region_code.clone(),
            FeGroup::CountryYear => row.country_year.clone(),
        };
        *out.entry(key).or_insert(0.0) += v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specs::{build_spec, fit_panel, ModelName};

    #[test]
    fn generation_is_deterministic() {
        let d = SyntheticDgp::full_scale(42);
        assert_eq!(generate_panel(&d).unwrap(), generate_panel(&d).unwrap());
        assert_ne!(generate_panel(&d).unwrap(), generate_panel(&d.with_seed(43)).unwrap());
    }

    #[test]
    fn full_scale_shape() {
        let p = generate_panel(&SyntheticDgp::full_scale(1)).unwrap();
        assert_eq!(p.len(), 79 * 8);
        assert_eq!(p.region_index.len(), 79);
        assert_eq!(p.decade_grid.first(), Some(&1950));
        assert_eq!(p.decade_grid.last(), Some(&2020));
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let mut d = SyntheticDgp::full_scale(1);
        d.n_regions = 3;
        d.n_decades = 3;
        assert!(generate_panel(&d).is_err());
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let mut d = SyntheticDgp::full_scale(9);
        d.noise_sd = 0.0;
        d.coefficients.beta3 = 0.0;
        let p = generate_panel(&d).unwrap();
        let f = fit_panel(&build_spec(ModelName::Adaptation), &p).unwrap();
        assert!((f.coef("ln_slr").unwrap() - 675.0).abs() < 1e-6 * 675.0);
        assert!((f.coef("ln_slr_sq").unwrap() - -38.0).abs() < 1e-6 * 38.0);
        assert!((f.coef("ln_gdppc_lag").unwrap() - -0.475).abs() < 1e-8);
        assert!(f.coef("penalty").unwrap().abs() < 1e-4);
    }

    #[test]
    fn no_fe_spec_oracle_is_plain_ols() {
        let p = oracle_fixture(3).unwrap();
        let mut spec = build_spec(ModelName::Linear);
        spec.fe_groups.clear();
        let o = dense_dummy_ols(&p, &spec).unwrap();
        let dm = spec.design_matrix(&p).unwrap();
        let n = dm.n_rows();
        let x = DMatrix::from_fn(n, 4, |i, j| if j == 3 { 1.0 } else { dm.columns[j][i] });
        let b = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * DVector::from_vec(dm.response.clone());
        for j in 0..3 {
            assert!((o.coefficients[j] - b[j]).abs() < 1e-8 * b[j].abs().max(1.0));
        }
    }

    #[test]
    fn single_region_dummy_collinearity_handled() {
        let p = oracle_fixture(4).unwrap();
        let one = PanelDataset::from_rows(
            p.rows.iter().filter(|r| r.region_code == p.region_index[0]).cloned().collect(),
        )
        .unwrap();
        let mut spec = build_spec(ModelName::Fes1).with_cluster_mode(ClusterMode::OneWay);
        spec.regressors = vec![Regressor::LnSlr, Regressor::LnGdppcLag];
        // one region: its dummy is dropped as the reference level, so the
        // design is the intercept plus regressors
        let o = dense_dummy_ols(&one, &spec);
        // a single region means a single cluster for one-way clustering
        assert!(matches!(o, Err(Error::SingleCluster(_))));
    }

    #[test]
    fn oracle_row_guard() {
        let mut d = SyntheticDgp::full_scale(1);
        d.n_regions = 300;
        let p = generate_panel(&d).unwrap();
        assert!(dense_dummy_ols(&p, &build_spec(ModelName::Adaptation)).is_err());
    }

    #[test]
    fn fixture_corpus_is_deterministic() {
        let a = generate_fixture_corpus(&FixtureConfig::standard(5)).unwrap();
        let b = generate_fixture_corpus(&FixtureConfig::standard(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stations.len(), 60);
    }
}
