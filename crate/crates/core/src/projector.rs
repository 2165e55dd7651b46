//! Regional GDP-per-capita projections under sea-level scenarios.
//!
//! The cumulative change at a future year is the long-term effect of moving
//! from the region's base sea level to base + projected rise. Population
//! enters only as an aggregation weight.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::effects::{long_term_effect, REFERENCE_MM};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::panel::RegionSeaLevel;

pub const BASE_YEAR: i32 = 2020;
pub const TERMINAL_YEAR: i32 = 2100;
pub const FIRST_STEP_YEAR: i32 = 2025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rcp {
    #[serde(rename = "2.6")]
    Rcp26,
    #[serde(rename = "4.5")]
    Rcp45,
    #[serde(rename = "8.5")]
    Rcp85,
}

impl FromStr for Rcp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches("RCP").trim_start_matches("rcp") {
            "2.6" | "26" => Ok(Rcp::Rcp26),
            "4.5" | "45" => Ok(Rcp::Rcp45),
            "8.5" | "85" => Ok(Rcp::Rcp85),
            other => Err(Error::Structure(format!("unknown RCP `{other}`"))),
        }
    }
}

impl fmt::Display for Rcp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rcp::Rcp26 => "2.6",
            Rcp::Rcp45 => "4.5",
            Rcp::Rcp85 => "8.5",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IceCase {
    Low,
    Medium,
    High,
    HighEnd,
}

impl FromStr for IceCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "low" => Ok(IceCase::Low),
            "medium" => Ok(IceCase::Medium),
            "high" => Ok(IceCase::High),
            "high_end" => Ok(IceCase::HighEnd),
            other => Err(Error::Structure(format!("unknown ice case `{other}`"))),
        }
    }
}

impl fmt::Display for IceCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IceCase::Low => "low",
            IceCase::Medium => "medium",
            IceCase::High => "high",
            IceCase::HighEnd => "high_end",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScenarioId {
    pub ssp: u8,
    pub rcp: Rcp,
    pub ice: IceCase,
}

impl ScenarioId {
    pub fn new(ssp: u8, rcp: Rcp, ice: IceCase) -> Result<Self> {
        if ![1, 2, 5].contains(&ssp) {
            return Err(Error::Structure(format!("SSP{ssp} is not one of SSP1, SSP2, SSP5")));
        }
        Ok(Self { ssp, rcp, ice })
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SSP{}-RCP{}-{}", self.ssp, self.rcp, self.ice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub year: i32,
    pub slr_mm_vs_base: f64,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPath {
    pub scenario: ScenarioId,
    pub region_code: String,
    pub steps: Vec<ScenarioStep>,
}

impl ScenarioPath {
    pub fn validate(&self) -> Result<()> {
        for w in self.steps.windows(2) {
            if w[1].year <= w[0].year {
                return Err(Error::Structure(format!(
                    "{} {}: years not increasing at {}",
                    self.scenario, self.region_code, w[1].year
                )));
            }
        }
        for s in &self.steps {
            if !(FIRST_STEP_YEAR..=TERMINAL_YEAR).contains(&s.year) {
                return Err(Error::Structure(format!(
                    "{} {}: year {} outside {FIRST_STEP_YEAR}-{TERMINAL_YEAR}",
                    self.scenario, self.region_code, s.year
                )));
            }
            if !(s.population > 0.0) || !s.slr_mm_vs_base.is_finite() {
                return Err(Error::Structure(format!(
                    "{} {} {}: population must be positive and rise finite",
                    self.scenario, self.region_code, s.year
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ScenarioCsvRow {
    // Free-form label; the ssp/rcp/ice components identify the scenario.
    #[allow(dead_code)]
    scenario: String,
    ssp: u8,
    rcp: String,
    ice: String,
    region_code: String,
    year: i32,
    slr_mm_vs_base: f64,
    population: f64,
}

/// Reads `scenario,ssp,rcp,ice,region_code,year,slr_mm_vs_base,population`
/// into paths ordered by (scenario, region).
pub fn load_scenario_csv<R: Read>(reader: R) -> Result<Vec<ScenarioPath>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut paths: BTreeMap<(ScenarioId, String), ScenarioPath> = BTreeMap::new();
    for row in rdr.deserialize::<ScenarioCsvRow>() {
        let row = row?;
        let id = ScenarioId::new(row.ssp, row.rcp.parse()?, row.ice.parse()?)?;
        paths
            .entry((id, row.region_code.clone()))
            .or_insert_with(|| ScenarioPath {
                scenario: id,
                region_code: row.region_code.clone(),
                steps: Vec::new(),
            })
            .steps
            .push(ScenarioStep {
                year: row.year,
                slr_mm_vs_base: row.slr_mm_vs_base,
                population: row.population,
            });
    }
    let mut out: Vec<ScenarioPath> = paths.into_values().collect();
    for p in &mut out {
        p.steps.sort_by_key(|s| s.year);
        p.validate()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProjection {
    pub scenario: ScenarioId,
    pub region_code: String,
    pub base_rlr_mm: f64,
    /// Starts with `(BASE_YEAR, 0.0)`.
    pub path: Vec<(i32, f64)>,
    pub terminal_2100: Option<f64>,
    pub population_2100: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOutcome {
    pub projection: ScenarioProjection,
    pub diagnostics: Vec<String>,
}

/// Long-term coefficients `(ln_slr, ln_slr_sq)` of a fit.
pub fn projection_coefficients(fit: &FitResult) -> Result<(f64, f64)> {
    Ok((fit.require("ln_slr")?, fit.require("ln_slr_sq")?))
}

pub fn project_region(fit: &FitResult, path: &ScenarioPath, base_rlr_mm: f64) -> Result<ProjectionOutcome> {
    let (b1, b2) = projection_coefficients(fit)?;
    project_region_with(b1, b2, path, base_rlr_mm)
}

pub fn project_region_with(b1: f64, b2: f64, path: &ScenarioPath, base_rlr_mm: f64) -> Result<ProjectionOutcome> {
    if !(base_rlr_mm > 0.0) {
        return Err(Error::Data(format!(
            "{}: base sea level {base_rlr_mm} mm is not positive",
            path.region_code
        )));
    }
    let mut series = vec![(BASE_YEAR, 0.0)];
    for step in &path.steps {
        let level = base_rlr_mm + step.slr_mm_vs_base;
        series.push((step.year, long_term_effect(b1, b2, level, base_rlr_mm)?));
    }
    let terminal = path.steps.iter().position(|s| s.year == TERMINAL_YEAR);
    let mut diagnostics = Vec::new();
    if terminal.is_none() {
        diagnostics.push(format!(
            "{} {}: path has no {TERMINAL_YEAR} step; terminal value omitted",
            path.scenario, path.region_code
        ));
    }
    Ok(ProjectionOutcome {
        projection: ScenarioProjection {
            scenario: path.scenario,
            region_code: path.region_code.clone(),
            base_rlr_mm,
            terminal_2100: terminal.map(|i| series[i + 1].1),
            population_2100: terminal.map(|i| path.steps[i].population),
            path: series,
        },
        diagnostics,
    })
}

/// Region base levels: the last reading at or before `BASE_YEAR`, else the
/// 7000 mm datum with a diagnostic.
pub fn base_sea_levels(
    regions: &[String],
    sea: &BTreeMap<String, RegionSeaLevel>,
) -> (BTreeMap<String, f64>, Vec<String>) {
    let mut out = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for r in regions {
        match sea.get(r).and_then(|s| s.last_observed(BASE_YEAR)) {
            Some((_, v)) => {
                out.insert(r.clone(), v);
            }
            None => {
                diagnostics.push(format!("{r}: no gauge reading; base level set to {REFERENCE_MM} mm"));
                out.insert(r.clone(), REFERENCE_MM);
            }
        }
    }
    (out, diagnostics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Population,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAggregate {
    pub scenario: ScenarioId,
    pub n_regions: usize,
    pub mean_uniform: f64,
    pub mean_population: f64,
    /// `(percentile, value)` over regional terminal changes, linear
    /// interpolation between order statistics.
    pub percentiles: Vec<(f64, f64)>,
}

impl ScenarioAggregate {
    pub fn mean(&self, weighting: Weighting) -> f64 {
        match weighting {
            Weighting::Population => self.mean_population,
            Weighting::Uniform => self.mean_uniform,
        }
    }
}

const PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Aggregates the terminal changes of one scenario's projections. Regions
/// without a 2100 value are left out.
pub fn aggregate_scenario(projections: &[ScenarioProjection]) -> Result<ScenarioAggregate> {
    let first = projections
        .first()
        .ok_or_else(|| Error::Data("no projections to aggregate".into()))?;
    if projections.iter().any(|p| p.scenario != first.scenario) {
        return Err(Error::Data("projections from different scenarios".into()));
    }
    let terminal: Vec<(f64, f64)> = projections
        .iter()
        .filter_map(|p| Some((p.terminal_2100?, p.population_2100.unwrap_or(0.0))))
        .collect();
    if terminal.is_empty() {
        return Err(Error::Data(format!("{}: no region has a 2100 value", first.scenario)));
    }
    let n = terminal.len() as f64;
    let mean_uniform = terminal.iter().map(|(v, _)| v).sum::<f64>() / n;
    let pop: f64 = terminal.iter().map(|(_, w)| w).sum();
    let mean_population = if pop > 0.0 {
        terminal.iter().map(|(v, w)| v * w).sum::<f64>() / pop
    } else {
        mean_uniform
    };
    let mut sorted: Vec<f64> = terminal.iter().map(|(v, _)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(ScenarioAggregate {
        scenario: first.scenario,
        n_regions: terminal.len(),
        mean_uniform,
        mean_population,
        percentiles: PERCENTILES.iter().map(|&p| (p, percentile(&sorted, p))).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Most negative first.
    pub worst: Vec<(String, f64)>,
    /// Highest first.
    pub best: Vec<(String, f64)>,
}

/// Top-`k` lowest and highest terminal changes; ties go to the
/// lexicographically smaller region code.
pub fn rank_regions(projections: &[ScenarioProjection], k: usize) -> Result<Ranking> {
    let mut vals: Vec<(String, f64)> = projections
        .iter()
        .filter_map(|p| Some((p.region_code.clone(), p.terminal_2100?)))
        .collect();
    if k > vals.len() {
        return Err(Error::Data(format!("k = {k} exceeds the {} ranked regions", vals.len())));
    }
    vals.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let worst = vals[..k].to_vec();
    vals.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let best = vals[..k].to_vec();
    Ok(Ranking { worst, best })
}

pub fn write_projection_csv<W: Write>(projections: &[ScenarioProjection], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "region_code", "base_rlr_mm", "year", "cumulative_gdppc_change"])?;
    for p in projections {
        for (year, v) in &p.path {
            w.write_record([
                p.scenario.to_string(),
                p.region_code.clone(),
                p.base_rlr_mm.to_string(),
                year.to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Two blocks per scenario in the layout of a worst/best table, changes in
/// percent to one decimal.
pub fn write_ranking_csv<W: Write>(rankings: &[(ScenarioId, Ranking)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "block", "rank", "region_code", "change_pct"])?;
    for (id, r) in rankings {
        for (block, list) in [("highest_loss", &r.worst), ("lowest_loss", &r.best)] {
            for (i, (region, v)) in list.iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    block.to_string(),
                    (i + 1).to_string(),
                    region.clone(),
                    format!("{:.1}", crate::effects::round_pct(*v)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id() -> ScenarioId {
        ScenarioId::new(2, Rcp::Rcp45, IceCase::Medium).unwrap()
    }

    fn path(region: &str, rises: &[(i32, f64)]) -> ScenarioPath {
        ScenarioPath {
            scenario: id(),
            region_code: region.into(),
            steps: rises
                .iter()
                .map(|&(year, r)| ScenarioStep { year, slr_mm_vs_base: r, population: 1e6 })
                .collect(),
        }
    }

    fn proj(region: &str, v: f64, pop: f64) -> ScenarioProjection {
        ScenarioProjection {
            scenario: id(),
            region_code: region.into(),
            base_rlr_mm: 7000.0,
            path: vec![(BASE_YEAR, 0.0), (TERMINAL_YEAR, v)],
            terminal_2100: Some(v),
            population_2100: Some(pop),
        }
    }

    #[test]
    fn flat_path_is_zero() {
        let p = path("ITH3", &[(2050, 0.0), (2100, 0.0)]);
        let o = project_region_with(675.0, -38.0, &p, 7050.0).unwrap();
        assert!(o.projection.path.iter().all(|&(_, v)| v == 0.0));
        assert_eq!(o.projection.terminal_2100, Some(0.0));
        assert_eq!(o.projection.path[0], (BASE_YEAR, 0.0));
    }

    #[test]
    fn oracle_value() {
        // 600 ln(7550/7050) - 34 (ln^2 7550 - ln^2 7050), 50-digit evaluation
        let p = path("ITH3", &[(2100, 500.0)]);
        let o = project_region_with(600.0, -34.0, &p, 7050.0).unwrap();
        assert!((o.projection.terminal_2100.unwrap() - -0.33320668174538314).abs() < 1e-11);
    }

    #[test]
    fn missing_terminal_is_diagnosed() {
        let o = project_region_with(1.0, 0.0, &path("ITH3", &[(2050, 10.0)]), 7000.0).unwrap();
        assert_eq!(o.projection.terminal_2100, None);
        assert_eq!(o.diagnostics.len(), 1);
    }

    #[test]
    fn aggregation() {
        let a = aggregate_scenario(&[proj("A", -0.07, 1.0)]).unwrap();
        assert_eq!(a.mean_uniform, -0.07);
        let a = aggregate_scenario(&[proj("A", -0.10, 1.0), proj("B", -0.02, 3.0)]).unwrap();
        assert!((a.mean_uniform - -0.06).abs() < 1e-15);
        let a = aggregate_scenario(&[proj("A", -0.09, 2e6), proj("B", -0.03, 1e6), proj("C", 0.01, 1e6)]).unwrap();
        assert!((a.mean_population - -0.05).abs() < 1e-15);
        assert_eq!(a.percentiles[2], (50.0, -0.03));
    }

    #[test]
    fn ranking_and_ties() {
        let r = rank_regions(&[proj("A", -5.0, 1.0), proj("B", -1.0, 1.0)], 1).unwrap();
        assert_eq!(r.worst[0].0, "A");
        assert_eq!(r.best[0].0, "B");
        let r = rank_regions(&[proj("B", -5.0, 1.0), proj("A", -5.0, 1.0)], 1).unwrap();
        assert_eq!(r.worst[0].0, "A");
        assert_eq!(r.best[0].0, "A");
        assert!(rank_regions(&[proj("A", 0.0, 1.0)], 2).is_err());
    }

    #[test]
    fn scenario_parsing_and_validation() {
        let csv = "scenario,ssp,rcp,ice,region_code,year,slr_mm_vs_base,population\n\
                   SSP5-RCP8.5-high_end,5,8.5,high_end,ITH3,2100,900,4.9e6\n\
                   SSP5-RCP8.5-high_end,5,8.5,high_end,ITH3,2050,400,4.9e6\n";
        let paths = load_scenario_csv(csv.as_bytes()).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].steps[0].year, 2050);
        assert_eq!(paths[0].scenario.to_string(), "SSP5-RCP8.5-high_end");
        let bad_year = "scenario,ssp,rcp,ice,region_code,year,slr_mm_vs_base,population\nx,5,8.5,high,ITH3,2200,1,1\n";
        assert!(load_scenario_csv(bad_year.as_bytes()).is_err());
        let bad_ssp = "scenario,ssp,rcp,ice,region_code,year,slr_mm_vs_base,population\nx,3,8.5,high,ITH3,2100,1,1\n";
        assert!(load_scenario_csv(bad_ssp.as_bytes()).is_err());
        let bad_pop = "scenario,ssp,rcp,ice,region_code,year,slr_mm_vs_base,population\nx,1,2.6,low,ITH3,2100,1,0\n";
        assert!(load_scenario_csv(bad_pop.as_bytes()).is_err());
    }

    #[test]
    fn uplift_gains_on_declining_branch() {
        // positive b1, negative b2, vertex far below the datum
        let o = project_region_with(2.48874358, -0.17979376, &path("FI1D", &[(2100, -300.0)]), 7000.0).unwrap();
        assert!(o.projection.terminal_2100.unwrap() > 0.0);
    }
}
