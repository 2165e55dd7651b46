//! Decadal estimation panel.
//!
//! Station readings are averaged per region and year, sampled on a decade
//! grid, and combined with regional GDP per capita into rows carrying the
//! 10-year log growth, its lag, log sea level terms and the penalty
//! `(ln_slr - region mean ln_slr)^2`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rlr::{RegionEconSeries, StationGrouping};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSeaLevel {
    pub country_code: String,
    pub station_count: usize,
    /// Year -> mean RLR level in mm over stations reporting that year.
    pub annual: BTreeMap<i32, f64>,
}

impl RegionSeaLevel {
    /// Most recent reading at or before `year`.
    pub fn last_observed(&self, year: i32) -> Option<(i32, f64)> {
        self.annual.range(..=year).next_back().map(|(&y, &v)| (y, v))
    }
}

pub fn build_region_sea_level(grouping: &StationGrouping) -> BTreeMap<String, RegionSeaLevel> {
    let mut out = BTreeMap::new();
    for (region, group) in &grouping.groups {
        let mut sums: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
        for station in &group.stations {
            for r in &station.records {
                if let Some(v) = r.rlr_mm {
                    let e = sums.entry(r.year).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                }
            }
        }
        let annual = sums
            .into_iter()
            .map(|(y, (sum, n))| (y, sum / n as f64))
            .collect();
        out.insert(
            region.clone(),
            RegionSeaLevel {
                country_code: group.country_code.clone(),
                station_count: group.stations.len(),
                annual,
            },
        );
    }
    out
}

/// How the sea level attached to a grid year is read from the annual series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SeaLevelSampling {
    /// The grid year's value, else the mean of the values within
    /// `fallback_radius` years of it.
    Point { fallback_radius: i32 },
    /// Mean over the `grid_step` years ending at the grid year.
    DecadeMean,
}

impl Default for SeaLevelSampling {
    fn default() -> Self {
        SeaLevelSampling::Point { fallback_radius: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub grid_start: i32,
    pub grid_end: i32,
    pub grid_step: i32,
    pub sampling: SeaLevelSampling,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            grid_start: 1900,
            grid_end: 2020,
            grid_step: 10,
            sampling: SeaLevelSampling::default(),
        }
    }
}

impl PanelConfig {
    pub fn grid(&self) -> Vec<i32> {
        (self.grid_start..=self.grid_end)
            .step_by(self.grid_step.max(1) as usize)
            .collect()
    }
}

fn sample_sea_level(series: &RegionSeaLevel, year: i32, config: &PanelConfig) -> Option<f64> {
    let mean_over = |lo: i32, hi: i32| {
        let vals: Vec<f64> = series.annual.range(lo..=hi).map(|(_, &v)| v).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    match config.sampling {
        SeaLevelSampling::Point { fallback_radius } => series
            .annual
            .get(&year)
            .copied()
            .or_else(|| mean_over(year - fallback_radius, year + fallback_radius)),
        SeaLevelSampling::DecadeMean => mean_over(year - config.grid_step + 1, year),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub region_code: String,
    pub country_code: String,
    pub year: i32,
    pub d_ln_gdppc: f64,
    pub ln_gdppc_lag: f64,
    pub ln_slr: f64,
    pub ln_slr_sq: f64,
    pub ln_slr_lag: f64,
    pub ln_slr_lag_sq: f64,
    pub penalty: f64,
    pub country_year: String,
}

pub fn country_year_label(country: &str, year: i32) -> String {
    format!("{country}_{year}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub rows: Vec<PanelRow>,
    pub region_index: Vec<String>,
    pub country_year_index: Vec<String>,
    pub decade_grid: Vec<i32>,
}

impl PanelDataset {
    /// Orders rows by (region, year) and rebuilds the label dictionaries.
    pub fn from_rows(mut rows: Vec<PanelRow>) -> Result<Self> {
        rows.sort_by(|a, b| (&a.region_code, a.year).cmp(&(&b.region_code, b.year)));
        if let Some(w) = rows
            .windows(2)
            .find(|w| w[0].region_code == w[1].region_code && w[0].year == w[1].year)
        {
            return Err(Error::Structure(format!(
                "two panel rows for {} in {}",
                w[0].region_code, w[0].year
            )));
        }
        for r in &rows {
            let fields = [
                r.d_ln_gdppc,
                r.ln_gdppc_lag,
                r.ln_slr,
                r.ln_slr_sq,
                r.ln_slr_lag,
                r.ln_slr_lag_sq,
                r.penalty,
            ];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite value in panel row {} {}",
                    r.region_code, r.year
                )));
            }
        }
        let region_index: BTreeSet<&str> = rows.iter().map(|r| r.region_code.as_str()).collect();
        let cy_index: BTreeSet<&str> = rows.iter().map(|r| r.country_year.as_str()).collect();
        let grid: BTreeSet<i32> = rows.iter().map(|r| r.year).collect();
        Ok(Self {
            region_index: region_index.into_iter().map(String::from).collect(),
            country_year_index: cy_index.into_iter().map(String::from).collect(),
            decade_grid: grid.into_iter().collect(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows with `lo <= year <= hi`. Penalty values are carried over as built
    /// on the full panel.
    pub fn filter_years(&self, lo: i32, hi: i32) -> Result<Self> {
        Self::from_rows(
            self.rows
                .iter()
                .filter(|r| r.year >= lo && r.year <= hi)
                .cloned()
                .collect(),
        )
    }

    pub fn recompute_penalty(&mut self) {
        let means = compute_region_means(self);
        for r in &mut self.rows {
            let d = r.ln_slr - means[&r.region_code];
            r.penalty = d * d;
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let rows = rdr
            .deserialize::<PanelRow>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_rows(rows)
    }
}

/// Mean `ln_slr` per region over the panel's rows.
pub fn compute_region_means(panel: &PanelDataset) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &panel.rows {
        let e = acc.entry(r.region_code.clone()).or_insert((0.0, 0));
        e.0 += r.ln_slr;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelBuild {
    pub panel: PanelDataset,
    pub diagnostics: Vec<String>,
    /// Regions present in the economic data but lacking a sea-level series.
    pub excluded_regions: Vec<String>,
}

pub fn to_decadal_panel(
    sea: &BTreeMap<String, RegionSeaLevel>,
    econ: &[RegionEconSeries],
    config: &PanelConfig,
) -> Result<PanelBuild> {
    if config.grid_step <= 0 {
        return Err(Error::Data("grid step must be positive".into()));
    }
    let mut diagnostics = Vec::new();
    let mut excluded = Vec::new();
    let mut rows = Vec::new();
    for series in econ {
        let Some(sea_series) = sea.get(&series.region_code) else {
            excluded.push(series.region_code.clone());
            continue;
        };
        if sea_series.country_code != series.country_code {
            diagnostics.push(format!(
                "{}: station mapping says country {}, economic data says {}; using {}",
                series.region_code, sea_series.country_code, series.country_code, series.country_code
            ));
        }
        let gdppc = |year: i32| -> Option<std::result::Result<f64, String>> {
            let obs = series.get(year)?;
            if obs.gdp > 0.0 && obs.population > 0.0 {
                Some(Ok(obs.gdp * 1e6 / obs.population))
            } else {
                Some(Err(format!(
                    "{} {}: non-positive GDP ({}) or population ({})",
                    series.region_code, year, obs.gdp, obs.population
                )))
            }
        };
        let mut region_rows = Vec::new();
        for &year in config.grid().iter().skip(1) {
            let lag_year = year - config.grid_step;
            let (now, lag) = match (gdppc(year), gdppc(lag_year)) {
                (Some(Ok(a)), Some(Ok(b))) => (a, b),
                (Some(Err(msg)), _) | (_, Some(Err(msg))) => {
                    diagnostics.push(format!("row {} {year} rejected: {msg}", series.region_code));
                    continue;
                }
                _ => continue,
            };
            let (Some(s_now), Some(s_lag)) = (
                sample_sea_level(sea_series, year, config),
                sample_sea_level(sea_series, lag_year, config),
            ) else {
                continue;
            };
            let ln_slr = s_now.ln();
            let ln_slr_lag = s_lag.ln();
            region_rows.push(PanelRow {
                region_code: series.region_code.clone(),
                country_code: series.country_code.clone(),
                year,
                d_ln_gdppc: now.ln() - lag.ln(),
                ln_gdppc_lag: lag.ln(),
                ln_slr,
                ln_slr_sq: ln_slr * ln_slr,
                ln_slr_lag,
                ln_slr_lag_sq: ln_slr_lag * ln_slr_lag,
                penalty: 0.0,
                country_year: country_year_label(&series.country_code, year),
            });
        }
        if region_rows.is_empty() {
            diagnostics.push(format!("{}: no complete decade pairs", series.region_code));
        }
        rows.extend(region_rows);
    }
    for region in sea.keys() {
        if !econ.iter().any(|e| &e.region_code == region) {
            diagnostics.push(format!("{region}: sea-level series without economic data"));
        }
    }
    let mut panel = PanelDataset::from_rows(rows)?;
    panel.recompute_penalty();
    Ok(PanelBuild {
        panel,
        diagnostics,
        excluded_regions: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rlr::{parse_rlr_annual, EconObservation, RegionStations};
    use approx::assert_abs_diff_eq;

    fn grouping(stations: &[&str]) -> StationGrouping {
        let mut g = StationGrouping::default();
        g.groups.insert(
            "ITH3".into(),
            RegionStations {
                country_code: "IT".into(),
                stations: stations
                    .iter()
                    .enumerate()
                    .map(|(i, c)| parse_rlr_annual(c, i as u32 + 1).unwrap())
                    .collect(),
            },
        );
        g
    }

    #[test]
    fn two_station_mean() {
        let sea = build_region_sea_level(&grouping(&["1950; 6990", "1950; 7010"]));
        assert_eq!(sea["ITH3"].annual[&1950], 7000.0);
    }

    #[test]
    fn absent_station_skipped() {
        let sea = build_region_sea_level(&grouping(&["1950; -99999", "1950; 7010"]));
        assert_eq!(sea["ITH3"].annual[&1950], 7010.0);
    }

    #[test]
    fn three_station_mean() {
        let sea = build_region_sea_level(&grouping(&["1950; 6980", "1950; 7005", "1950; 7025"]));
        assert_abs_diff_eq!(sea["ITH3"].annual[&1950], 21010.0 / 3.0, epsilon = 1e-9);
    }

    fn econ(points: &[(i32, f64)]) -> RegionEconSeries {
        RegionEconSeries {
            region_code: "ITH3".into(),
            country_code: "IT".into(),
            observations: points
                .iter()
                .map(|&(year, gdppc)| EconObservation {
                    year,
                    gdp: gdppc,
                    population: 1e6,
                })
                .collect(),
        }
    }

    fn sea(points: &[(i32, f64)]) -> BTreeMap<String, RegionSeaLevel> {
        let mut m = BTreeMap::new();
        m.insert(
            "ITH3".to_string(),
            RegionSeaLevel {
                country_code: "IT".into(),
                station_count: 1,
                annual: points.iter().copied().collect(),
            },
        );
        m
    }

    #[test]
    fn single_decade_row() {
        let b = to_decadal_panel(
            &sea(&[(1990, 7000.0), (2000, 7000.0)]),
            &[econ(&[(1990, 10_000.0), (2000, 12_000.0)])],
            &PanelConfig::default(),
        )
        .unwrap();
        assert_eq!(b.panel.len(), 1);
        let r = &b.panel.rows[0];
        assert_eq!(r.year, 2000);
        assert_abs_diff_eq!(r.d_ln_gdppc, 0.18232155679395462, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ln_slr, 8.85366542803745, epsilon = 1e-12);
        assert_eq!(r.penalty, 0.0);
        assert_eq!(r.country_year, "IT_2000");
    }

    #[test]
    fn missing_lag_sea_level_drops_row() {
        let b = to_decadal_panel(
            &sea(&[(2000, 7000.0)]),
            &[econ(&[(1990, 10_000.0), (2000, 12_000.0)])],
            &PanelConfig::default(),
        )
        .unwrap();
        assert!(b.panel.is_empty());
    }

    #[test]
    fn fallback_radius_fills_grid_year() {
        let b = to_decadal_panel(
            &sea(&[(1989, 6990.0), (1991, 7010.0), (2000, 7000.0)]),
            &[econ(&[(1990, 1.0), (2000, 1.0)])],
            &PanelConfig::default(),
        )
        .unwrap();
        assert_eq!(b.panel.len(), 1);
        assert_eq!(b.panel.rows[0].ln_slr_lag, 7000f64.ln());
        assert_eq!(b.panel.rows[0].d_ln_gdppc, 0.0);
    }

    #[test]
    fn decade_mean_sampling() {
        let annual: Vec<(i32, f64)> = (1991..=2000).map(|y| (y, 7000.0 + (y - 1991) as f64)).collect();
        let mut all = annual.clone();
        all.push((1990, 7000.0));
        let cfg = PanelConfig {
            sampling: SeaLevelSampling::DecadeMean,
            ..PanelConfig::default()
        };
        let b = to_decadal_panel(&sea(&all), &[econ(&[(1990, 1.0), (2000, 1.0)])], &cfg).unwrap();
        assert_abs_diff_eq!(b.panel.rows[0].ln_slr, 7004.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_population_rejected_with_diagnostic() {
        let mut e = econ(&[(1990, 1.0), (2000, 1.0)]);
        e.observations[1].population = 0.0;
        let b = to_decadal_panel(&sea(&[(1990, 7000.0), (2000, 7000.0)]), &[e], &PanelConfig::default()).unwrap();
        assert!(b.panel.is_empty());
        assert!(b.diagnostics.iter().any(|d| d.contains("non-positive")));
    }

    #[test]
    fn region_without_sea_level_excluded() {
        let mut e = econ(&[(1990, 1.0), (2000, 1.0)]);
        e.region_code = "BE23".into();
        let b = to_decadal_panel(&sea(&[(1990, 7000.0)]), &[e], &PanelConfig::default()).unwrap();
        assert_eq!(b.excluded_regions, vec!["BE23".to_string()]);
    }

    fn row(region: &str, year: i32, ln_slr: f64) -> PanelRow {
        PanelRow {
            region_code: region.into(),
            country_code: "IT".into(),
            year,
            d_ln_gdppc: 0.0,
            ln_gdppc_lag: 9.0,
            ln_slr,
            ln_slr_sq: ln_slr * ln_slr,
            ln_slr_lag: ln_slr,
            ln_slr_lag_sq: ln_slr * ln_slr,
            penalty: 0.0,
            country_year: country_year_label("IT", year),
        }
    }

    #[test]
    fn symmetric_two_point_penalty() {
        let mut p = PanelDataset::from_rows(vec![row("ITH3", 1910, 8.85), row("ITH3", 1920, 8.87)]).unwrap();
        p.recompute_penalty();
        assert_abs_diff_eq!(compute_region_means(&p)["ITH3"], 8.86, epsilon = 1e-12);
        for r in &p.rows {
            assert_abs_diff_eq!(r.penalty, 1e-4, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_row_penalty_zero() {
        let mut p = PanelDataset::from_rows(vec![row("ITH3", 1910, 8.9)]).unwrap();
        p.recompute_penalty();
        assert_eq!(p.rows[0].penalty, 0.0);
    }

    #[test]
    fn three_point_penalty_by_hand() {
        let mut p = PanelDataset::from_rows(vec![
            row("ITH3", 1910, 8.80),
            row("ITH3", 1920, 8.85),
            row("ITH3", 1930, 8.95),
        ])
        .unwrap();
        p.recompute_penalty();
        // mean = 26.6 / 3 = 8.8666...; deviations -0.0666.., -0.0166.., 0.0833..
        let expected = [0.0044444444444444, 0.0002777777777778, 0.0069444444444444];
        for (r, e) in p.rows.iter().zip(expected) {
            assert_abs_diff_eq!(r.penalty, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn duplicate_rows_rejected() {
        assert!(PanelDataset::from_rows(vec![row("ITH3", 1910, 8.8), row("ITH3", 1910, 8.8)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut p = PanelDataset::from_rows(vec![row("ITH3", 1910, 8.81), row("BE23", 1920, 8.87)]).unwrap();
        p.recompute_penalty();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with(
            "region_code,country_code,year,d_ln_gdppc,ln_gdppc_lag,ln_slr,ln_slr_sq,ln_slr_lag,ln_slr_lag_sq,penalty,country_year"
        ));
        assert_eq!(PanelDataset::read_csv(buf.as_slice()).unwrap(), p);
    }
}
