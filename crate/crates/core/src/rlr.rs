//! Tide-gauge and regional economic inputs.
//!
//! Annual RLR files hold one record per line, `year; value_mm; flag; quality`,
//! with `-99999` marking a year without a valid annual mean. The RLR datum sits
//! roughly 7000 mm below local mean sea level, so every valid reading is
//! positive. Stations carry no region code; a separate mapping table assigns
//! them to NUTS2 regions. Regional GDP and population come from a decadal
//! source that can be extended with annual growth rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MISSING_SENTINEL: f64 = -99999.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlrRecord {
    pub year: i32,
    /// Annual mean on the RLR datum in mm; `None` for sentinel years.
    pub rlr_mm: Option<f64>,
    pub flag: String,
    pub quality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    pub station_id: u32,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub records: Vec<RlrRecord>,
}

impl StationSeries {
    pub fn present_count(&self) -> usize {
        self.records.iter().filter(|r| r.rlr_mm.is_some()).count()
    }

    pub fn value(&self, year: i32) -> Option<f64> {
        self.records
            .binary_search_by_key(&year, |r| r.year)
            .ok()
            .and_then(|i| self.records[i].rlr_mm)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RlrOptions {
    pub sentinel: f64,
}

impl Default for RlrOptions {
    fn default() -> Self {
        Self {
            sentinel: MISSING_SENTINEL,
        }
    }
}

pub fn parse_rlr_annual(content: &str, station_id: u32) -> Result<StationSeries> {
    parse_rlr_annual_with(content, station_id, &RlrOptions::default())
}

pub fn parse_rlr_annual_with(
    content: &str,
    station_id: u32,
    options: &RlrOptions,
) -> Result<StationSeries> {
    let mut records: Vec<RlrRecord> = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(';').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected at least 2 `;`-separated fields, found {}", fields.len()),
            });
        }
        let year: i32 = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("year `{}` is not an integer", fields[0]),
        })?;
        let value: f64 = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("value `{}` is not numeric", fields[1]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("value `{}` is not finite", fields[1]),
            });
        }
        let rlr_mm = if value == options.sentinel {
            None
        } else if value <= 0.0 {
            return Err(Error::Structure(format!(
                "station {station_id}, line {line_no}: RLR reading {value} mm is not positive"
            )));
        } else {
            Some(value)
        };
        if let Some(prev) = records.last() {
            if year <= prev.year {
                if records.iter().any(|r| r.year == year) {
                    return Err(Error::Structure(format!(
                        "station {station_id}: duplicate year {year} at line {line_no}"
                    )));
                }
                return Err(Error::Structure(format!(
                    "station {station_id}: year {year} at line {line_no} precedes {}",
                    prev.year
                )));
            }
        }
        records.push(RlrRecord {
            year,
            rlr_mm,
            flag: fields.get(2).copied().unwrap_or("").to_string(),
            quality: fields.get(3).copied().unwrap_or("").to_string(),
        });
    }
    Ok(StationSeries {
        station_id,
        name: String::new(),
        latitude: f64::NAN,
        longitude: f64::NAN,
        records,
    })
}

/// Writes the records back in annual RLR layout.
pub fn serialize_rlr_annual(series: &StationSeries, options: &RlrOptions) -> String {
    let mut out = String::new();
    for r in &series.records {
        let value = r.rlr_mm.unwrap_or(options.sentinel);
        out.push_str(&format!("{}; {}; {}; {}\n", r.year, value, r.flag, r.quality));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationMeta {
    pub station_id: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub name: String,
}

/// Parses a station list (`id; lat; lon; name; ...`) as shipped next to the
/// annual files.
pub fn parse_station_list(content: &str) -> Result<Vec<StationMeta>> {
    let mut out = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(';').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                line: idx + 1,
                message: "station list lines need `id; lat; lon; name`".into(),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("{what} `{s}` is not numeric"),
            })
        };
        out.push(StationMeta {
            station_id: fields[0].parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("station id `{}` is not an integer", fields[0]),
            })?,
            latitude: num(fields[1], "latitude")?,
            longitude: num(fields[2], "longitude")?,
            name: fields[3].to_string(),
        });
    }
    Ok(out)
}

/// Loads every `<id>.rlrdata` file in `dir`, attaching metadata from
/// `filelist.txt` when present. Output is ordered by station id.
pub fn load_station_dir(dir: &Path, options: &RlrOptions) -> Result<Vec<StationSeries>> {
    let mut meta = BTreeMap::new();
    let list = dir.join("filelist.txt");
    if list.exists() {
        for m in parse_station_list(&fs::read_to_string(&list)?)? {
            meta.insert(m.station_id, m);
        }
    }
    let mut stations = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("rlrdata") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let id: u32 = stem.parse().map_err(|_| {
            Error::Structure(format!("file name `{}` is not a station id", path.display()))
        })?;
        let mut content = String::new();
        fs::File::open(&path)?.read_to_string(&mut content)?;
        let mut series = parse_rlr_annual_with(&content, id, options).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        if let Some(m) = meta.get(&id) {
            series.name = m.name.clone();
            series.latitude = m.latitude;
            series.longitude = m.longitude;
        }
        stations.push(series);
    }
    stations.sort_by_key(|s| s.station_id);
    Ok(stations)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationRegion {
    pub station_id: u32,
    pub region_code: String,
    pub country_code: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StationRegionMap {
    pub entries: Vec<StationRegion>,
}

/// NUTS2 syntax: two ASCII letters followed by one or two alphanumerics.
pub fn is_nuts2_code(code: &str) -> bool {
    let b = code.as_bytes();
    (3..=4).contains(&b.len())
        && b[..2].iter().all(u8::is_ascii_uppercase)
        && b[2..].iter().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
}

impl StationRegionMap {
    pub fn new(entries: Vec<StationRegion>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.station_id) {
                return Err(Error::Structure(format!(
                    "station {} appears more than once in the region mapping",
                    e.station_id
                )));
            }
            if !is_nuts2_code(&e.region_code) {
                return Err(Error::Structure(format!(
                    "`{}` is not a NUTS2 region code",
                    e.region_code
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Reads `station_id,region_code,country_code`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let entries = rdr
            .deserialize::<StationRegion>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(entries)
    }

    pub fn get(&self, station_id: u32) -> Option<&StationRegion> {
        self.entries.iter().find(|e| e.station_id == station_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStations {
    pub country_code: String,
    pub stations: Vec<StationSeries>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationGrouping {
    pub groups: BTreeMap<String, RegionStations>,
    /// Stations with no mapping entry.
    pub unmapped: Vec<u32>,
    /// Mapping entries that name a station absent from the input.
    pub warnings: Vec<String>,
}

impl StationGrouping {
    pub fn mapped_count(&self) -> usize {
        self.groups.values().map(|g| g.stations.len()).sum()
    }
}

pub fn map_stations_to_regions(
    stations: &[StationSeries],
    mapping: &StationRegionMap,
) -> StationGrouping {
    let mut grouping = StationGrouping::default();
    for s in stations {
        match mapping.get(s.station_id) {
            Some(entry) => grouping
                .groups
                .entry(entry.region_code.clone())
                .or_insert_with(|| RegionStations {
                    country_code: entry.country_code.clone(),
                    stations: Vec::new(),
                })
                .stations
                .push(s.clone()),
            None => grouping.unmapped.push(s.station_id),
        }
    }
    let known: BTreeSet<u32> = stations.iter().map(|s| s.station_id).collect();
    for e in &mapping.entries {
        if !known.contains(&e.station_id) {
            grouping.warnings.push(format!(
                "mapping entry for station {} ({}) has no station file",
                e.station_id, e.region_code
            ));
        }
    }
    grouping
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconObservation {
    pub year: i32,
    /// Millions of 2011 international dollars.
    pub gdp: f64,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEconSeries {
    pub region_code: String,
    pub country_code: String,
    pub observations: Vec<EconObservation>,
}

impl RegionEconSeries {
    pub fn get(&self, year: i32) -> Option<&EconObservation> {
        self.observations
            .binary_search_by_key(&year, |o| o.year)
            .ok()
            .map(|i| &self.observations[i])
    }
}

#[derive(Debug, Deserialize)]
struct EconCsvRow {
    region_code: String,
    country_code: String,
    year: i32,
    gdp: f64,
    population: f64,
}

/// Reads `region_code,country_code,year,gdp,population` into per-region
/// series ordered by region code then year.
pub fn load_econ_csv<R: Read>(reader: R) -> Result<Vec<RegionEconSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut by_region: BTreeMap<String, RegionEconSeries> = BTreeMap::new();
    for row in rdr.deserialize::<EconCsvRow>() {
        let row = row?;
        let series = by_region
            .entry(row.region_code.clone())
            .or_insert_with(|| RegionEconSeries {
                region_code: row.region_code.clone(),
                country_code: row.country_code.clone(),
                observations: Vec::new(),
            });
        if series.country_code != row.country_code {
            return Err(Error::Structure(format!(
                "region {} listed under countries {} and {}",
                row.region_code, series.country_code, row.country_code
            )));
        }
        series.observations.push(EconObservation {
            year: row.year,
            gdp: row.gdp,
            population: row.population,
        });
    }
    for series in by_region.values_mut() {
        series.observations.sort_by_key(|o| o.year);
        if let Some(w) = series.observations.windows(2).find(|w| w[0].year == w[1].year) {
            return Err(Error::Structure(format!(
                "region {} has two observations for {}",
                series.region_code, w[0].year
            )));
        }
    }
    Ok(by_region.into_values().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthStep {
    pub year: i32,
    pub gdp_growth: f64,
    pub pop_growth: f64,
}

#[derive(Debug, Deserialize)]
struct ExtensionCsvRow {
    region_code: String,
    year: i32,
    gdp_growth: f64,
    pop_growth: f64,
}

/// Reads `region_code,year,gdp_growth,pop_growth`.
pub fn load_extension_csv<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<GrowthStep>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out: BTreeMap<String, Vec<GrowthStep>> = BTreeMap::new();
    for row in rdr.deserialize::<ExtensionCsvRow>() {
        let row = row?;
        out.entry(row.region_code).or_default().push(GrowthStep {
            year: row.year,
            gdp_growth: row.gdp_growth,
            pop_growth: row.pop_growth,
        });
    }
    for steps in out.values_mut() {
        steps.sort_by_key(|s| s.year);
    }
    Ok(out)
}

/// Extends `base` past its last year by compounding annual growth rates.
/// Base observations are copied unchanged.
pub fn splice_growth_extension(
    base: &RegionEconSeries,
    extension: &[GrowthStep],
) -> Result<RegionEconSeries> {
    let last = *base.observations.last().ok_or_else(|| {
        Error::Data(format!("region {} has no base observations", base.region_code))
    })?;
    let mut out = base.clone();
    let mut prev = last;
    for step in extension {
        if step.year != prev.year + 1 {
            return Err(Error::Structure(format!(
                "region {}: extension year {} does not follow {}",
                base.region_code, step.year, prev.year
            )));
        }
        if step.gdp_growth <= -1.0 || step.pop_growth <= -1.0 {
            return Err(Error::Data(format!(
                "region {}: growth rate at {} is at or below -100%",
                base.region_code, step.year
            )));
        }
        let next = EconObservation {
            year: step.year,
            gdp: prev.gdp * (1.0 + step.gdp_growth),
            population: prev.population * (1.0 + step.pop_growth),
        };
        out.observations.push(next);
        prev = next;
    }
    Ok(out)
}
