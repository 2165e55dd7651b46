use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use slr_core::effects::{
    effect_curve, point_estimate_table, significance_threshold, write_point_estimate_csv, EffectCurve,
    Threshold, REFERENCE_MM, TABLE_LEVELS_MM,
};
use slr_core::estimator::{rolling_fit, ClusterMode, CoefficientRow, EstimatorOptions, FitResult, RollingOptions};
use slr_core::panel::{build_region_sea_level, to_decadal_panel, PanelConfig, PanelDataset, RegionSeaLevel, SeaLevelSampling};
use slr_core::projector::{
    aggregate_scenario, base_sea_levels, load_scenario_csv, project_region_with, projection_coefficients,
    rank_regions, write_projection_csv, write_ranking_csv, ScenarioAggregate, ScenarioId, ScenarioProjection,
};
use slr_core::rlr::{
    load_econ_csv, load_extension_csv, load_station_dir, map_stations_to_regions, splice_growth_extension,
    RlrOptions, StationRegionMap,
};
use slr_core::specs::{build_spec_by_name, fit_panel_with, FeGroup, ModelName, ModelSpec};
use slr_core::validation::{
    compare_to_oracle, generate_fixture_corpus, monte_carlo, oracle_fixture, small_fixture_corpus, vcov_fixture,
    FixtureConfig, MonteCarloSummary, OracleComparison, SyntheticDgp,
};

use crate::config::{display, RunConfig};
use crate::provenance::{write_csv, write_json, Provenance};
use crate::CliError;

#[derive(Debug, Serialize)]
struct IngestReport {
    regions_used: Vec<String>,
    regions_excluded: Vec<String>,
    stations_read: usize,
    stations_per_region: BTreeMap<String, usize>,
    unmapped_stations: Vec<u32>,
    n_rows: usize,
    years: Vec<i32>,
    diagnostics: Vec<String>,
}

struct Ingested {
    panel: PanelDataset,
    sea: BTreeMap<String, RegionSeaLevel>,
    report: IngestReport,
}

fn panel_config(cfg: &RunConfig) -> Result<PanelConfig, CliError> {
    let sampling = match cfg.get("sampling").unwrap_or("point") {
        "point" => SeaLevelSampling::default(),
        "decade_mean" => SeaLevelSampling::DecadeMean,
        other => return Err(CliError::usage(format!("unknown sampling `{other}`"))),
    };
    Ok(PanelConfig {
        grid_start: cfg.parsed("panel_start", 1900)?,
        grid_end: cfg.parsed("panel_end", 2020)?,
        grid_step: cfg.parsed("panel_step", 10)?,
        sampling,
    })
}

fn load_sea(cfg: &RunConfig, prov: &mut Provenance) -> Result<(BTreeMap<String, RegionSeaLevel>, usize, Vec<u32>, Vec<String>), CliError> {
    let rlr_dir = cfg.required_path("rlr_dir")?;
    let mapping_path = cfg.required_path("mapping")?;
    prov.add_input("rlr_dir", &rlr_dir)?;
    prov.add_input("mapping", &mapping_path)?;
    let stations = load_station_dir(&rlr_dir, &RlrOptions::default())?;
    if stations.is_empty() {
        return Err(CliError::data(format!("no stations in {}", rlr_dir.display())));
    }
    let mapping = StationRegionMap::from_csv(open(&mapping_path)?)?;
    let grouping = map_stations_to_regions(&stations, &mapping);
    if grouping.groups.is_empty() {
        return Err(CliError::data("no coastal regions: no station maps to a region"));
    }
    Ok((build_region_sea_level(&grouping), stations.len(), grouping.unmapped, grouping.warnings))
}

fn open(path: &PathBuf) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn run_ingest(cfg: &RunConfig, prov: &mut Provenance) -> Result<Ingested, CliError> {
    let (sea, stations_read, unmapped, mut diagnostics) = load_sea(cfg, prov)?;
    let econ_path = cfg.required_path("econ")?;
    prov.add_input("econ", &econ_path)?;
    let mut econ = load_econ_csv(open(&econ_path)?)?;
    if let Some(ext_path) = cfg.existing_path("extension")? {
        prov.add_input("extension", &ext_path)?;
        let ext = load_extension_csv(open(&ext_path)?)?;
        for series in &mut econ {
            if let Some(steps) = ext.get(&series.region_code) {
                *series = splice_growth_extension(series, steps)?;
            }
        }
        for region in ext.keys() {
            if !econ.iter().any(|s| &s.region_code == region) {
                diagnostics.push(format!("extension rows for {region} have no base series"));
            }
        }
    }
    let build = to_decadal_panel(&sea, &econ, &panel_config(cfg)?)?;
    if build.panel.is_empty() {
        return Err(CliError::data("no coastal regions: the panel has no rows"));
    }
    diagnostics.extend(build.diagnostics);
    let mut excluded = build.excluded_regions;
    for region in sea.keys() {
        if !build.panel.region_index.contains(region) && !excluded.contains(region) {
            excluded.push(region.clone());
        }
    }
    excluded.sort();
    let report = IngestReport {
        regions_used: build.panel.region_index.clone(),
        regions_excluded: excluded,
        stations_read,
        stations_per_region: sea.iter().map(|(k, v)| (k.clone(), v.station_count)).collect(),
        unmapped_stations: unmapped,
        n_rows: build.panel.len(),
        years: build.panel.decade_grid.clone(),
        diagnostics,
    };
    Ok(Ingested { panel: build.panel, sea, report })
}

/// The panel from `panel`, else built from the raw inputs.
fn load_panel(cfg: &RunConfig, prov: &mut Provenance) -> Result<PanelDataset, CliError> {
    match cfg.existing_path("panel")? {
        Some(p) => {
            prov.add_input("panel", &p)?;
            Ok(PanelDataset::read_csv(open(&p)?)?)
        }
        None => Ok(run_ingest(cfg, prov)?.panel),
    }
}

fn has_panel_source(cfg: &RunConfig) -> bool {
    cfg.get("panel").is_some() || (cfg.get("rlr_dir").is_some() && cfg.get("econ").is_some())
}

fn specs(cfg: &RunConfig, default: &str) -> Result<Vec<ModelSpec>, CliError> {
    let mode: ClusterMode = cfg.get("cluster_mode").unwrap_or("two_way").parse().map_err(|e: slr_core::Error| CliError::usage(e.to_string()))?;
    let names = cfg.models(default);
    if names.is_empty() {
        return Err(CliError::usage("no models requested"));
    }
    names
        .iter()
        .map(|n| Ok(build_spec_by_name(n)?.with_cluster_mode(mode)))
        .collect()
}

fn fit(spec: &ModelSpec, panel: &PanelDataset) -> Result<FitResult, CliError> {
    fit_panel_with(spec, panel, &EstimatorOptions::default()).map_err(|e| CliError::from(e).context(spec.name.as_str()))
}

fn injected_fit(cfg: &RunConfig, model: &str) -> Result<Option<FitResult>, CliError> {
    let Some(inj) = cfg.injected(model)? else { return Ok(None) };
    let names: Vec<String> = inj.coefs.keys().cloned().collect();
    let k = names.len();
    let mut vcov = vec![vec![0.0; k]; k];
    for (i, n) in names.iter().enumerate() {
        vcov[i][i] = inj.ses.get(n).map_or(0.0, |s| s * s);
    }
    Ok(Some(FitResult::from_coefficients(
        model,
        names,
        inj.coefs.values().copied().collect(),
        vcov,
    )?))
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let mut prov = Provenance::new("ingest", vec![], cfg.entries());
    let ing = run_ingest(cfg, &mut prov)?;
    let out = cfg.out_dir()?;
    write_csv(&out.join("panel.csv"), &prov, |w| ing.panel.write_csv(w))?;
    write_json(&out.join("ingest_report.json"), &prov, &ing.report)
}

#[derive(Debug, Serialize)]
struct EstimateOutput<'a> {
    spec: &'a ModelSpec,
    n_obs: usize,
    r_squared: f64,
    r_squared_within: f64,
    region_fe: bool,
    country_year_fe: bool,
    coefficients: Vec<CoefficientRow>,
    fit: &'a FitResult,
}

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

fn write_table_csv(w: &mut Vec<u8>, out: &EstimateOutput) -> slr_core::Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["row", "estimate", "std_error", "t_stat", "p_value", "stars"])?;
    for r in &out.coefficients {
        c.write_record([
            r.name.clone(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.t_stat.to_string(),
            r.p_value.to_string(),
            stars(r.p_value).to_string(),
        ])?;
    }
    let yes = |b: bool| if b { "yes" } else { "no" }.to_string();
    let stat = |name: &str, v: String| vec![name.to_string(), v, String::new(), String::new(), String::new(), String::new()];
    c.write_record(stat("country_year_fe", yes(out.country_year_fe)))?;
    c.write_record(stat("region_fe", yes(out.region_fe)))?;
    c.write_record(stat("observations", out.n_obs.to_string()))?;
    c.write_record(stat("r_squared", out.r_squared.to_string()))?;
    c.flush()?;
    Ok(())
}

pub fn estimate(cfg: &RunConfig) -> Result<(), CliError> {
    let specs = specs(cfg, "adaptation")?;
    let names: Vec<String> = specs.iter().map(|s| s.name.to_string()).collect();
    let mut prov = Provenance::new("estimate", names, cfg.entries());
    let panel = load_panel(cfg, &mut prov)?;
    let fits = specs.iter().map(|s| fit(s, &panel)).collect::<Result<Vec<_>, _>>()?;
    let out = cfg.out_dir()?;
    for (spec, f) in specs.iter().zip(&fits) {
        let p = prov.with_specs(&[spec.name.as_str()]);
        let o = EstimateOutput {
            spec,
            n_obs: f.n_obs,
            r_squared: f.r_squared,
            r_squared_within: f.r_squared_within,
            region_fe: spec.has_fe(FeGroup::Region),
            country_year_fe: spec.has_fe(FeGroup::CountryYear),
            coefficients: f.coefficient_table(),
            fit: f,
        };
        write_json(&out.join(format!("estimate_{}.json", spec.name)), &p, &o)?;
        write_csv(&out.join(format!("estimate_{}.csv", spec.name)), &p, |w| write_table_csv(w, &o))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EffectsReport<'a> {
    threshold: Threshold,
    reference_mm: f64,
    mean_ln_slr: f64,
    extrapolation_boundary_mm: f64,
    coefficient_source: &'a str,
    point_estimates_written: bool,
    curve: &'a EffectCurve,
}

pub fn effects(cfg: &RunConfig) -> Result<(), CliError> {
    let reference = cfg.parsed("reference_mm", REFERENCE_MM)?;
    let grid = cfg.effect_grid()?;
    let mut prov = Provenance::new("effects", vec!["adaptation".into(), "dynamic".into()], cfg.entries());
    let injected_adaptation = injected_fit(cfg, "adaptation")?;
    let mut dynamic = injected_fit(cfg, "dynamic")?;
    let mut panel_mean = None;
    let (adaptation, source) = match injected_adaptation {
        Some(f) => (f, "injected"),
        None => {
            if !has_panel_source(cfg) {
                return Err(CliError::usage(
                    "effects needs injected adaptation coefficients or a panel (panel, or rlr_dir + mapping + econ)",
                ));
            }
            let mode: ClusterMode = cfg.get("cluster_mode").unwrap_or("two_way").parse().map_err(|e: slr_core::Error| CliError::usage(e.to_string()))?;
            let panel = load_panel(cfg, &mut prov)?;
            panel_mean = Some(panel.rows.iter().map(|r| r.ln_slr).sum::<f64>() / panel.len() as f64);
            let a = fit(&build_spec_by_name("adaptation")?.with_cluster_mode(mode), &panel)?;
            if dynamic.is_none() {
                dynamic = Some(fit(&build_spec_by_name("dynamic")?.with_cluster_mode(mode), &panel)?);
            }
            (a, "estimated")
        }
    };
    let mean_ln_slr = match cfg.optional::<f64>("mean_ln_slr")? {
        Some(m) => m,
        None => panel_mean.unwrap_or_else(|| reference.ln()),
    };
    let curve = effect_curve(&adaptation, &grid, reference, mean_ln_slr)?;
    let threshold = significance_threshold(&curve);
    let out = cfg.out_dir()?;
    write_csv(&out.join("effect_curve.csv"), &prov.with_specs(&["adaptation"]), |w| curve.write_csv(w))?;
    let mut wrote_points = false;
    if let Some(d) = &dynamic {
        let rows = point_estimate_table(&adaptation, d, &TABLE_LEVELS_MM, reference, mean_ln_slr)?;
        write_csv(&out.join("point_estimates.csv"), &prov, |w| write_point_estimate_csv(&rows, w))?;
        wrote_points = true;
    }
    write_json(
        &out.join("threshold.json"),
        &prov,
        &EffectsReport {
            threshold,
            reference_mm: reference,
            mean_ln_slr,
            extrapolation_boundary_mm: curve.extrapolation_boundary_mm,
            coefficient_source: source,
            point_estimates_written: wrote_points,
            curve: &curve,
        },
    )
}

pub fn roll(cfg: &RunConfig) -> Result<(), CliError> {
    let specs = specs(cfg, "adaptation")?;
    let [spec] = specs.as_slice() else {
        return Err(CliError::usage("roll takes exactly one model"));
    };
    let options = RollingOptions {
        window_points: cfg.parsed("window_points", 6)?,
        focus: cfg.get("focus").unwrap_or("ln_slr").to_string(),
        ..RollingOptions::default()
    };
    let mut prov = Provenance::new("roll", vec![spec.name.to_string()], cfg.entries());
    let panel = load_panel(cfg, &mut prov)?;
    let result = rolling_fit(spec, &panel, &options, &EstimatorOptions::default())
        .map_err(|e| CliError::from(e).context(spec.name.as_str()))?;
    let first = result.first_significant_end_year();
    let out = cfg.out_dir()?;
    write_csv(&out.join("rolling.csv"), &prov, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "start_year",
            "end_year",
            "n_obs",
            "focus",
            "estimate",
            "ci_low",
            "ci_high",
            "significant",
            "first_significant_end_year",
        ])?;
        for win in &result.windows {
            w.write_record([
                win.start_year.to_string(),
                win.end_year.to_string(),
                win.fit.n_obs.to_string(),
                options.focus.clone(),
                win.focus_estimate.to_string(),
                win.focus_ci.0.to_string(),
                win.focus_ci.1.to_string(),
                win.significant.to_string(),
                first.map(|y| y.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    #[derive(Serialize)]
    struct RollReport<'a> {
        window_points: usize,
        focus: &'a str,
        windows: usize,
        first_significant_end_year: Option<i32>,
        persistent_significance_end_year: Option<i32>,
        diagnostics: &'a [String],
    }
    write_json(
        &out.join("rolling.json"),
        &prov,
        &RollReport {
            window_points: options.window_points,
            focus: &options.focus,
            windows: result.windows.len(),
            first_significant_end_year: first,
            persistent_significance_end_year: result.persistent_significance_end_year(),
            diagnostics: &result.diagnostics,
        },
    )
}

#[derive(Debug, Serialize)]
struct ProjectReport {
    coefficient_source: String,
    b1: f64,
    b2: f64,
    aggregates: Vec<ScenarioAggregate>,
    diagnostics: Vec<String>,
}

pub fn project(cfg: &RunConfig) -> Result<(), CliError> {
    let mut prov = Provenance::new("project", vec!["adaptation".into()], cfg.entries());
    let scen_path = cfg.required_path("scenarios")?;
    prov.add_input("scenarios", &scen_path)?;
    let paths = load_scenario_csv(open(&scen_path)?)?;
    if paths.is_empty() {
        return Err(CliError::data("scenario file has no rows"));
    }
    let mut sea = BTreeMap::new();
    let (fit_result, source) = match injected_fit(cfg, "adaptation")? {
        Some(f) => (f, "injected"),
        None => {
            if !has_panel_source(cfg) {
                return Err(CliError::usage("project needs injected adaptation coefficients or a panel"));
            }
            let panel = match cfg.existing_path("panel")? {
                Some(_) => load_panel(cfg, &mut prov)?,
                None => {
                    let ing = run_ingest(cfg, &mut prov)?;
                    sea = ing.sea;
                    ing.panel
                }
            };
            (fit(&build_spec_by_name("adaptation")?, &panel)?, "estimated")
        }
    };
    let (b1, b2) = projection_coefficients(&fit_result)?;
    if sea.is_empty() && cfg.get("rlr_dir").is_some() && cfg.get("mapping").is_some() {
        sea = load_sea(cfg, &mut prov)?.0;
    }
    let regions: Vec<String> = {
        let mut r: Vec<String> = paths.iter().map(|p| p.region_code.clone()).collect();
        r.sort();
        r.dedup();
        r
    };
    let (bases, mut diagnostics) = base_sea_levels(&regions, &sea);
    let mut by_scenario: BTreeMap<ScenarioId, Vec<ScenarioProjection>> = BTreeMap::new();
    for p in &paths {
        let outcome = project_region_with(b1, b2, p, bases[&p.region_code])?;
        diagnostics.extend(outcome.diagnostics);
        by_scenario.entry(p.scenario).or_default().push(outcome.projection);
    }
    let top_k: usize = cfg.parsed("top_k", 5)?;
    let mut aggregates = Vec::new();
    let mut rankings = Vec::new();
    for (id, projections) in &by_scenario {
        aggregates.push(aggregate_scenario(projections)?);
        let ranked = projections.iter().filter(|p| p.terminal_2100.is_some()).count();
        rankings.push((*id, rank_regions(projections, top_k.min(ranked))?));
    }
    let all: Vec<ScenarioProjection> = by_scenario.into_values().flatten().collect();
    let out = cfg.out_dir()?;
    write_csv(&out.join("projections.csv"), &prov, |w| write_projection_csv(&all, w))?;
    write_csv(&out.join("rankings.csv"), &prov, |w| write_ranking_csv(&rankings, w))?;
    write_json(
        &out.join("aggregates.json"),
        &prov,
        &ProjectReport { coefficient_source: source.into(), b1, b2, aggregates, diagnostics },
    )
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    seed: u64,
    oracle_fixtures: usize,
    oracle: BTreeMap<String, OracleComparison>,
    oracle_max_coefficient_rel: f64,
    vcov_fixture: BTreeMap<String, OracleComparison>,
    monte_carlo: MonteCarloSummary,
    fixtures_written_to: Option<String>,
}

pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let seed: u64 = cfg.parsed("seed", 1)?;
    let replications: usize = cfg.parsed("replications", 500)?;
    let prov = Provenance::new("validate", ModelName::ALL.iter().map(|m| m.to_string()).collect(), cfg.entries());
    let opts = EstimatorOptions::default();

    let n_fixtures = 10;
    let mut oracle = BTreeMap::new();
    for m in ModelName::ALL {
        let spec = slr_core::specs::build_spec(m);
        let mut worst: Option<OracleComparison> = None;
        for i in 0..n_fixtures {
            let panel = oracle_fixture(seed.wrapping_add(i))?;
            let c = compare_to_oracle(&panel, &spec, &opts).map_err(|e| CliError::from(e).context(m.as_str()))?;
            worst = Some(match worst {
                Some(w) if w.coefficient_rel >= c.coefficient_rel => w,
                _ => c,
            });
        }
        oracle.insert(m.to_string(), worst.expect("fixtures"));
    }
    let max_rel = oracle.values().map(|c| c.coefficient_rel).fold(0.0, f64::max);

    let small = vcov_fixture(seed)?;
    let mut vc = BTreeMap::new();
    for mode in [ClusterMode::OneWay, ClusterMode::TwoWay] {
        let spec = slr_core::specs::build_spec(ModelName::Adaptation).with_cluster_mode(mode);
        let key = if mode == ClusterMode::OneWay { "one_way" } else { "two_way" };
        vc.insert(key.to_string(), compare_to_oracle(&small, &spec, &opts)?);
    }

    let dgp = SyntheticDgp::full_scale(seed);
    let mc_spec = slr_core::specs::build_spec(ModelName::Adaptation).with_cluster_mode(ClusterMode::OneWay);
    let mc = monte_carlo(&dgp, &mc_spec, replications, 0.95, &opts)?;

    let fixtures_written_to = match cfg.get("emit_fixtures") {
        Some(dir) => {
            let root = PathBuf::from(dir).join("v1");
            generate_fixture_corpus(&FixtureConfig::standard(seed))?.write_to(&root.join("standard"))?;
            small_fixture_corpus().write_to(&root.join("small"))?;
            Some(display(&root))
        }
        None => None,
    };
    let out = cfg.out_dir()?;
    write_json(
        &out.join("validation.json"),
        &prov,
        &ValidationReport {
            seed,
            oracle_fixtures: n_fixtures as usize,
            oracle,
            oracle_max_coefficient_rel: max_rel,
            vcov_fixture: vc,
            monte_carlo: mc,
            fixtures_written_to,
        },
    )
}
