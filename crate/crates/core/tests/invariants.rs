use proptest::prelude::*;

use slr_core::effects::{
    adaptation_gap, long_term_effect, short_term_effect, EffectModel,
};
use slr_core::estimator::{
    cluster_robust_vcov, ols_fit, ClusterMode, DesignMatrix, EstimatorOptions, Factor, FitResult,
};
use slr_core::panel::{compute_region_means, PanelDataset};
use slr_core::projector::{project_region_with, IceCase, Rcp, ScenarioId, ScenarioPath, ScenarioStep};
use slr_core::rlr::{
    map_stations_to_regions, parse_rlr_annual, serialize_rlr_annual, RlrOptions, RlrRecord,
    StationRegion, StationRegionMap, StationSeries,
};
use slr_core::specs::{build_spec, ModelName};
use slr_core::validation::{compare_to_oracle, generate_panel, SyntheticDgp};

fn small_panel(seed: u64) -> PanelDataset {
    let mut d = SyntheticDgp::full_scale(seed);
    d.n_regions = 8;
    d.n_countries = 2;
    d.n_decades = 6;
    d.sea_level.base_half_width_mm = 1500.0;
    generate_panel(&d).unwrap()
}

fn rel_close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= tol * scale)
}

fn record() -> impl Strategy<Value = (Option<f64>, String, String)> {
    (
        prop_oneof![1 => Just(None), 4 => (1.0f64..20000.0).prop_map(Some)],
        "[A-Z0-9]{0,3}",
        "[0-9]{0,3}",
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rlr_serialize_parse_round_trip(
        first in 1800i32..1950,
        gaps in prop::collection::vec(1i32..4, 1..40),
        recs in prop::collection::vec(record(), 40),
    ) {
        let mut year = first;
        let records: Vec<RlrRecord> = gaps
            .iter()
            .zip(&recs)
            .map(|(g, (v, flag, quality))| {
                year += g;
                RlrRecord { year, rlr_mm: *v, flag: flag.clone(), quality: quality.clone() }
            })
            .collect();
        let series = StationSeries {
            station_id: 7,
            name: String::new(),
            latitude: f64::NAN,
            longitude: f64::NAN,
            records,
        };
        let text = serialize_rlr_annual(&series, &RlrOptions::default());
        let back = parse_rlr_annual(&text, 7).unwrap();
        prop_assert_eq!(back.records, series.records);
    }

    #[test]
    fn station_grouping_is_a_partition(
        ids in prop::collection::btree_set(1u32..500, 1..30),
        mapped_mask in prop::collection::vec(any::<bool>(), 30),
        region_pick in prop::collection::vec(0usize..4, 30),
    ) {
        let regions = ["ITH3", "ITH5", "BE23", "NL32"];
        let stations: Vec<StationSeries> = ids
            .iter()
            .map(|&id| StationSeries {
                station_id: id,
                name: String::new(),
                latitude: 0.0,
                longitude: 0.0,
                records: Vec::new(),
            })
            .collect();
        let entries: Vec<StationRegion> = ids
            .iter()
            .enumerate()
            .filter(|(i, _)| mapped_mask[*i])
            .map(|(i, &id)| StationRegion {
                station_id: id,
                region_code: regions[region_pick[i]].into(),
                country_code: regions[region_pick[i]][..2].into(),
            })
            .collect();
        let n_mapped = entries.len();
        let grouping = map_stations_to_regions(&stations, &StationRegionMap::new(entries.clone()).unwrap());
        prop_assert_eq!(grouping.mapped_count(), n_mapped);
        prop_assert_eq!(grouping.mapped_count() + grouping.unmapped.len(), stations.len());
        for e in &entries {
            let g = &grouping.groups[&e.region_code];
            prop_assert_eq!(g.stations.iter().filter(|s| s.station_id == e.station_id).count(), 1);
            prop_assert_eq!(&g.country_code, &e.country_code);
        }
        prop_assert!(grouping.warnings.is_empty());
    }

    #[test]
    fn penalty_invariant_to_regional_level_shift(seed in 0u64..1000, shift in -0.5f64..0.5, region in 0usize..8) {
        let mut panel = small_panel(seed);
        panel.recompute_penalty();
        let before: Vec<f64> = panel.rows.iter().map(|r| r.penalty).collect();
        let target = panel.region_index[region].clone();
        for r in panel.rows.iter_mut().filter(|r| r.region_code == target) {
            r.ln_slr += shift;
        }
        let means = compute_region_means(&panel);
        prop_assert!(means[&target].is_finite());
        panel.recompute_penalty();
        for (a, r) in before.iter().zip(&panel.rows) {
            prop_assert!((a - r.penalty).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn cluster_relabeling_leaves_vcov_unchanged(seed in 0u64..1000, rot in 1usize..7) {
        let panel = small_panel(seed);
        let spec = build_spec(ModelName::Linear);
        let dm = spec.design_matrix(&panel).unwrap();
        let plain = DesignMatrix::new(dm.names.clone(), dm.columns.clone(), dm.response.clone(), Vec::new(), dm.clusters.clone()).unwrap();
        let relabel = |f: &Factor| {
            let g = f.n_levels;
            Factor::from_codes(&f.name, f.codes.iter().map(|c| (c + rot) % g).collect())
        };
        let shuffled = DesignMatrix::new(
            dm.names.clone(),
            dm.columns.clone(),
            dm.response.clone(),
            Vec::new(),
            dm.clusters.iter().map(relabel).collect(),
        )
        .unwrap();
        let ls = ols_fit(&plain).unwrap();
        let k = plain.n_cols() + 1;
        for mode in [ClusterMode::OneWay, ClusterMode::TwoWay] {
            let a = cluster_robust_vcov(&plain, &ls.residuals, &ls.xtx_inv, mode, k).unwrap();
            let b = cluster_robust_vcov(&shuffled, &ls.residuals, &ls.xtx_inv, mode, k).unwrap();
            // Flooring negative eigenvalues amplifies summation-order rounding.
            let tol = if a.repaired { 1e-8 } else { 1e-12 };
            prop_assert!(rel_close(&a.matrix, &b.matrix, tol), "{:?} {:?} {:?}", mode, a, b);
            prop_assert_eq!(a.repaired, b.repaired);
        }
    }

    #[test]
    fn absorbed_fit_matches_dummy_regression(seed in 0u64..1000, model in 0usize..6) {
        let panel = small_panel(seed);
        let m = ModelName::ALL[model];
        if m == ModelName::Subsample1980_2020 { return Ok(()); }
        let c = compare_to_oracle(&panel, &build_spec(m), &EstimatorOptions::default()).unwrap();
        prop_assert!(c.coefficient_rel < 1e-8, "{} {}", m, c.coefficient_rel);
    }

    #[test]
    fn effects_vanish_at_reference(
        b1 in -2000.0f64..2000.0,
        b2 in -120.0f64..120.0,
        b3 in -100.0f64..100.0,
        reference in 3000.0f64..12000.0,
        m in 7.5f64..9.5,
    ) {
        prop_assert_eq!(long_term_effect(b1, b2, reference, reference).unwrap(), 0.0);
        prop_assert_eq!(short_term_effect(b1, b2, b3, reference, reference, m).unwrap(), 0.0);
        prop_assert_eq!(adaptation_gap(b3, reference, reference, m).unwrap(), 0.0);
        let names = ["ln_slr", "ln_slr_sq", "penalty"].map(String::from).to_vec();
        let vcov = vec![vec![4.0, -0.2, 0.1], vec![-0.2, 0.09, 0.0], vec![0.1, 0.0, 0.25]];
        let fit = FitResult::from_coefficients("adaptation", names, vec![b1, b2, b3], vcov).unwrap();
        let model = EffectModel::from_fit(&fit, reference, m).unwrap();
        prop_assert_eq!(model.long_term(reference).unwrap(), 0.0);
        prop_assert_eq!(model.short_term(reference).unwrap(), 0.0);
        prop_assert_eq!(model.long_term_sd(reference).unwrap(), 0.0);
        prop_assert_eq!(model.short_term_sd(reference).unwrap(), 0.0);
    }

    #[test]
    fn zero_rise_projects_to_zero(b1 in -2000.0f64..2000.0, b2 in -120.0f64..120.0, base in 2000.0f64..15000.0) {
        let path = ScenarioPath {
            scenario: ScenarioId::new(2, Rcp::Rcp45, IceCase::Medium).unwrap(),
            region_code: "DK01".into(),
            steps: (2025..=2100).step_by(5).map(|year| ScenarioStep { year, slr_mm_vs_base: 0.0, population: 1.0 }).collect(),
        };
        let p = project_region_with(b1, b2, &path, base).unwrap().projection;
        prop_assert!(p.path.iter().all(|(_, v)| *v == 0.0));
        prop_assert_eq!(p.terminal_2100, Some(0.0));
    }
}

