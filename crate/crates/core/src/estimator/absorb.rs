use serde::{Deserialize, Serialize};

use super::{DesignMatrix, Factor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorbOptions {
    /// Stop once a full sweep moves no value by more than this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for AbsorbOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionReport {
    pub iterations: usize,
    pub final_change: f64,
    /// Regressors with (numerically) no variation left after absorption.
    pub absorbed_columns: Vec<String>,
    /// Rank of the fixed-effect indicator space.
    pub fe_parameters: usize,
}

/// Rank of the indicator space spanned by `groups`. Two factors lose one
/// dimension per connected component of their bipartite level graph; beyond
/// two, one per extra factor is assumed.
pub fn fe_parameter_count(groups: &[Factor]) -> usize {
    match groups {
        [] => 0,
        [a] => a.n_levels,
        [a, b] => {
            let mut parent: Vec<usize> = (0..a.n_levels + b.n_levels).collect();
            fn root(p: &mut [usize], mut i: usize) -> usize {
                while p[i] != i {
                    p[i] = p[p[i]];
                    i = p[i];
                }
                i
            }
            for (&x, &y) in a.codes.iter().zip(&b.codes) {
                let (rx, ry) = (root(&mut parent, x), root(&mut parent, a.n_levels + y));
                if rx != ry {
                    parent[rx] = ry;
                }
            }
            let components = (0..parent.len()).filter(|&i| root(&mut parent, i) == i).count();
            a.n_levels + b.n_levels - components
        }
        many => many.iter().map(|f| f.n_levels).sum::<usize>() - (many.len() - 1),
    }
}

/// Subtracts group means of `factor` from `values`, returning the largest
/// absolute adjustment.
fn demean_once(values: &mut [f64], factor: &Factor, counts: &[usize], sums: &mut [f64]) -> f64 {
    sums.iter_mut().for_each(|s| *s = 0.0);
    for (v, &g) in values.iter().zip(&factor.codes) {
        sums[g] += v;
    }
    for (s, &c) in sums.iter_mut().zip(counts) {
        *s /= c as f64;
    }
    let mut change = 0.0f64;
    for (v, &g) in values.iter_mut().zip(&factor.codes) {
        *v -= sums[g];
        change = change.max(sums[g].abs());
    }
    change
}

/// Projects every regressor and the response onto the orthogonal complement
/// of the fixed-effect indicator space.
///
/// One factor is a single exact pass. With several factors the within-group
/// demeaning alternates over factors until a sweep changes no value by more
/// than `tolerance`. Columns whose norm falls below `1e-8 * n` are reported as
/// absorbed and removed from the returned design.
pub fn absorb_fixed_effects(
    dm: &DesignMatrix,
    options: &AbsorbOptions,
) -> Result<(DesignMatrix, AbsorptionReport)> {
    if dm.fe_groups.is_empty() {
        return Err(Error::Data("absorption needs at least one fixed-effect group".into()));
    }
    let mut columns: Vec<Vec<f64>> = dm.columns.clone();
    columns.push(dm.response.clone());
    let counts: Vec<Vec<usize>> = dm.fe_groups.iter().map(Factor::counts).collect();
    let mut sums: Vec<Vec<f64>> = dm.fe_groups.iter().map(|f| vec![0.0; f.n_levels]).collect();

    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    if dm.fe_groups.len() == 1 {
        let mut change = 0.0f64;
        for col in &mut columns {
            change = change.max(demean_once(col, &dm.fe_groups[0], &counts[0], &mut sums[0]));
        }
        iterations = 1;
        last_change = change;
    } else {
        // Columns converge at different rates; stop sweeping each once settled.
        let mut done = vec![false; columns.len()];
        while iterations < options.max_iterations {
            iterations += 1;
            let mut sweep_change = 0.0f64;
            for (col, finished) in columns.iter_mut().zip(done.iter_mut()) {
                if *finished {
                    continue;
                }
                let mut change = 0.0f64;
                for (g, factor) in dm.fe_groups.iter().enumerate() {
                    change = change.max(demean_once(col, factor, &counts[g], &mut sums[g]));
                }
                if change < options.tolerance && iterations > 1 {
                    *finished = true;
                }
                sweep_change = sweep_change.max(change);
            }
            last_change = sweep_change;
            if done.iter().all(|&d| d) || sweep_change < options.tolerance {
                break;
            }
        }
        if last_change >= options.tolerance {
            return Err(Error::NoConvergence {
                iterations,
                last_change,
            });
        }
    }

    let response = columns.pop().expect("response column");
    let n = dm.n_rows();
    let mut names = Vec::new();
    let mut kept = Vec::new();
    let mut absorbed = Vec::new();
    for (name, col) in dm.names.iter().zip(columns) {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-8 * n as f64 {
            absorbed.push(name.clone());
        } else {
            names.push(name.clone());
            kept.push(col);
        }
    }
    let out = DesignMatrix {
        names,
        columns: kept,
        response,
        fe_groups: dm.fe_groups.clone(),
        clusters: dm.clusters.clone(),
    };
    Ok((
        out,
        AbsorptionReport {
            iterations,
            final_change: last_change,
            absorbed_columns: absorbed,
            fe_parameters: fe_parameter_count(&dm.fe_groups),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fe_rank_counts_components() {
        let a = Factor::from_codes("a", vec![0, 0, 1, 1, 2, 2]);
        let b = Factor::from_codes("b", vec![0, 1, 0, 1, 2, 2]);
        // levels {a0,a1,b0,b1} connected, {a2,b2} separate
        assert_eq!(fe_parameter_count(&[a.clone(), b]), 3 + 3 - 2);
        assert_eq!(fe_parameter_count(&[a]), 3);
        assert_eq!(fe_parameter_count(&[]), 0);
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn group_means(values: &[f64], f: &Factor) -> Vec<f64> {
        let mut s = vec![0.0; f.n_levels];
        for (v, &g) in values.iter().zip(&f.codes) {
            s[g] += v;
        }
        s.iter().zip(f.counts()).map(|(s, c)| s / c as f64).collect()
    }

    #[test]
    fn single_group_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<String> = (0..50).map(|i| format!("g{}", i % 7)).collect();
        let f = Factor::from_labels("g", &labels);
        let x: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 10.0).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let dm = DesignMatrix::new(vec!["x".into()], vec![x], y, vec![f.clone()], vec![]).unwrap();
        let (out, rep) = absorb_fixed_effects(&dm, &AbsorbOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        for m in group_means(&out.columns[0], &f).into_iter().chain(group_means(&out.response, &f)) {
            assert!(m.abs() < 1e-14, "{m}");
        }
    }

    #[test]
    fn nested_groups_converge_in_two_sweeps() {
        // country_year nested inside year
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 120;
        let year: Vec<String> = (0..n).map(|i| format!("{}", i % 6)).collect();
        let cy: Vec<String> = (0..n).map(|i| format!("{}_{}", i % 6, (i / 6) % 3)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let dm = DesignMatrix::new(
            vec!["x".into()],
            vec![x.clone()],
            x,
            vec![Factor::from_labels("year", &year), Factor::from_labels("cy", &cy)],
            vec![],
        )
        .unwrap();
        let (_, rep) = absorb_fixed_effects(&dm, &AbsorbOptions::default()).unwrap();
        assert!(rep.iterations <= 2, "{}", rep.iterations);
    }

    #[test]
    fn constant_within_group_column_is_absorbed() {
        let labels = ["a", "a", "b", "b", "c", "c"];
        let f = Factor::from_labels("g", &labels);
        let dm = DesignMatrix::new(
            vec!["level".into(), "x".into()],
            vec![vec![1.0, 1.0, 2.0, 2.0, 5.0, 5.0], vec![1.0, 2.0, 3.0, 5.0, 8.0, 13.0]],
            vec![0.0; 6],
            vec![f],
            vec![],
        )
        .unwrap();
        let (out, rep) = absorb_fixed_effects(&dm, &AbsorbOptions::default()).unwrap();
        assert_eq!(rep.absorbed_columns, vec!["level".to_string()]);
        assert_eq!(out.names, vec!["x".to_string()]);
    }

    #[test]
    fn non_convergence_reports_last_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let a: Vec<String> = (0..n).map(|_| format!("{}", rng.random_range(0..20))).collect();
        let b: Vec<String> = (0..n).map(|_| format!("{}", rng.random_range(0..20))).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let dm = DesignMatrix::new(
            vec!["x".into()],
            vec![x.clone()],
            x,
            vec![Factor::from_labels("a", &a), Factor::from_labels("b", &b)],
            vec![],
        )
        .unwrap();
        let opts = AbsorbOptions {
            tolerance: 1e-14,
            max_iterations: 2,
        };
        match absorb_fixed_effects(&dm, &opts) {
            Err(Error::NoConvergence { iterations, last_change }) => {
                assert_eq!(iterations, 2);
                assert!(last_change > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn requires_a_group() {
        let dm = DesignMatrix::new(vec![], vec![], vec![1.0], vec![], vec![]).unwrap();
        assert!(absorb_fixed_effects(&dm, &AbsorbOptions::default()).is_err());
    }
}
