use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EstimatorOptions, FitResult};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::specs::{fit_panel_with, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingOptions {
    /// Window length in grid points.
    pub window_points: usize,
    /// Advance between windows in grid points.
    pub step: usize,
    /// Coefficient whose significance is tracked.
    pub focus: String,
    pub level: f64,
}

impl Default for RollingOptions {
    fn default() -> Self {
        Self {
            window_points: 6,
            step: 1,
            focus: "ln_slr".into(),
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingWindow {
    pub start_year: i32,
    pub end_year: i32,
    pub fit: FitResult,
    pub focus_estimate: f64,
    pub focus_ci: (f64, f64),
    /// The focus interval excludes zero.
    pub significant: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RollingResult {
    pub windows: Vec<RollingWindow>,
    pub diagnostics: Vec<String>,
}

impl RollingResult {
    pub fn first_significant_end_year(&self) -> Option<i32> {
        self.windows.iter().find(|w| w.significant).map(|w| w.end_year)
    }

    pub fn persistent_significance_end_year(&self) -> Option<i32> {
        first_persistent_significance(&self.windows)
    }
}

/// End year of the earliest window from which every later window is
/// significant.
pub fn first_persistent_significance(windows: &[RollingWindow]) -> Option<i32> {
    let tail = windows.iter().rev().take_while(|w| w.significant).count();
    (tail > 0).then(|| windows[windows.len() - tail].end_year)
}

/// Refits `spec` on consecutive windows of the panel's year grid.
pub fn rolling_fit(
    spec: &ModelSpec,
    panel: &PanelDataset,
    options: &RollingOptions,
    estimator: &EstimatorOptions,
) -> Result<RollingResult> {
    let k = spec.regressors.len();
    if options.window_points < k + 2 {
        return Err(Error::Data(format!(
            "window of {} grid points is shorter than {} (regressors + 2)",
            options.window_points,
            k + 2
        )));
    }
    if options.step == 0 {
        return Err(Error::Data("rolling step must be at least 1".into()));
    }
    let grid = &panel.decade_grid;
    if options.window_points > grid.len() {
        return Ok(RollingResult {
            windows: Vec::new(),
            diagnostics: vec![format!(
                "window of {} grid points exceeds the panel's {} grid points",
                options.window_points,
                grid.len()
            )],
        });
    }
    let starts: Vec<usize> = (0..=grid.len() - options.window_points)
        .step_by(options.step)
        .collect();
    let outcomes: Vec<std::result::Result<RollingWindow, String>> = starts
        .par_iter()
        .map(|&s| {
            let (lo, hi) = (grid[s], grid[s + options.window_points - 1]);
            let sub = panel.filter_years(lo, hi).map_err(|e| format!("{lo}-{hi}: {e}"))?;
            let fit = fit_panel_with(spec, &sub, estimator).map_err(|e| format!("{lo}-{hi}: {e}"))?;
            let (ci_lo, ci_hi) = fit
                .confidence_interval(&options.focus, options.level)
                .ok_or_else(|| format!("{lo}-{hi}: focus `{}` not estimated", options.focus))?;
            Ok(RollingWindow {
                start_year: lo,
                end_year: hi,
                focus_estimate: fit.coef(&options.focus).unwrap_or(f64::NAN),
                focus_ci: (ci_lo, ci_hi),
                significant: ci_lo > 0.0 || ci_hi < 0.0,
                fit,
            })
        })
        .collect();
    let mut result = RollingResult::default();
    for o in outcomes {
        match o {
            Ok(w) => result.windows.push(w),
            Err(msg) => result.diagnostics.push(format!("window skipped: {msg}")),
        }
    }
    Ok(result)
}
