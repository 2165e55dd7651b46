//! Economic effects implied by fitted coefficients.
//!
//! Effects are log-point changes in GDP per capita relative to a reference
//! sea level (7000 mm on the RLR datum, i.e. no rise). The long-term effect
//! drops the penalty term, the short-term effect keeps it, and the gap
//! between the two is the adaptation effect. Confidence bands use the delta
//! method on the coefficient covariance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitResult;

pub const REFERENCE_MM: f64 = 7000.0;
/// Largest rise between 1900 and 2020 observed in the historical sample.
pub const MAX_IN_SAMPLE_RISE_MM: f64 = 397.0;
pub const Z_95: f64 = 1.96;

fn check_level(s_mm: f64) -> Result<()> {
    if s_mm > 0.0 && s_mm.is_finite() {
        Ok(())
    } else {
        Err(Error::Data(format!("sea level {s_mm} mm is not positive")))
    }
}

/// `(ln s - ln ref, ln^2 s - ln^2 ref)`, exactly zero at `s == ref`.
fn log_terms(s_mm: f64, ref_mm: f64) -> Result<(f64, f64)> {
    check_level(s_mm)?;
    check_level(ref_mm)?;
    let (ls, lr) = (s_mm.ln(), ref_mm.ln());
    let d = ls - lr;
    Ok((d, d * (ls + lr)))
}

fn penalty_term(s_mm: f64, ref_mm: f64, mean_ln_slr: f64) -> Result<f64> {
    check_level(s_mm)?;
    check_level(ref_mm)?;
    if s_mm == ref_mm {
        return Ok(0.0);
    }
    let a = s_mm.ln() - mean_ln_slr;
    let b = ref_mm.ln() - mean_ln_slr;
    Ok(a * a - b * b)
}

/// `b1 (ln s - ln ref) + b2 (ln^2 s - ln^2 ref)`.
pub fn long_term_effect(b1: f64, b2: f64, s_mm: f64, ref_mm: f64) -> Result<f64> {
    let (d1, d2) = log_terms(s_mm, ref_mm)?;
    Ok(b1 * d1 + b2 * d2)
}

/// Long-term effect plus the penalty `b3 (ln s - m)^2`, taken relative to
/// its value at the reference.
pub fn short_term_effect(
    b1: f64,
    b2: f64,
    b3: f64,
    s_mm: f64,
    ref_mm: f64,
    mean_ln_slr: f64,
) -> Result<f64> {
    Ok(long_term_effect(b1, b2, s_mm, ref_mm)? + b3 * penalty_term(s_mm, ref_mm, mean_ln_slr)?)
}

/// Short-term minus long-term effect.
pub fn adaptation_gap(b3: f64, s_mm: f64, ref_mm: f64, mean_ln_slr: f64) -> Result<f64> {
    Ok(b3 * penalty_term(s_mm, ref_mm, mean_ln_slr)?)
}

/// Cumulative log-point effect spread evenly over `years`.
pub fn annualized_growth_impact(cumulative_effect: f64, years: f64) -> Result<f64> {
    if years > 0.0 {
        Ok(cumulative_effect / years)
    } else {
        Err(Error::Data(format!("horizon of {years} years is not positive")))
    }
}

/// `100 x` rounded to one decimal, with negative zero folded to zero.
pub fn round_pct(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0 + 0.0
}

/// Coefficients and covariance of `(ln_slr, ln_slr_sq, penalty)` together
/// with the evaluation point of the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectModel {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub vcov: [[f64; 3]; 3],
    pub reference_mm: f64,
    pub mean_ln_slr: f64,
    pub z: f64,
}

impl EffectModel {
    pub fn from_fit(fit: &FitResult, reference_mm: f64, mean_ln_slr: f64) -> Result<Self> {
        check_level(reference_mm)?;
        let names = ["ln_slr", "ln_slr_sq", "penalty"];
        let mut b = [0.0; 3];
        for (slot, name) in b.iter_mut().zip(names) {
            *slot = fit.require(name)?;
        }
        let mut vcov = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                vcov[i][j] = fit.covariance(names[i], names[j]).unwrap_or(0.0);
            }
        }
        Ok(Self {
            b1: b[0],
            b2: b[1],
            b3: b[2],
            vcov,
            reference_mm,
            mean_ln_slr,
            z: Z_95,
        })
    }

    fn quad(&self, g: [f64; 3]) -> f64 {
        let mut v = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                v += g[i] * self.vcov[i][j] * g[j];
            }
        }
        v.max(0.0)
    }

    pub fn long_term(&self, s_mm: f64) -> Result<f64> {
        long_term_effect(self.b1, self.b2, s_mm, self.reference_mm)
    }

    pub fn short_term(&self, s_mm: f64) -> Result<f64> {
        short_term_effect(self.b1, self.b2, self.b3, s_mm, self.reference_mm, self.mean_ln_slr)
    }

    /// Delta-method standard deviation of the long-term effect.
    pub fn long_term_sd(&self, s_mm: f64) -> Result<f64> {
        let (d1, d2) = log_terms(s_mm, self.reference_mm)?;
        Ok(self.quad([d1, d2, 0.0]).sqrt())
    }

    pub fn short_term_sd(&self, s_mm: f64) -> Result<f64> {
        let (d1, d2) = log_terms(s_mm, self.reference_mm)?;
        let d3 = penalty_term(s_mm, self.reference_mm, self.mean_ln_slr)?;
        Ok(self.quad([d1, d2, d3]).sqrt())
    }

    pub fn long_term_upper(&self, s_mm: f64) -> Result<f64> {
        Ok(self.long_term(s_mm)? + self.z * self.long_term_sd(s_mm)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    pub grid: Vec<f64>,
    pub lt_effect: Vec<f64>,
    pub st_effect: Vec<f64>,
    pub lt_ci_low: Vec<f64>,
    pub lt_ci_high: Vec<f64>,
    pub st_ci_low: Vec<f64>,
    pub st_ci_high: Vec<f64>,
    /// Grid points beyond the largest in-sample rise.
    pub extrapolated: Vec<bool>,
    pub reference_mm: f64,
    pub extrapolation_boundary_mm: f64,
    pub model: EffectModel,
}

pub fn effect_curve(
    fit: &FitResult,
    grid: &[f64],
    reference_mm: f64,
    mean_ln_slr: f64,
) -> Result<EffectCurve> {
    effect_curve_from_model(&EffectModel::from_fit(fit, reference_mm, mean_ln_slr)?, grid)
}

pub fn effect_curve_from_model(model: &EffectModel, grid: &[f64]) -> Result<EffectCurve> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Data("effect grid must be strictly increasing".into()));
    }
    let boundary = model.reference_mm + MAX_IN_SAMPLE_RISE_MM;
    let mut c = EffectCurve {
        grid: grid.to_vec(),
        lt_effect: Vec::with_capacity(grid.len()),
        st_effect: Vec::with_capacity(grid.len()),
        lt_ci_low: Vec::with_capacity(grid.len()),
        lt_ci_high: Vec::with_capacity(grid.len()),
        st_ci_low: Vec::with_capacity(grid.len()),
        st_ci_high: Vec::with_capacity(grid.len()),
        extrapolated: Vec::with_capacity(grid.len()),
        reference_mm: model.reference_mm,
        extrapolation_boundary_mm: boundary,
        model: *model,
    };
    for &s in grid {
        let (lt, st) = (model.long_term(s)?, model.short_term(s)?);
        let (lt_sd, st_sd) = (model.long_term_sd(s)?, model.short_term_sd(s)?);
        c.lt_effect.push(lt);
        c.st_effect.push(st);
        c.lt_ci_low.push(lt - model.z * lt_sd);
        c.lt_ci_high.push(lt + model.z * lt_sd);
        c.st_ci_low.push(st - model.z * st_sd);
        c.st_ci_high.push(st + model.z * st_sd);
        c.extrapolated.push(s > boundary);
    }
    Ok(c)
}

impl EffectCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "sea_level_mm",
            "lt_effect",
            "lt_ci_low",
            "lt_ci_high",
            "st_effect",
            "st_ci_low",
            "st_ci_high",
            "adaptation_gap",
            "lt_pct",
            "st_pct",
            "lt_exp_pct",
            "st_exp_pct",
            "extrapolated",
        ])?;
        for i in 0..self.grid.len() {
            let (lt, st) = (self.lt_effect[i], self.st_effect[i]);
            w.write_record([
                self.grid[i].to_string(),
                lt.to_string(),
                self.lt_ci_low[i].to_string(),
                self.lt_ci_high[i].to_string(),
                st.to_string(),
                self.st_ci_low[i].to_string(),
                self.st_ci_high[i].to_string(),
                (st - lt).to_string(),
                format!("{:.1}", round_pct(lt)),
                format!("{:.1}", round_pct(st)),
                format!("{:.1}", round_pct(lt.exp_m1())),
                format!("{:.1}", round_pct(st.exp_m1())),
                self.extrapolated[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Threshold {
    Found { sea_level_mm: f64 },
    NoneFound,
}

const THRESHOLD_RESOLUTION_MM: f64 = 1e-3;

/// Smallest sea level above the reference at which the upper 95% band of the
/// long-term effect is below zero. The first significant grid point is
/// bracketed with its predecessor (or the reference, where the band is
/// exactly zero) and the crossing refined by bisection.
pub fn significance_threshold(curve: &EffectCurve) -> Threshold {
    let model = &curve.model;
    let upper = |s: f64| model.long_term_upper(s).unwrap_or(f64::NAN);
    let above: Vec<usize> = (0..curve.grid.len())
        .filter(|&i| curve.grid[i] > curve.reference_mm)
        .collect();
    let Some(pos) = above.iter().position(|&i| curve.lt_ci_high[i] < 0.0) else {
        return Threshold::NoneFound;
    };
    let mut hi = curve.grid[above[pos]];
    let mut lo = if pos > 0 {
        curve.grid[above[pos - 1]]
    } else {
        curve.reference_mm
    };
    while hi - lo > THRESHOLD_RESOLUTION_MM {
        let mid = 0.5 * (lo + hi);
        if upper(mid) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Threshold::Found { sea_level_mm: hi }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicEffects {
    /// Contemporaneous coefficients `(beta + gamma)`.
    pub immediate: f64,
    /// After one lag: current plus lag coefficients, i.e. `gamma`.
    pub lagged: f64,
}

pub fn dynamic_effects(fit: &FitResult, s_mm: f64, ref_mm: f64) -> Result<DynamicEffects> {
    if fit.coef("ln_slr_lag").is_none() || fit.coef("ln_slr_lag_sq").is_none() {
        return Err(Error::Data(format!(
            "dynamic effects need the dynamic specification, got `{}`",
            fit.spec_name
        )));
    }
    let c1 = fit.require("ln_slr")?;
    let c2 = fit.require("ln_slr_sq")?;
    let l1 = fit.require("ln_slr_lag")?;
    let l2 = fit.require("ln_slr_lag_sq")?;
    Ok(DynamicEffects {
        immediate: long_term_effect(c1, c2, s_mm, ref_mm)?,
        lagged: long_term_effect(c1 + l1, c2 + l2, s_mm, ref_mm)?,
    })
}

pub const TABLE_LEVELS_MM: [f64; 6] = [6500.0, 7000.0, 7500.0, 8000.0, 8500.0, 9000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimateRow {
    pub sea_level_mm: f64,
    pub immediate: f64,
    pub lagged: f64,
    pub short_term: f64,
    pub long_term: f64,
}

impl PointEstimateRow {
    /// `[immediate, lagged, short-term, long-term]` in percent, one decimal.
    pub fn rounded_pct(&self) -> [f64; 4] {
        [
            round_pct(self.immediate),
            round_pct(self.lagged),
            round_pct(self.short_term),
            round_pct(self.long_term),
        ]
    }
}

pub fn point_estimate_table(
    adaptation: &FitResult,
    dynamic: &FitResult,
    levels: &[f64],
    reference_mm: f64,
    mean_ln_slr: f64,
) -> Result<Vec<PointEstimateRow>> {
    let model = EffectModel::from_fit(adaptation, reference_mm, mean_ln_slr)?;
    levels
        .iter()
        .map(|&s| {
            let d = dynamic_effects(dynamic, s, reference_mm)?;
            Ok(PointEstimateRow {
                sea_level_mm: s,
                immediate: d.immediate,
                lagged: d.lagged,
                short_term: model.short_term(s)?,
                long_term: model.long_term(s)?,
            })
        })
        .collect()
}

pub fn write_point_estimate_csv<W: Write>(rows: &[PointEstimateRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "sea_level_mm",
        "immediate_pct",
        "lagged_pct",
        "short_term_pct",
        "long_term_pct",
        "immediate_exp_pct",
        "lagged_exp_pct",
        "short_term_exp_pct",
        "long_term_exp_pct",
    ])?;
    for r in rows {
        let log = r.rounded_pct();
        let exp = [r.immediate, r.lagged, r.short_term, r.long_term].map(|x| round_pct(x.exp_m1()));
        let mut rec = vec![format!("{}", r.sea_level_mm)];
        rec.extend(log.iter().chain(exp.iter()).map(|v| format!("{v:.1}")));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
