use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use crate::CliError;

/// Every run setting. Each may come from a flag or from the config file;
/// flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Key-value config file (`key = value`, `#` comments).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory of `<id>.rlrdata` annual files.
    #[arg(long, global = true)]
    pub rlr_dir: Option<PathBuf>,
    /// Station to NUTS2 mapping CSV.
    #[arg(long, global = true)]
    pub mapping: Option<PathBuf>,
    /// Regional GDP/population CSV.
    #[arg(long, global = true)]
    pub econ: Option<PathBuf>,
    /// Annual growth-rate extension CSV.
    #[arg(long, global = true)]
    pub extension: Option<PathBuf>,
    /// Scenario sea-level/population CSV.
    #[arg(long, global = true)]
    pub scenarios: Option<PathBuf>,
    /// Previously written panel CSV; replaces the raw inputs.
    #[arg(long, global = true)]
    pub panel: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated model names.
    #[arg(long, global = true)]
    pub models: Option<String>,
    /// `one_way` or `two_way` (default).
    #[arg(long, global = true)]
    pub cluster_mode: Option<String>,
    /// `point` or `decade_mean`.
    #[arg(long, global = true)]
    pub sampling: Option<String>,
    /// First year of the decadal panel grid.
    #[arg(long, global = true)]
    pub panel_start: Option<i32>,
    #[arg(long, global = true)]
    pub panel_end: Option<i32>,
    #[arg(long, global = true)]
    pub panel_step: Option<i32>,
    /// Effect grid, mm.
    #[arg(long, global = true)]
    pub grid_start: Option<f64>,
    #[arg(long, global = true)]
    pub grid_end: Option<f64>,
    #[arg(long, global = true)]
    pub grid_step: Option<f64>,
    /// Reference sea level, mm (default 7000).
    #[arg(long, global = true)]
    pub reference_mm: Option<f64>,
    /// Region mean log sea level for short-term effects.
    #[arg(long, global = true)]
    pub mean_ln_slr: Option<f64>,
    /// Rolling window length in grid points.
    #[arg(long, global = true)]
    pub window_points: Option<usize>,
    /// Coefficient tracked by `roll`.
    #[arg(long, global = true)]
    pub focus: Option<String>,
    /// Regions per ranking block.
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo replications for `validate`.
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Write the synthetic fixture corpus here.
    #[arg(long, global = true)]
    pub emit_fixtures: Option<PathBuf>,
    /// Injected coefficient, `model.name=value` or `model.se.name=value`.
    #[arg(long = "inject", global = true, value_name = "MODEL.NAME=VALUE")]
    pub inject: Vec<String>,
}

/// Effective settings after merging flags over the config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_kv(content: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let mut values = match &args.config {
            Some(p) => parse_kv(
                &fs::read_to_string(p).map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?,
            )?,
            None => BTreeMap::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("rlr_dir", path(&args.rlr_dir));
        set("mapping", path(&args.mapping));
        set("econ", path(&args.econ));
        set("extension", path(&args.extension));
        set("scenarios", path(&args.scenarios));
        set("panel", path(&args.panel));
        set("out", path(&args.out));
        set("emit_fixtures", path(&args.emit_fixtures));
        set("models", args.models.clone());
        set("cluster_mode", args.cluster_mode.clone());
        set("sampling", args.sampling.clone());
        set("focus", args.focus.clone());
        set("panel_start", args.panel_start.map(|v| v.to_string()));
        set("panel_end", args.panel_end.map(|v| v.to_string()));
        set("panel_step", args.panel_step.map(|v| v.to_string()));
        set("grid_start", args.grid_start.map(|v| v.to_string()));
        set("grid_end", args.grid_end.map(|v| v.to_string()));
        set("grid_step", args.grid_step.map(|v| v.to_string()));
        set("reference_mm", args.reference_mm.map(|v| v.to_string()));
        set("mean_ln_slr", args.mean_ln_slr.map(|v| v.to_string()));
        set("window_points", args.window_points.map(|v| v.to_string()));
        set("top_k", args.top_k.map(|v| v.to_string()));
        set("seed", args.seed.map(|v| v.to_string()));
        set("replications", args.replications.map(|v| v.to_string()));
        for kv in &args.inject {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--inject `{kv}`: expected MODEL.NAME=VALUE")))?;
            values.insert(format!("inject.{}", k.trim()), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::usage(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| CliError::usage(format!("`{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    /// A path setting that must exist when given.
    pub fn existing_path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(p) => {
                let path = PathBuf::from(p);
                if !path.exists() {
                    return Err(CliError::usage(format!("`{key}`: {} does not exist", path.display())));
                }
                Ok(Some(path))
            }
        }
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.existing_path(key)?
            .ok_or_else(|| CliError::usage(format!("`{key}` is required for this command")))
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let out = PathBuf::from(self.get("out").unwrap_or("out"));
        fs::create_dir_all(&out).map_err(|e| CliError::data(format!("output {}: {e}", out.display())))?;
        Ok(out)
    }

    pub fn models(&self, default: &str) -> Vec<String> {
        self.get("models")
            .unwrap_or(default)
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    /// Effect grid in mm; defaults to 6500..=9000 by 50.
    pub fn effect_grid(&self) -> Result<Vec<f64>, CliError> {
        let start: f64 = self.parsed("grid_start", 6500.0)?;
        let end: f64 = self.parsed("grid_end", 9000.0)?;
        let step: f64 = self.parsed("grid_step", 50.0)?;
        if !(start > 0.0 && end < 20000.0 && start <= end && step > 0.0) {
            return Err(CliError::usage(format!(
                "effect grid {start}..{end} step {step} must lie within (0, 20000) mm with a positive step"
            )));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| start + step * i as f64).collect())
    }

    /// Injected coefficients for `model`: `(names, estimates, std errors)` in
    /// key order.
    pub fn injected(&self, model: &str) -> Result<Option<Injected>, CliError> {
        let prefix = format!("inject.{model}.");
        let mut coefs = BTreeMap::new();
        let mut ses = BTreeMap::new();
        for (k, v) in self.values.range(prefix.clone()..) {
            let Some(rest) = k.strip_prefix(&prefix) else { break };
            let value: f64 = v
                .parse()
                .map_err(|_| CliError::usage(format!("`{k}`: cannot parse `{v}`")))?;
            match rest.strip_prefix("se.") {
                Some(name) => ses.insert(name.to_string(), value),
                None => coefs.insert(rest.to_string(), value),
            };
        }
        if coefs.is_empty() {
            return Ok(None);
        }
        if let Some(orphan) = ses.keys().find(|k| !coefs.contains_key(*k)) {
            return Err(CliError::usage(format!("standard error for `{model}.{orphan}` without a coefficient")));
        }
        Ok(Some(Injected { coefs, ses }))
    }
}

#[derive(Debug, Clone)]
pub struct Injected {
    pub coefs: BTreeMap<String, f64>,
    pub ses: BTreeMap<String, f64>,
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("slr-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("run.conf");
        fs::write(&p, "# comment\nwindow_points = 7\nmodels = linear\ninject.adaptation.ln_slr = 1\n").unwrap();
        let args = RunArgs {
            config: Some(p),
            window_points: Some(9),
            inject: vec!["adaptation.se.ln_slr=2".into()],
            ..Default::default()
        };
        let c = RunConfig::from_args(&args).unwrap();
        assert_eq!(c.parsed("window_points", 0usize).unwrap(), 9);
        assert_eq!(c.models("adaptation"), vec!["linear"]);
        let inj = c.injected("adaptation").unwrap().unwrap();
        assert_eq!(inj.coefs["ln_slr"], 1.0);
        assert_eq!(inj.ses["ln_slr"], 2.0);
        assert!(c.injected("dynamic").unwrap().is_none());
    }

    #[test]
    fn grid_bounds() {
        let c = RunConfig { values: BTreeMap::new() };
        let g = c.effect_grid().unwrap();
        assert_eq!((g.len(), g[0], g[50]), (51, 6500.0, 9000.0));
        let mut bad = BTreeMap::new();
        bad.insert("grid_end".to_string(), "25000".to_string());
        assert!(RunConfig { values: bad }.effect_grid().is_err());
    }
}
