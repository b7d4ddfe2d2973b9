//! Flat `key = value` model configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Per-covariate settings
//! (`d`, `degree`, `q`, `mode`, `domain`) take either one value for every
//! covariate or a comma-separated list. `p` takes one value, or one
//! comma-separated row per covariate separated by `;`.

use std::collections::BTreeMap;
use std::path::Path;

use adapspline::basis::BasisSpec;
use adapspline::penalty::{AdaptivePenaltySpec, AdaptivityMode};
use adapspline::sop::{Family, FitControl};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const KEYS: &[&str] = &[
    "family",
    "input",
    "response",
    "covariates",
    "offset",
    "weights",
    "count",
    "trials",
    "d",
    "degree",
    "q",
    "mode",
    "p",
    "psi_degree",
    "domain",
    "level",
    "max_outer_iter",
    "max_pirls_iter",
    "rel_tol",
    "variance_floor",
    "initial_variance",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// One row per observation.
    Scattered,
    /// One row per grid cell with `count` and `trials` columns.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimConfig {
    pub column: String,
    pub d: usize,
    pub degree: usize,
    pub q: usize,
    pub mode: String,
    pub p: Vec<usize>,
    /// Basis domain; taken from the data when absent.
    pub domain: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub input: InputKind,
    pub response: String,
    pub offset: Option<String>,
    pub weights: Option<String>,
    pub count: String,
    pub trials: String,
    pub dims: Vec<DimConfig>,
    pub psi_degree: usize,
    pub level: f64,
    pub control: FitControl,
}

/// Raw key/value pairs; later inserts win.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Input(format!("config line {}: expected key = value", i + 1))
            })?;
            raw.set(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(CliError::Input(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply `--key value` / `--key=value` overrides.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let key = a
                .strip_prefix("--")
                .ok_or_else(|| CliError::Input(format!("unexpected argument '{a}'")))?;
            match key.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Input(format!("flag --{key} needs a value")))?;
                    self.set(key, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Input(format!("config key '{key}': cannot parse '{v}'"))),
        }
    }

    fn per_dim<T: std::str::FromStr + Clone>(
        &self,
        key: &str,
        k: usize,
        default: Option<T>,
    ) -> Result<Vec<T>, CliError> {
        let Some(v) = self.get(key) else {
            return default
                .map(|d| vec![d; k])
                .ok_or_else(|| CliError::Input(format!("config key '{key}' is required")));
        };
        let items = v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Input(format!("config key '{key}': cannot parse '{s}'")))
            })
            .collect::<Result<Vec<T>, _>>()?;
        match items.len() {
            1 => Ok(vec![items[0].clone(); k]),
            n if n == k => Ok(items),
            n => Err(CliError::Input(format!(
                "config key '{key}' has {n} entries for {k} covariates"
            ))),
        }
    }

    pub fn resolve(&self) -> Result<ModelConfig, CliError> {
        let family: Family = self
            .parsed::<String>("family", "gaussian".into())?
            .parse()
            .map_err(|e: adapspline::Error| CliError::Input(e.to_string()))?;
        let input = match self.get("input").unwrap_or("scattered") {
            "scattered" => InputKind::Scattered,
            "grid" => InputKind::Grid,
            other => return Err(CliError::Input(format!("input must be scattered or grid, got '{other}'"))),
        };
        let covariates: Vec<String> = self
            .get("covariates")
            .ok_or_else(|| CliError::Input("config key 'covariates' is required".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let k = covariates.len();
        if !(1..=3).contains(&k) {
            return Err(CliError::Input(format!("1 to 3 covariates supported, got {k}")));
        }
        let d = self.per_dim::<usize>("d", k, Some(12))?;
        let degree = self.per_dim::<usize>("degree", k, Some(3))?;
        let q = self.per_dim::<usize>("q", k, Some(2))?;
        let mode = self.per_dim::<String>("mode", k, Some("none".into()))?;
        for m in &mode {
            m.parse::<AdaptivityMode>()
                .map_err(|e| CliError::Input(e.to_string()))?;
        }
        let p = self.p_matrix(k)?;
        let domain = match self.get("domain") {
            None => vec![None; k],
            Some(_) => self
                .per_dim::<String>("domain", k, None)?
                .iter()
                .map(|s| {
                    let (a, b) = s
                        .split_once(':')
                        .ok_or_else(|| CliError::Input(format!("domain entry '{s}' must be min:max")))?;
                    let lo: f64 = a.trim().parse().map_err(|_| CliError::Input(format!("bad domain '{s}'")))?;
                    let hi: f64 = b.trim().parse().map_err(|_| CliError::Input(format!("bad domain '{s}'")))?;
                    Ok(Some((lo, hi)))
                })
                .collect::<Result<Vec<_>, CliError>>()?,
        };
        let dims = (0..k)
            .map(|m| DimConfig {
                column: covariates[m].clone(),
                d: d[m],
                degree: degree[m],
                q: q[m],
                mode: mode[m].clone(),
                p: p[m].clone(),
                domain: domain[m],
            })
            .collect();
        let defaults = FitControl::default();
        let control = FitControl {
            max_outer_iter: self.parsed("max_outer_iter", defaults.max_outer_iter)?,
            max_pirls_iter: self.parsed("max_pirls_iter", defaults.max_pirls_iter)?,
            rel_tol: self.parsed("rel_tol", defaults.rel_tol)?,
            variance_floor: self.parsed("variance_floor", defaults.variance_floor)?,
            initial_variance: self.parsed("initial_variance", defaults.initial_variance)?,
        };
        control.validate().map_err(|e| CliError::Input(e.to_string()))?;
        let level: f64 = self.parsed("level", 0.95)?;
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Input(format!("level must lie in (0, 1), got {level}")));
        }
        Ok(ModelConfig {
            family,
            input,
            response: self.get("response").unwrap_or("y").to_string(),
            offset: self.get("offset").map(str::to_string),
            weights: self.get("weights").map(str::to_string),
            count: self.get("count").unwrap_or("count").to_string(),
            trials: self.get("trials").unwrap_or("trials").to_string(),
            dims,
            psi_degree: self.parsed("psi_degree", 3)?,
            level,
            control,
        })
    }

    fn p_matrix(&self, k: usize) -> Result<Vec<Vec<usize>>, CliError> {
        let Some(v) = self.get("p") else {
            return Ok(vec![vec![5; k]; k]);
        };
        let rows: Vec<&str> = v.split(';').collect();
        let parse_row = |r: &str| {
            r.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::Input(format!("config key 'p': cannot parse '{s}'")))
                })
                .collect::<Result<Vec<_>, _>>()
        };
        if rows.len() == 1 {
            let r = parse_row(rows[0])?;
            return match r.len() {
                1 => Ok(vec![vec![r[0]; k]; k]),
                n if n == k => Ok(vec![r; k]),
                n => Err(CliError::Input(format!("config key 'p' has {n} entries for {k} covariates"))),
            };
        }
        if rows.len() != k {
            return Err(CliError::Input(format!("config key 'p' has {} rows for {k} covariates", rows.len())));
        }
        rows.into_iter()
            .map(|r| {
                let r = parse_row(r)?;
                if r.len() != k {
                    return Err(CliError::Input(format!("each row of 'p' needs {k} entries")));
                }
                Ok(r)
            })
            .collect()
    }
}

impl ModelConfig {
    pub fn covariate_names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.column.as_str()).collect()
    }

    /// Penalty specification over the given covariate box.
    pub fn penalty_spec(&self, domain: &[(f64, f64)]) -> Result<AdaptivePenaltySpec, CliError> {
        let dims = self
            .dims
            .iter()
            .zip(domain)
            .map(|(dc, &(lo, hi))| BasisSpec::new(lo, hi, dc.d, dc.degree, dc.q))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(e.to_string()))?;
        let modes = self
            .dims
            .iter()
            .map(|dc| dc.mode.parse::<AdaptivityMode>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(e.to_string()))?;
        let spec = AdaptivePenaltySpec {
            dims,
            modes,
            p: self.dims.iter().map(|dc| dc.p.clone()).collect(),
            psi_degree: self.psi_degree,
        };
        spec.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(spec)
    }

    /// Configured domain where given, otherwise `fallback` (or `[0, 1]`).
    pub fn domain_or(&self, fallback: Option<&[(f64, f64)]>) -> Vec<(f64, f64)> {
        self.dims
            .iter()
            .enumerate()
            .map(|(m, dc)| dc.domain.or(fallback.map(|f| f[m])).unwrap_or((0.0, 1.0)))
            .collect()
    }
}
