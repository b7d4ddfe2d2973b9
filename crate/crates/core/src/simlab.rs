//! Simulation scenarios and replicate studies comparing the standard and
//! the fully adaptive penalty.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::model::Smoother;
use crate::penalty::{AdaptivePenaltySpec, AdaptivityMode};
use crate::sop::{Family, FitControl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    I,
    II,
    III,
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ScenarioId::I),
            "II" | "2" => Ok(ScenarioId::II),
            "III" | "3" => Ok(ScenarioId::III),
            other => Err(Error::InvalidScenario(format!("unknown scenario '{other}'"))),
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
            ScenarioId::III => "III",
        })
    }
}

impl ScenarioId {
    /// Covariate box `[(x1_min, x1_max), (x2_min, x2_max)]`.
    pub fn domain(self) -> [(f64, f64); 2] {
        match self {
            ScenarioId::I | ScenarioId::III => [(0.0, 1.0), (0.0, 1.0)],
            ScenarioId::II => [(-5.0, 1.5), (-50.0, 150.0)],
        }
    }
}

pub fn true_surface(id: ScenarioId, x1: f64, x2: f64) -> f64 {
    match id {
        ScenarioId::I | ScenarioId::II => {
            let a = x1 / 2.2 - 0.2;
            let b = x2 / 50.0;
            (-15.0 * (a * a + b * b)).exp()
        }
        ScenarioId::III => {
            let c = x1 - 0.6;
            1.9 * (1.45 + x1.exp() * (13.0 * c * c).sin()) * (-x2).exp() * (7.0 * x2).sin()
        }
    }
}

/// Success probability for binary responses. Scenario II rescales the
/// surface to `6η − 3` first.
pub fn bernoulli_probability(id: ScenarioId, eta: f64) -> f64 {
    let t = match id {
        ScenarioId::II => 6.0 * eta - 3.0,
        _ => eta,
    };
    1.0 / (1.0 + (-t).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub n: usize,
    pub family: Family,
    /// Noise standard deviation for Gaussian responses; ignored for Scenario
    /// I, where it is derived from the realised surface.
    pub s: Option<f64>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidScenario("at least two observations are needed".into()));
        }
        match (self.id, self.family) {
            (_, Family::Poisson) => Err(Error::InvalidScenario(
                "scenarios are Gaussian or Bernoulli".into(),
            )),
            (ScenarioId::I, Family::Bernoulli) => Err(Error::InvalidScenario(
                "scenario I is Gaussian only".into(),
            )),
            (ScenarioId::II | ScenarioId::III, Family::Gaussian) => match self.s {
                Some(s) if s > 0.0 && s.is_finite() => Ok(()),
                _ => Err(Error::InvalidScenario(format!(
                    "scenario {} needs a positive noise level",
                    self.id
                ))),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y: Vec<f64>,
    /// True linear predictor.
    pub eta: Vec<f64>,
    /// Comparison target: `η` for Gaussian, the probability for Bernoulli.
    pub truth: Vec<f64>,
    /// Noise standard deviation actually used (Gaussian).
    pub s: Option<f64>,
}

/// Generate one dataset. The stream is ChaCha20 seeded with `sc.seed`:
/// all `x1`, then all `x2`, then the noise or uniform draws.
pub fn gen_dataset(sc: &Scenario) -> Result<Dataset> {
    sc.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(sc.seed);
    let [(a1, b1), (a2, b2)] = sc.id.domain();
    let x1: Vec<f64> = (0..sc.n).map(|_| rng.random_range(a1..b1)).collect();
    let x2: Vec<f64> = (0..sc.n).map(|_| rng.random_range(a2..b2)).collect();
    let eta: Vec<f64> = x1
        .iter()
        .zip(&x2)
        .map(|(&u, &v)| true_surface(sc.id, u, v))
        .collect();
    match sc.family {
        Family::Gaussian => {
            let s = match sc.id {
                ScenarioId::I => {
                    let (lo, hi) = eta
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                    (lo - hi).abs() / 4.0
                }
                _ => sc.s.expect("validated"),
            };
            let normal = Normal::new(0.0, s).map_err(|e| Error::InvalidScenario(e.to_string()))?;
            let y = eta.iter().map(|&e| e + normal.sample(&mut rng)).collect();
            Ok(Dataset {
                x1,
                x2,
                y,
                truth: eta.clone(),
                eta,
                s: Some(s),
            })
        }
        _ => {
            let truth: Vec<f64> = eta.iter().map(|&e| bernoulli_probability(sc.id, e)).collect();
            let y = truth
                .iter()
                .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                .collect();
            Ok(Dataset {
                x1,
                x2,
                y,
                eta,
                truth,
                s: None,
            })
        }
    }
}

/// Mean squared error of `fitted` against `truth`.
pub fn mse(fitted: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(fitted.len(), truth.len(), "mse inputs differ in length");
    fitted
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / fitted.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Standard,
    AdaptiveFull,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "standard" => Ok(Method::Standard),
            "adaptive-full" | "adaptive" | "full" => Ok(Method::AdaptiveFull),
            other => Err(Error::InvalidScenario(format!("unknown method '{other}'"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Standard => "standard",
            Method::AdaptiveFull => "adaptive-full",
        })
    }
}

/// Per-covariate model settings shared by both methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub d: usize,
    pub degree: usize,
    pub q: usize,
    pub p: usize,
    pub psi_degree: usize,
    pub control: FitControl,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            d: 12,
            degree: 3,
            q: 2,
            p: 5,
            psi_degree: 3,
            control: FitControl::default(),
        }
    }
}

impl ModelSettings {
    pub fn penalty_spec(&self, id: ScenarioId, method: Method) -> Result<AdaptivePenaltySpec> {
        let dims = id
            .domain()
            .iter()
            .map(|&(lo, hi)| BasisSpec::new(lo, hi, self.d, self.degree, self.q))
            .collect::<Result<Vec<_>>>()?;
        let spec = match method {
            Method::Standard => AdaptivePenaltySpec::standard(dims),
            Method::AdaptiveFull => AdaptivePenaltySpec::uniform(dims, AdaptivityMode::Full, self.p)
                .with_psi_degree(self.psi_degree),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    pub mse: f64,
    pub log_mse: f64,
    pub fit_seconds: f64,
    pub converged: bool,
    pub ed_total: f64,
    /// Set when the fit failed outright; the numeric fields are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub replicates: usize,
    pub converged: usize,
    pub median_mse: f64,
    pub median_log_mse: f64,
    pub log_mse_q1: f64,
    pub log_mse_q3: f64,
    pub median_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub scenario: Scenario,
    pub rows: Vec<ReplicateRow>,
    pub summaries: Vec<MethodSummary>,
}

impl ReplicateReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Quantile with linear interpolation between order statistics; NaNs are
/// dropped.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = prob.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

fn summarise(method: Method, rows: &[ReplicateRow]) -> MethodSummary {
    let mine: Vec<&ReplicateRow> = rows.iter().filter(|r| r.method == method).collect();
    let col = |f: fn(&ReplicateRow) -> f64| mine.iter().map(|r| f(r)).collect::<Vec<_>>();
    let log = col(|r| r.log_mse);
    MethodSummary {
        method,
        replicates: mine.len(),
        converged: mine.iter().filter(|r| r.converged).count(),
        median_mse: median(&col(|r| r.mse)),
        median_log_mse: median(&log),
        log_mse_q1: quantile(&log, 0.25),
        log_mse_q3: quantile(&log, 0.75),
        median_seconds: median(&col(|r| r.fit_seconds)),
    }
}

fn run_one(
    sc: &Scenario,
    smoothers: &[(Method, Smoother)],
    control: &FitControl,
    replicate: usize,
    seed: u64,
) -> Result<Vec<ReplicateRow>> {
    let data = gen_dataset(&Scenario { seed, ..sc.clone() })?;
    let y = Array1::from(data.y.clone());
    let cov = vec![data.x1.clone(), data.x2.clone()];
    Ok(smoothers
        .iter()
        .map(|(method, sm)| {
            let start = Instant::now();
            let res = sm.fit(&cov, &y, sc.family, None, None, control);
            let fit_seconds = start.elapsed().as_secs_f64();
            match res {
                Ok(fit) => {
                    let fitted = match sc.family {
                        Family::Gaussian => fit.eta.to_vec(),
                        _ => fit.mu.to_vec(),
                    };
                    let m = mse(&fitted, &data.truth);
                    ReplicateRow {
                        replicate,
                        seed,
                        method: *method,
                        mse: m,
                        log_mse: m.ln(),
                        fit_seconds,
                        converged: fit.converged,
                        ed_total: fit.ed_total,
                        error: None,
                    }
                }
                Err(e) => ReplicateRow {
                    replicate,
                    seed,
                    method: *method,
                    mse: f64::NAN,
                    log_mse: f64::NAN,
                    fit_seconds,
                    converged: false,
                    ed_total: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

/// Run `r` replicates; replicate `i` uses seed `base_seed + i`. Replicates
/// run in parallel and the rows come back in replicate order.
pub fn run_replicates(
    sc: &Scenario,
    r: usize,
    methods: &[Method],
    base_seed: u64,
    settings: &ModelSettings,
) -> Result<ReplicateReport> {
    sc.validate()?;
    settings.control.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidScenario("no methods requested".into()));
    }
    let smoothers = methods
        .iter()
        .map(|&m| Ok((m, Smoother::new(settings.penalty_spec(sc.id, m)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let per_rep = (0..r)
        .into_par_iter()
        .map(|i| run_one(sc, &smoothers, &settings.control, i, base_seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ReplicateRow> = per_rep.into_iter().flatten().collect();
    let summaries = methods.iter().map(|&m| summarise(m, &rows)).collect();
    Ok(ReplicateReport {
        scenario: sc.clone(),
        rows,
        summaries,
    })
}
