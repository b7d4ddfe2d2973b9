//! Subcommand implementations.

use std::path::{Path, PathBuf};

use adapspline::model::{expand_grid, Smoother};
use adapspline::penalty::AdaptivePenalty;
use adapspline::simlab::{run_replicates, Method, ModelSettings, ReplicateReport, Scenario, ScenarioId};
use adapspline::sop::{predict_from, Family, FitResult};
use ndarray::{Array1, Array2};

use crate::artifact::{Coefficients, ComponentTag, Convergence, FitArtifact, Fitted, FORMAT_VERSION};
use crate::config::{InputKind, ModelConfig, RawConfig};
use crate::data::{grid_order, Prepared, Table};
use crate::error::CliError;
use crate::matrix_market;

/// Relative slack when checking prediction points against the domain box.
const DOMAIN_SLACK: f64 = 1e-10;

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ModelConfig, CliError> {
    let mut raw = match path {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    raw.apply_flags(overrides)?;
    raw.resolve()
}

fn range(col: &[f64]) -> (f64, f64) {
    col.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)))
}

/// Read the input table and arrange it for the configured input kind.
/// Also returns, for grid input, the table row stored at each grid cell.
pub fn prepare(cfg: &ModelConfig, table: &Table) -> Result<(Prepared, Option<Vec<usize>>), CliError> {
    let cov: Vec<&[f64]> = cfg
        .covariate_names()
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_, _>>()?;
    match cfg.input {
        InputKind::Scattered => {
            let y = Array1::from(table.column(&cfg.response)?.to_vec());
            let offset = cfg
                .offset
                .as_ref()
                .map(|c| table.column(c).map(|v| Array1::from(v.to_vec())))
                .transpose()?;
            let weights = cfg
                .weights
                .as_ref()
                .map(|c| table.column(c).map(|v| Array1::from(v.to_vec())))
                .transpose()?;
            Ok((
                Prepared {
                    covariates: cov.iter().map(|c| c.to_vec()).collect(),
                    y,
                    offset,
                    weights,
                },
                None,
            ))
        }
        InputKind::Grid => {
            let (axes, slot) = grid_order(&cov)?;
            let count = table.column(&cfg.count)?;
            let pick = |col: &[f64]| Array1::from_iter(slot.iter().map(|&i| col[i]));
            let trials = if table.has(&cfg.trials) {
                Some(pick(table.column(&cfg.trials)?))
            } else {
                None
            };
            if let Some(t) = &trials {
                if let Some(i) = t.iter().position(|v| !(*v > 0.0)) {
                    return Err(CliError::Input(format!(
                        "grid row {}: trials must be positive",
                        slot[i] + 1
                    )));
                }
            }
            let need_trials = || {
                trials
                    .clone()
                    .ok_or_else(|| CliError::Input(format!("grid input has no '{}' column", cfg.trials)))
            };
            let (y, offset, weights) = match cfg.family {
                Family::Poisson => (pick(count), Some(need_trials()?.mapv(f64::ln)), None),
                Family::Bernoulli => {
                    let t = need_trials()?;
                    (&pick(count) / &t, None, Some(t))
                }
                Family::Gaussian => {
                    let col = if table.has(&cfg.response) { &cfg.response } else { &cfg.count };
                    (pick(table.column(col)?), None, None)
                }
            };
            Ok((
                Prepared {
                    covariates: axes,
                    y,
                    offset,
                    weights,
                },
                Some(slot),
            ))
        }
    }
}

pub struct FitOutcome {
    pub artifact: FitArtifact,
    pub converged: bool,
}

pub fn cmd_fit(data: &Path, cfg: ModelConfig, out: &Path) -> Result<FitOutcome, CliError> {
    let table = Table::read(data)?;
    if table.n_rows() == 0 {
        return Err(CliError::Input("input has no rows".into()));
    }
    let (prep, slot) = prepare(&cfg, &table)?;
    let data_box: Vec<(f64, f64)> = prep.covariates.iter().map(|c| range(c)).collect();
    let domain = cfg.domain_or(Some(&data_box));
    let spec = cfg.penalty_spec(&domain)?;
    let smoother = Smoother::new(spec)?;
    let fit = match cfg.input {
        InputKind::Scattered => smoother.fit(
            &prep.covariates,
            &prep.y,
            cfg.family,
            prep.offset.as_ref(),
            prep.weights.as_ref(),
            &cfg.control,
        )?,
        InputKind::Grid => smoother.fit_grid(
            &prep.covariates,
            &prep.y,
            cfg.family,
            prep.offset.as_ref(),
            prep.weights.as_ref(),
            &cfg.control,
        )?,
    };
    let artifact = build_artifact(&cfg, domain, &smoother, &fit, slot.as_deref());
    artifact.write(out)?;
    Ok(FitOutcome {
        converged: fit.converged,
        artifact,
    })
}

fn build_artifact(
    cfg: &ModelConfig,
    domain: Vec<(f64, f64)>,
    smoother: &Smoother,
    fit: &FitResult,
    slot: Option<&[usize]>,
) -> FitArtifact {
    // grid fits come back in cell order; report them in input row order
    let reorder = |v: &Array1<f64>| match slot {
        None => v.to_vec(),
        Some(slot) => {
            let mut out = vec![0.0; v.len()];
            for (cell, &row) in slot.iter().enumerate() {
                out[row] = v[cell];
            }
            out
        }
    };
    FitArtifact {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        domain,
        coefficients: Coefficients {
            theta: fit.theta.as_ref().map(|t| t.to_vec()).unwrap_or_default(),
            beta: fit.beta.to_vec(),
            alpha: fit.alpha.to_vec(),
        },
        variances: fit.sigma2.clone(),
        components: smoother
            .components()
            .penalty
            .component_tags()
            .into_iter()
            .map(|(dimension, index)| ComponentTag { dimension, index })
            .collect(),
        phi: fit.phi,
        eds: fit.ed_per_component.clone(),
        ed_total: fit.ed_total,
        deviance: fit.deviance,
        caic: fit.caic,
        convergence: Convergence {
            iterations: fit.iterations,
            pirls_iterations: fit.pirls_iterations,
            converged: fit.converged,
        },
        covariance: fit.covariance.rows().into_iter().map(|r| r.to_vec()).collect(),
        fitted: Fitted {
            eta: reorder(&fit.eta),
            mu: reorder(&fit.mu),
        },
        diagnostics: fit.diagnostics.clone(),
    }
}

/// Where to predict.
pub enum Points {
    Csv(PathBuf),
    /// Regular grid with this many points per covariate over the domain box.
    Grid(Vec<usize>),
}

pub fn parse_grid_spec(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(['x', 'X', ','])
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| CliError::Input(format!("bad grid size '{s}'; use e.g. 50x50")))
        })
        .collect()
}

pub fn cmd_predict(artifact_path: &Path, points: &Points, level: Option<f64>, out: &Path) -> Result<usize, CliError> {
    let art = FitArtifact::read(artifact_path)?;
    let cfg = &art.config;
    let level = level.unwrap_or(cfg.level);
    let k = cfg.dims.len();
    let (covariates, offset) = match points {
        Points::Grid(sizes) => {
            if sizes.len() != k {
                return Err(CliError::Input(format!("grid size has {} entries for {k} covariates", sizes.len())));
            }
            let axes: Vec<Vec<f64>> = sizes
                .iter()
                .zip(&art.domain)
                .map(|(&n, &(lo, hi))| {
                    if n == 1 {
                        vec![0.5 * (lo + hi)]
                    } else {
                        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
                    }
                })
                .collect();
            (expand_grid(&axes), None)
        }
        Points::Csv(path) => {
            let table = Table::read(path)?;
            let cov: Vec<Vec<f64>> = cfg
                .covariate_names()
                .iter()
                .map(|c| table.column(c).map(<[f64]>::to_vec))
                .collect::<Result<_, _>>()?;
            let offset = match (cfg.input, &cfg.offset) {
                (InputKind::Scattered, Some(c)) if table.has(c) => Some(Array1::from(table.column(c)?.to_vec())),
                (InputKind::Grid, _) if cfg.family == Family::Poisson && table.has(&cfg.trials) => {
                    Some(Array1::from_iter(table.column(&cfg.trials)?.iter().map(|t| t.ln())))
                }
                _ => None,
            };
            (cov, offset)
        }
    };
    let n = covariates[0].len();
    let outside: Vec<usize> = (0..n)
        .filter(|&i| {
            covariates.iter().zip(&art.domain).any(|(c, &(lo, hi))| {
                let slack = DOMAIN_SLACK * (hi - lo);
                !(c[i] >= lo - slack && c[i] <= hi + slack)
            })
        })
        .collect();
    if !outside.is_empty() {
        let list: Vec<String> = outside.iter().take(20).map(|i| (i + 1).to_string()).collect();
        return Err(CliError::Input(format!(
            "{} prediction point(s) outside the fitted domain, rows: {}{}",
            outside.len(),
            list.join(", "),
            if outside.len() > 20 { ", ..." } else { "" }
        )));
    }
    let spec = cfg.penalty_spec(&art.domain)?;
    let smoother = Smoother::new(spec)?;
    let rows = smoother.design_rows(&covariates)?;
    let coef: Array1<f64> = art
        .coefficients
        .beta
        .iter()
        .chain(&art.coefficients.alpha)
        .copied()
        .collect();
    let p = coef.len();
    if art.covariance.len() != p || art.covariance.iter().any(|r| r.len() != p) {
        return Err(CliError::Input("artifact covariance has the wrong shape".into()));
    }
    let cov = Array2::from_shape_fn((p, p), |(i, j)| art.covariance[i][j]);
    let pred = predict_from(&coef, &cov, cfg.family, &rows, offset.as_ref(), level)?;

    let mut w = csv::Writer::from_path(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    let mut header: Vec<String> = cfg.covariate_names().iter().map(|s| s.to_string()).collect();
    header.extend(["eta_hat", "mu_hat", "se_eta", "lower", "upper"].map(String::from));
    let csv_err = |e: csv::Error| CliError::Internal(format!("writing {}: {e}", out.display()));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..n {
        let mut rec: Vec<String> = covariates.iter().map(|c| c[i].to_string()).collect();
        for v in [pred.eta[i], pred.mu[i], pred.se_eta[i], pred.lower[i], pred.upper[i]] {
            rec.push(v.to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    Ok(n)
}

pub struct SimulateArgs {
    pub scenario: ScenarioId,
    pub n: usize,
    pub s: Option<f64>,
    pub family: Family,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
}

/// Model settings for simulation from `d`, `degree`, `q`, `p`,
/// `psi_degree`, `family` and the fit-control keys (single values only).
pub fn simulation_settings(overrides: &[String]) -> Result<(ModelSettings, Family), CliError> {
    let mut raw = RawConfig::default();
    raw.set("covariates", "x1,x2")?;
    raw.apply_flags(overrides)?;
    let cfg = raw.resolve()?;
    let first = &cfg.dims[0];
    let uniform = cfg.dims.iter().all(|d| d.d == first.d && d.q == first.q && d.degree == first.degree);
    let p = first.p[0];
    if !uniform || cfg.dims.iter().any(|d| d.p.iter().any(|&v| v != p)) {
        return Err(CliError::Input("simulation settings must be the same for both covariates".into()));
    }
    let defaults = ModelSettings::default();
    let settings = ModelSettings {
        d: if raw.get("d").is_some() { first.d } else { defaults.d },
        degree: first.degree,
        q: first.q,
        p,
        psi_degree: cfg.psi_degree,
        control: cfg.control,
    };
    Ok((settings, cfg.family))
}

pub fn cmd_simulate(args: &SimulateArgs, settings: &ModelSettings, out: &Path, timings: Option<&Path>) -> Result<ReplicateReport, CliError> {
    let sc = Scenario {
        id: args.scenario,
        n: args.n,
        family: args.family,
        s: args.s,
        seed: args.seed,
    };
    let report = run_replicates(&sc, args.replicates, &args.methods, args.seed, settings)?;
    let csv_err = |e: csv::Error| CliError::Internal(format!("writing report: {e}"));
    let mut w = csv::Writer::from_path(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    w.write_record(["replicate", "seed", "method", "mse", "log_mse", "converged", "ed_total", "error"])
        .map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            r.method.to_string(),
            r.mse.to_string(),
            r.log_mse.to_string(),
            r.converged.to_string(),
            r.ed_total.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    if let Some(path) = timings {
        let mut t = csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        t.write_record(["replicate", "method", "fit_seconds"]).map_err(csv_err)?;
        for r in &report.rows {
            t.write_record([r.replicate.to_string(), r.method.to_string(), r.fit_seconds.to_string()])
                .map_err(csv_err)?;
        }
        t.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(report)
}

/// Write one Matrix Market file per penalty component plus `index.csv`.
pub fn cmd_dump_penalty(cfg: &ModelConfig, out_dir: &Path) -> Result<usize, CliError> {
    let domain = cfg.domain_or(None);
    let spec = cfg.penalty_spec(&domain)?;
    let pen = AdaptivePenalty::new(&spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let index_path = out_dir.join("index.csv");
    let mut idx = csv::Writer::from_path(&index_path).map_err(|e| CliError::Input(format!("{}: {e}", index_path.display())))?;
    let csv_err = |e: csv::Error| CliError::Internal(format!("writing index: {e}"));
    idx.write_record(["file", "component", "dimension", "index", "rows", "cols", "nnz"])
        .map_err(csv_err)?;
    let comps = pen.components();
    for (l, c) in comps.iter().enumerate() {
        let name = format!("component_{l:04}.mtx");
        matrix_market::write(&out_dir.join(&name), &c.matrix)?;
        let nnz = c.matrix.iter().filter(|v| **v != 0.0).count();
        idx.write_record([
            name,
            l.to_string(),
            (c.dimension + 1).to_string(),
            c.index.to_string(),
            c.matrix.nrows().to_string(),
            c.matrix.ncols().to_string(),
            nnz.to_string(),
        ])
        .map_err(csv_err)?;
    }
    idx.flush().map_err(|e| CliError::io(&index_path, e))?;
    Ok(comps.len())
}
