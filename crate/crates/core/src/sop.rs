//! Mixed-model fitting with fixed-point variance updates for overlapping
//! precision components.
//!
//! The random effects have precision `G⁻¹ = Σ_l σ_l⁻² 𝓖_l`. Each outer
//! iteration solves the penalised normal equations (by penalised IRLS for
//! Poisson and Bernoulli responses) with `ξ_l = φ/σ_l²` fixed, then updates
//!
//! ```text
//! ED_l  = tr(𝓖_l (G − C_αα)) / σ_l²
//! σ_l² ← α̂ᵀ 𝓖_l α̂ / ED_l
//! φ    ← Σ w (y − μ)² / (n − ed_total)      (Gaussian only)
//! ```
//!
//! where `C_αα` is the random-effects block of `φ H⁻¹`.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::glam::{glam_fitted, glam_transpose, glam_weighted_inner, GridArray};
use crate::linalg::{psd_root, symmetrize, Cholesky, TriFactor};

/// Components with an effective dimension below this are not required to
/// settle before the fit is declared converged.
const NEGLIGIBLE_ED: f64 = 1e-6;
const MAX_HALVINGS: usize = 30;
const ETA_LIMIT: f64 = 700.0;
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
    Bernoulli,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            "bernoulli" | "binomial" | "logit" => Ok(Family::Bernoulli),
            other => Err(Error::InvalidResponse(format!("unknown family '{other}'"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
        })
    }
}

impl Family {
    pub fn inv_link(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Poisson => eta.min(ETA_LIMIT).exp(),
            Family::Bernoulli => {
                let p = 1.0 / (1.0 + (-eta).exp());
                p.clamp(PROB_EPS, 1.0 - PROB_EPS)
            }
        }
    }

    /// dμ/dη
    pub fn mu_eta(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Poisson => mu,
            Family::Bernoulli => mu * (1.0 - mu),
        }
    }

    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Poisson => mu,
            Family::Bernoulli => mu * (1.0 - mu),
        }
    }

    pub fn estimates_dispersion(self) -> bool {
        self == Family::Gaussian
    }

    pub fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        fn ylogy(y: f64, m: f64) -> f64 {
            if y > 0.0 {
                y * (y / m).ln()
            } else {
                0.0
            }
        }
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Poisson => 2.0 * (ylogy(y, mu) - (y - mu)),
            Family::Bernoulli => 2.0 * (ylogy(y, mu) + ylogy(1.0 - y, 1.0 - mu)),
        }
    }

    /// Starting linear predictor (offset included).
    pub fn initial_eta(self, y: f64) -> f64 {
        match self {
            Family::Gaussian => y,
            Family::Poisson => (y + 0.5).ln(),
            Family::Bernoulli => {
                let p = (y + 0.5) / 2.0;
                (p / (1.0 - p)).ln()
            }
        }
    }

    /// Responses must be non-negative integers for Poisson and proportions in
    /// `[0, 1]` for Bernoulli (`{0, 1}` when the prior weight is one).
    pub fn validate(self, y: ArrayView1<'_, f64>, weights: ArrayView1<'_, f64>) -> Result<()> {
        for (i, (&v, &w)) in y.iter().zip(weights.iter()).enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("response {i}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidResponse(format!("weight {i} is {w}")));
            }
            let ok = match self {
                Family::Gaussian => true,
                Family::Poisson => v >= 0.0 && v.fract() == 0.0,
                Family::Bernoulli => {
                    (0.0..=1.0).contains(&v) && (w != 1.0 || v == 0.0 || v == 1.0)
                }
            };
            if !ok {
                return Err(Error::InvalidResponse(format!(
                    "response {i} = {v} is not valid for the {self} family"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitControl {
    pub max_outer_iter: usize,
    pub max_pirls_iter: usize,
    pub rel_tol: f64,
    /// Variances are kept within `[variance_floor·φ, φ/variance_floor]`, so
    /// every weight `ξ_l = φ/σ_l²` stays within `variance_floor` and its
    /// reciprocal whatever the scale of the response.
    pub variance_floor: f64,
    pub initial_variance: f64,
}

impl Default for FitControl {
    fn default() -> Self {
        Self {
            max_outer_iter: 200,
            max_pirls_iter: 100,
            rel_tol: 1e-6,
            variance_floor: 1e-10,
            initial_variance: 1.0,
        }
    }
}

impl FitControl {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidPenalty(format!("fit control: {m}")));
        if self.max_outer_iter == 0 || self.max_pirls_iter == 0 {
            return bad("iteration caps must be positive");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        if !(self.initial_variance > 0.0) || !(self.variance_floor > 0.0) {
            return bad("variances must be positive");
        }
        if self.variance_floor >= self.initial_variance {
            return bad("variance_floor must be below initial_variance");
        }
        Ok(())
    }
}

/// Random-effects precision `Σ_l w_l 𝓖_l` and the per-component quantities
/// the variance update needs.
pub trait PrecisionComponents: Sync {
    fn n_random(&self) -> usize;
    fn n_components(&self) -> usize;
    fn weighted_sum(&self, w: &[f64]) -> Array2<f64>;
    /// `αᵀ 𝓖_l α` for every component.
    fn quadratic_forms(&self, alpha: ArrayView1<'_, f64>) -> Vec<f64>;
    /// `tr(𝓖_l M)` for every component, `M` symmetric.
    fn traces(&self, m: &Array2<f64>) -> Vec<f64>;
    /// The components as weighted outer products of penalty rows.
    fn penalty_rows(&self) -> Result<PenaltyRows>;
}

/// `𝓖_l = Σ_j Ψ_jl m_j m_jᵀ` with `m_j` the rows of `m` and `Ψ ≥ 0`.
#[derive(Debug, Clone)]
pub struct PenaltyRows {
    pub m: Array2<f64>,
    pub psi: Array2<f64>,
}

impl PenaltyRows {
    pub fn new(m: Array2<f64>, psi: Array2<f64>) -> Result<Self> {
        if m.nrows() != psi.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} penalty rows with {} row weights",
                m.nrows(),
                psi.nrows()
            )));
        }
        if psi.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidPenalty("row weights must be non-negative".into()));
        }
        Ok(Self { m, psi })
    }

    /// `ρ_j = Σ_l Ψ_jl w_l`
    pub fn row_weights(&self, w: &[f64]) -> Array1<f64> {
        self.psi.dot(&ArrayView1::from(w))
    }

    /// `Σ_j Ψ_jl r_j` for every component.
    pub fn component_sums(&self, r: &Array1<f64>) -> Vec<f64> {
        self.psi.t().dot(r).to_vec()
    }

    /// `αᵀ 𝓖_l α` for every component.
    pub fn quadratic_forms(&self, alpha: ArrayView1<'_, f64>) -> Vec<f64> {
        self.component_sums(&self.m.dot(&alpha).mapv(|v| v * v))
    }
}

/// Explicit `𝓖_l` matrices.
#[derive(Debug, Clone)]
pub struct DenseComponents {
    gs: Vec<Array2<f64>>,
}

impl DenseComponents {
    pub fn new(gs: Vec<Array2<f64>>) -> Result<Self> {
        let n = gs.first().map(|g| g.nrows()).ok_or_else(|| {
            Error::InvalidPenalty("at least one precision component is required".into())
        })?;
        if gs.iter().any(|g| g.dim() != (n, n)) {
            return Err(Error::DimensionMismatch(
                "precision components differ in size or are not square".into(),
            ));
        }
        Ok(Self { gs })
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.gs
    }
}

impl PrecisionComponents for DenseComponents {
    fn n_random(&self) -> usize {
        self.gs[0].nrows()
    }

    fn n_components(&self) -> usize {
        self.gs.len()
    }

    fn weighted_sum(&self, w: &[f64]) -> Array2<f64> {
        let n = self.n_random();
        self.gs
            .iter()
            .zip(w)
            .fold(Array2::zeros((n, n)), |acc, (g, &wl)| acc + &(g * wl))
    }

    fn quadratic_forms(&self, alpha: ArrayView1<'_, f64>) -> Vec<f64> {
        self.gs.iter().map(|g| alpha.dot(&g.dot(&alpha))).collect()
    }

    fn traces(&self, m: &Array2<f64>) -> Vec<f64> {
        self.gs.iter().map(|g| (g * m).sum()).collect()
    }

    fn penalty_rows(&self) -> Result<PenaltyRows> {
        let mut blocks = Vec::new();
        for g in &self.gs {
            let root = psd_root(g.view())?;
            let top = root.rows().into_iter().map(|r| r.dot(&r)).fold(0.0, f64::max);
            let keep: Vec<usize> = (0..root.nrows())
                .filter(|&i| root.row(i).dot(&root.row(i)) > top * f64::EPSILON * g.nrows() as f64)
                .collect();
            blocks.push(root.select(Axis(0), &keep));
        }
        let total: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut psi = Array2::zeros((total, self.gs.len()));
        let mut start = 0;
        for (l, b) in blocks.iter().enumerate() {
            psi.slice_mut(s![start..start + b.nrows(), l]).fill(1.0);
            start += b.nrows();
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let m = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        PenaltyRows::new(m, psi)
    }
}

/// The combined design `C = [X | Z]`.
pub trait MixedDesign: Sync {
    fn n_obs(&self) -> usize;
    fn n_fixed(&self) -> usize;
    fn n_random(&self) -> usize;
    /// `Cᵀ diag(w) C`
    fn cross_product(&self, w: ArrayView1<'_, f64>) -> Array2<f64>;
    /// `Cᵀ v`
    fn transpose_times(&self, v: ArrayView1<'_, f64>) -> Array1<f64>;
    /// `C b`
    fn predictor(&self, coef: ArrayView1<'_, f64>) -> Array1<f64>;
    /// Any `A` with `AᵀA = Cᵀ diag(w) C`.
    fn weighted_root(&self, w: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        psd_root(self.cross_product(w).view())
    }
}

/// Scattered data: `[X | Z]` held explicitly.
#[derive(Debug, Clone)]
pub struct DenseDesign {
    c: Array2<f64>,
    n_fixed: usize,
}

impl DenseDesign {
    pub fn new(x: &Array2<f64>, z: &Array2<f64>) -> Result<Self> {
        if x.nrows() != z.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        let c = ndarray::concatenate(Axis(1), &[x.view(), z.view()])
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        Ok(Self {
            c,
            n_fixed: x.ncols(),
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.c
    }
}

impl MixedDesign for DenseDesign {
    fn n_obs(&self) -> usize {
        self.c.nrows()
    }

    fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    fn n_random(&self) -> usize {
        self.c.ncols() - self.n_fixed
    }

    fn cross_product(&self, w: ArrayView1<'_, f64>) -> Array2<f64> {
        let wc = &self.c * &w.insert_axis(Axis(1));
        let mut out = self.c.t().dot(&wc);
        symmetrize(&mut out);
        out
    }

    fn transpose_times(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.c.t().dot(&v)
    }

    fn predictor(&self, coef: ArrayView1<'_, f64>) -> Array1<f64> {
        self.c.dot(&coef)
    }

    fn weighted_root(&self, w: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        Ok(&self.c * &w.mapv(f64::sqrt).insert_axis(Axis(1)))
    }
}

/// Data on a complete grid: `C = B [T₀ | T₊]` with `B` a Kronecker product of
/// marginal bases, handled by array arithmetic.
#[derive(Debug, Clone)]
pub struct GridDesign {
    margins: Vec<Array2<f64>>,
    grid_dims: Vec<usize>,
    coef_dims: Vec<usize>,
    t: Array2<f64>,
    n_fixed: usize,
}

impl GridDesign {
    pub fn new(margins: Vec<Array2<f64>>, t_zero: &Array2<f64>, t_plus: &Array2<f64>) -> Result<Self> {
        let grid_dims: Vec<usize> = margins.iter().map(|b| b.nrows()).collect();
        let coef_dims: Vec<usize> = margins.iter().map(|b| b.ncols()).collect();
        let c: usize = coef_dims.iter().product();
        if t_zero.nrows() != c || t_plus.nrows() != c {
            return Err(Error::DimensionMismatch(format!(
                "transforms have {} and {} rows for {c} coefficients",
                t_zero.nrows(),
                t_plus.nrows()
            )));
        }
        let t = ndarray::concatenate(Axis(1), &[t_zero.view(), t_plus.view()])
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Ok(Self {
            margins,
            grid_dims,
            coef_dims,
            t,
            n_fixed: t_zero.ncols(),
        })
    }

    fn grid(&self, v: ArrayView1<'_, f64>) -> GridArray {
        GridArray::new(self.grid_dims.clone(), v.to_owned()).expect("grid extents fixed at construction")
    }
}

impl MixedDesign for GridDesign {
    fn n_obs(&self) -> usize {
        self.grid_dims.iter().product()
    }

    fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    fn n_random(&self) -> usize {
        self.t.ncols() - self.n_fixed
    }

    fn cross_product(&self, w: ArrayView1<'_, f64>) -> Array2<f64> {
        let btwb = glam_weighted_inner(&self.margins, &self.grid(w)).expect("conformable grid");
        let mut out = self.t.t().dot(&btwb.dot(&self.t));
        symmetrize(&mut out);
        out
    }

    fn transpose_times(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let btv = glam_transpose(&self.margins, &self.grid(v)).expect("conformable grid");
        self.t.t().dot(btv.values())
    }

    fn predictor(&self, coef: ArrayView1<'_, f64>) -> Array1<f64> {
        let theta = GridArray::new(self.coef_dims.clone(), self.t.dot(&coef))
            .expect("coefficient extents fixed at construction");
        glam_fitted(&self.margins, &theta)
            .expect("conformable grid")
            .into_values()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterationRecord {
    pub deviance: f64,
    pub phi: f64,
    pub sigma2: Vec<f64>,
    pub ed_total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub beta: Array1<f64>,
    pub alpha: Array1<f64>,
    /// Original-basis coefficients, filled in when the transforms are known.
    pub theta: Option<Array1<f64>>,
    pub sigma2: Vec<f64>,
    pub phi: f64,
    pub ed_per_component: Vec<f64>,
    pub ed_total: f64,
    pub deviance: f64,
    pub caic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub pirls_iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// Linear predictor including the offset.
    pub eta: Array1<f64>,
    pub mu: Array1<f64>,
    /// Posterior covariance `φ H⁻¹` of `(β, α)`.
    pub covariance: Array2<f64>,
    /// Non-fatal events such as exhausted step-halving.
    pub diagnostics: Vec<String>,
}

impl FitResult {
    pub fn coefficients(&self) -> Array1<f64> {
        ndarray::concatenate(Axis(0), &[self.beta.view(), self.alpha.view()])
            .expect("1-D concatenation")
    }

    pub fn n_fixed(&self) -> usize {
        self.beta.len()
    }

    /// Record `θ = T₀β + T₊α`.
    pub fn set_transforms(&mut self, t_zero: &Array2<f64>, t_plus: &Array2<f64>) {
        self.theta = Some(t_zero.dot(&self.beta) + t_plus.dot(&self.alpha));
    }
}

/// Conditional AIC: deviance plus twice the total effective dimension.
pub fn caic(fit: &FitResult) -> f64 {
    fit.deviance + 2.0 * fit.ed_total
}

/// `m_jᵀ G m_j` for every penalty row, `G⁻¹ = Σ σ_l⁻² 𝓖_l`, from a QR of the
/// weighted rows. `G⁻¹` is never formed: with variances spanning many orders
/// of magnitude the dense sum loses the lightly weighted rows.
struct PenaltyFactor {
    prec: Vec<f64>,
    rho: Array1<f64>,
    leverage: Array1<f64>,
    log_det: f64,
}

impl PenaltyFactor {
    fn new(rows: &PenaltyRows, sigma2: &[f64]) -> Result<Self> {
        let prec: Vec<f64> = sigma2.iter().map(|s| 1.0 / s).collect();
        let rho = rows.row_weights(&prec);
        let root = rows.m.clone() * &rho.mapv(f64::sqrt).insert_axis(Axis(1));
        let tri = TriFactor::from_rows(root.view(), "random-effects precision")?;
        let leverage = row_norms2(&tri.right_solve(rows.m.view()));
        Ok(Self { prec, rho, leverage, log_det: tri.log_det() })
    }

    /// `[0 | diag(√(φρ)) M]`
    fn root(&self, rows: &PenaltyRows, nf: usize, phi: f64) -> Array2<f64> {
        let mut out = Array2::zeros((rows.m.nrows(), nf + rows.m.ncols()));
        let scale = self.rho.mapv(|r| (phi * r).sqrt()).insert_axis(Axis(1));
        out.slice_mut(s![.., nf..]).assign(&(&rows.m * &scale));
        out
    }

    /// `φ αᵀ G⁻¹ α`
    fn penalty(&self, rows: &PenaltyRows, phi: f64, alpha: ArrayView1<'_, f64>) -> f64 {
        let r = rows.m.dot(&alpha);
        phi * r.iter().zip(&self.rho).map(|(v, w)| w * v * v).sum::<f64>()
    }

    /// `ED_l = tr(𝓖_l (G − C_αα))/σ_l²` given `m_jᵀ C_αα m_j` for every row.
    /// Each row contributes `Ψ_jl σ_l⁻² (m_jᵀ G m_j − m_jᵀ C_αα m_j)`, a
    /// number in `[0, 1]`, so nothing large cancels.
    fn effective_dimensions(&self, rows: &PenaltyRows, c_rows: &Array1<f64>) -> Vec<f64> {
        let diff = (&self.leverage - c_rows).mapv(|v| v.max(0.0));
        let n_random = rows.m.ncols() as f64;
        rows.component_sums(&diff)
            .iter()
            .zip(&self.prec)
            .map(|(v, p)| (v * p).clamp(0.0, n_random))
            .collect()
    }
}

fn row_norms2(a: &Array2<f64>) -> Array1<f64> {
    a.rows().into_iter().map(|r| r.dot(&r)).collect()
}

/// Below this effective dimension `q_l` and `ED_l` are both at rounding
/// level and their ratio carries no information.
const UNRESOLVED_ED: f64 = 1e-10;

fn variance_step(quads: &[f64], eds: &[f64], sigma2: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    quads
        .iter()
        .zip(eds)
        .zip(sigma2)
        .map(|((q, ed), s)| if *ed >= UNRESOLVED_ED { q / ed } else { *s })
        .map(|s| s.clamp(lo, hi))
        .collect()
}

/// One SOP update: `ED_l = tr(𝓖_l (G − C_αα))/σ_l²` and
/// `σ_l² ← α̂ᵀ 𝓖_l α̂ / ED_l`, clamped to `bounds`.
///
/// Returns the new variances and the effective dimensions at the old ones.
pub fn update_variances(
    alpha_hat: ArrayView1<'_, f64>,
    comps: &dyn PrecisionComponents,
    sigma2: &[f64],
    c_alpha: &Array2<f64>,
    bounds: (f64, f64),
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = comps.penalty_rows()?;
    let pf = PenaltyFactor::new(&rows, sigma2)?;
    let c_rows = (rows.m.dot(c_alpha) * &rows.m).sum_axis(Axis(1));
    let eds = pf.effective_dimensions(&rows, &c_rows);
    let quads = rows.quadratic_forms(alpha_hat);
    Ok((variance_step(&quads, &eds, sigma2, bounds), eds))
}

/// Solution of the penalised equations `H b = Cᵀ W z` with `UᵀU = H`.
struct Solve {
    coef: Array1<f64>,
    tri: TriFactor,
}

fn penalised_solve(
    design: &dyn MixedDesign,
    pen_root: &Array2<f64>,
    w: &Array1<f64>,
    wz: &Array1<f64>,
) -> Result<Solve> {
    let nf = design.n_fixed();
    let data = design.weighted_root(w.view())?;
    if nf > 0 {
        let x = data.slice(s![.., ..nf]);
        Cholesky::new(x.t().dot(&x).view(), "fixed-effects block")
            .map_err(|_| Error::RankDeficient("XᵀWX is singular".into()))?;
    }
    let stacked = ndarray::concatenate(Axis(0), &[data.view(), pen_root.view()])
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let tri = TriFactor::from_rows(stacked.view(), "penalised coefficient matrix")?;
    let coef = tri.solve(&design.transpose_times(wz.view()));
    Ok(Solve { coef, tri })
}

struct Working {
    w: Array1<f64>,
    wz: Array1<f64>,
}

fn working(
    family: Family,
    y: &Array1<f64>,
    eta: &Array1<f64>,
    offset: &Array1<f64>,
    prior: &Array1<f64>,
) -> Working {
    let n = y.len();
    let mut w = Array1::zeros(n);
    let mut wz = Array1::zeros(n);
    for i in 0..n {
        let mu = family.inv_link(eta[i]);
        let d = family.mu_eta(mu).max(1e-300);
        let wi = prior[i] * d * d / family.variance(mu).max(1e-300);
        let z = eta[i] - offset[i] + (y[i] - mu) / d;
        w[i] = wi;
        wz[i] = wi * z;
    }
    Working { w, wz }
}

fn deviance(family: Family, y: &Array1<f64>, eta: &Array1<f64>, prior: &Array1<f64>) -> f64 {
    y.iter()
        .zip(eta)
        .zip(prior)
        .map(|((&yi, &e), &w)| w * family.unit_deviance(yi, family.inv_link(e)))
        .sum()
}

/// Squared extrapolation of the fixed-point map on `θ = (log σ², log φ)`.
/// After two plain updates `θ₀ → θ₁ → θ₂` the next iterate is
/// `θ₀ − 2a r + a² v` with `r = θ₁ − θ₀`, `v = θ₂ − 2θ₁ + θ₀`,
/// `a = −‖r‖/‖v‖`. A jump is kept only if the restricted likelihood there is
/// no lower than at `θ₁`; otherwise the iteration resumes from `θ₂`.
/// Convergence is still judged on plain updates.
struct Squarem {
    phase: Phase,
    step_max: f64,
}

enum Phase {
    Start,
    One { theta0: Vec<f64> },
    Jumped { theta2: Vec<f64>, ell1: f64 },
}

impl Squarem {
    const STEP_GROWTH: f64 = 4.0;

    fn new() -> Self {
        Self { phase: Phase::Start, step_max: 1.0 }
    }

    /// `theta_in` was evaluated (restricted log-likelihood `ell`) and mapped
    /// to `theta_out`; returns the next point to evaluate.
    fn next(&mut self, theta_in: Vec<f64>, ell: f64, theta_out: Vec<f64>) -> Vec<f64> {
        match std::mem::replace(&mut self.phase, Phase::Start) {
            Phase::Start => {
                self.phase = Phase::One { theta0: theta_in };
                theta_out
            }
            Phase::One { theta0 } => {
                let r: Vec<f64> = theta_in.iter().zip(&theta0).map(|(a, b)| a - b).collect();
                let v: Vec<f64> = theta_out
                    .iter()
                    .zip(&theta_in)
                    .zip(&theta0)
                    .map(|((t2, t1), t0)| t2 - 2.0 * t1 + t0)
                    .collect();
                let norm = |x: &[f64]| x.iter().map(|u| u * u).sum::<f64>().sqrt();
                let (nr, nv) = (norm(&r), norm(&v));
                if !(nv > 0.0) || !(nr > 0.0) || !ell.is_finite() {
                    return theta_out;
                }
                let a = (-nr / nv).clamp(-self.step_max, -1.0);
                if a == -self.step_max {
                    self.step_max *= Self::STEP_GROWTH;
                }
                let jump = theta0
                    .iter()
                    .zip(&r)
                    .zip(&v)
                    .map(|((t, r), v)| t - 2.0 * a * r + a * a * v)
                    .collect();
                self.phase = Phase::Jumped { theta2: theta_out, ell1: ell };
                jump
            }
            Phase::Jumped { theta2, ell1 } => {
                if ell >= ell1 - 1e-10 * ell1.abs() {
                    self.phase = Phase::One { theta0: theta_in };
                    theta_out
                } else {
                    self.step_max = 1.0;
                    theta2
                }
            }
        }
    }
}

/// Fit the mixed model.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    design: &dyn MixedDesign,
    comps: &dyn PrecisionComponents,
    y: &Array1<f64>,
    family: Family,
    offset: Option<&Array1<f64>>,
    weights: Option<&Array1<f64>>,
    control: &FitControl,
) -> Result<FitResult> {
    control.validate()?;
    let n = design.n_obs();
    let (nf, nr) = (design.n_fixed(), design.n_random());
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} responses for {n} rows", y.len())));
    }
    if comps.n_random() != nr {
        return Err(Error::DimensionMismatch(format!(
            "precision components of size {} for {nr} random effects",
            comps.n_random()
        )));
    }
    let offset = offset.cloned().unwrap_or_else(|| Array1::zeros(n));
    let prior = weights.cloned().unwrap_or_else(|| Array1::ones(n));
    if offset.len() != n || prior.len() != n {
        return Err(Error::DimensionMismatch("offset or weights length".into()));
    }
    if offset.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("offset".into()));
    }
    family.validate(y.view(), prior.view())?;

    let k = comps.n_components();
    let mut sigma2 = vec![control.initial_variance; k];
    let mut phi = if family.estimates_dispersion() {
        let wsum = prior.sum();
        let mean = (y * &prior).sum() / wsum;
        let var = y
            .iter()
            .zip(&prior)
            .map(|(v, w)| w * (v - mean) * (v - mean))
            .sum::<f64>()
            / (wsum - 1.0).max(1.0);
        if var > 0.0 {
            var
        } else {
            1.0
        }
    } else {
        1.0
    };
    let phi_start = phi;
    let rows = comps.penalty_rows()?;
    if rows.m.ncols() != nr || rows.psi.ncols() != k {
        return Err(Error::DimensionMismatch("penalty rows do not match the components".into()));
    }
    let mut eta: Array1<f64> = y.mapv(|v| family.initial_eta(v));
    let mut coef: Option<Array1<f64>> = None;
    let mut trace = Vec::new();
    let mut diagnostics = Vec::new();
    let mut pirls_total = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_dev = f64::NAN;
    let mut eds = vec![0.0; k];
    let mut ed_total = nf as f64;
    let mut last_solve: Option<(Solve, f64)> = None;
    let mut squarem = Squarem::new();

    for it in 1..=control.max_outer_iter {
        iterations = it;
        let pf = PenaltyFactor::new(&rows, &sigma2)?;
        let pen_root = pf.root(&rows, nf, phi);
        let pen = |c: &Array1<f64>| pf.penalty(&rows, phi, c.slice(s![nf..]));

        // penalised IRLS at fixed variances
        let mut prev = coef.clone();
        let mut pd_old = prev.as_ref().map(|c| deviance(family, y, &eta, &prior) + pen(c));
        let mut solve = None;
        let mut wk = working(family, y, &eta, &offset, &prior);
        for inner in 0..control.max_pirls_iter {
            pirls_total += 1;
            if inner > 0 {
                wk = working(family, y, &eta, &offset, &prior);
            }
            let mut s = penalised_solve(design, &pen_root, &wk.w, &wk.wz)?;
            let mut eta_new = design.predictor(s.coef.view()) + &offset;
            let mut pd_new = deviance(family, y, &eta_new, &prior) + pen(&s.coef);
            if !pd_new.is_finite() && pd_old.is_none() {
                return Err(Error::Pirls("non-finite deviance at the first step".into()));
            }
            // the Gaussian solve is the exact minimiser; halving would only chase rounding
            if let (Some(old), Some(p), false) = (pd_old, prev.as_ref(), family == Family::Gaussian) {
                let mut halvings = 0;
                while !(pd_new <= old + 1e-12 * old.abs()) && halvings < MAX_HALVINGS {
                    s.coef = (&s.coef + p) * 0.5;
                    eta_new = design.predictor(s.coef.view()) + &offset;
                    pd_new = deviance(family, y, &eta_new, &prior) + pen(&s.coef);
                    halvings += 1;
                }
                if !(pd_new <= old + 1e-12 * old.abs()) {
                    diagnostics.push(format!(
                        "iteration {it}: step-halving failed after {MAX_HALVINGS} halvings"
                    ));
                    solve = Some(s);
                    break;
                }
            }
            let change = pd_old.map(|o| (o - pd_new).abs() / (pd_new.abs() + 0.1));
            eta = eta_new;
            coef = Some(s.coef.clone());
            prev = Some(s.coef.clone());
            solve = Some(s);
            pd_old = Some(pd_new);
            if family == Family::Gaussian {
                break;
            }
            if inner > 0 && change.is_some_and(|c| c < control.rel_tol * 1e-3) {
                break;
            }
        }
        let s = solve.expect("at least one inner iteration");
        let b = coef.as_ref().expect("coefficients after a solve");

        // variance update from the same factorisation
        let m_full = {
            let mut m = Array2::zeros((rows.m.nrows(), nf + nr));
            m.slice_mut(s![.., nf..]).assign(&rows.m);
            m
        };
        let c_rows = row_norms2(&s.tri.right_solve(m_full.view())) * phi;
        let new_eds = pf.effective_dimensions(&rows, &c_rows);
        let bounds = (control.variance_floor * phi, phi / control.variance_floor);
        let new_sigma2 = variance_step(&rows.quadratic_forms(b.slice(s![nf..])), &new_eds, &sigma2, bounds);
        eds = new_eds;
        ed_total = nf as f64 + eds.iter().sum::<f64>();
        let dev = deviance(family, y, &eta, &prior);
        let new_phi = if family.estimates_dispersion() {
            let resid = (n as f64 - ed_total).max(1.0);
            (dev / resid).max(control.variance_floor * phi_start)
        } else {
            1.0
        };

        let dev_change = (dev - last_dev).abs() / (dev.abs() + 1e-10);
        let var_settled = sigma2
            .iter()
            .zip(&new_sigma2)
            .zip(&eds)
            .all(|((o, n), ed)| {
                // a variance pinned at a bound follows φ; what must settle is ξ
                let pinned = *n == bounds.0 || *n == bounds.1;
                let xi_change = ((new_phi / n) / (phi / o) - 1.0).abs();
                *ed < NEGLIGIBLE_ED
                    || (n - o).abs() / o < control.rel_tol
                    || (pinned && xi_change < control.rel_tol)
            });
        let phi_settled = (new_phi - phi).abs() / phi < control.rel_tol;

        // restricted log-likelihood of the working model at the input point
        let ctwz = design.transpose_times(wk.wz.view());
        let zwz: f64 = wk
            .w
            .iter()
            .zip(&wk.wz)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, wz)| wz * wz / w)
            .sum();
        let ell = -0.5
            * ((n as f64 - (nf + nr) as f64) * phi.ln() + s.tri.log_det() - pf.log_det
                + (zwz - ctwz.dot(&s.tri.solve(&ctwz))) / phi);

        last_dev = dev;
        let old_sigma2 = std::mem::replace(&mut sigma2, new_sigma2);
        let old_phi = std::mem::replace(&mut phi, new_phi);
        trace.push(IterationRecord {
            deviance: dev,
            phi,
            sigma2: sigma2.clone(),
            ed_total,
        });
        last_solve = Some((s, old_phi));
        if it > 1 && dev_change < control.rel_tol && var_settled && phi_settled {
            converged = true;
            break;
        }
        let mut theta_in: Vec<f64> = old_sigma2.iter().map(|v| v.ln()).collect();
        theta_in.push(old_phi.ln());
        let mut theta_out: Vec<f64> = sigma2.iter().map(|v| v.ln()).collect();
        theta_out.push(phi.ln());
        let next = squarem.next(theta_in, ell, theta_out);
        let next_phi = if family.estimates_dispersion() {
            next[k].exp().max(control.variance_floor * phi_start)
        } else {
            1.0
        };
        phi = next_phi;
        sigma2 = next[..k]
            .iter()
            .map(|v| v.exp().clamp(control.variance_floor * phi, phi / control.variance_floor))
            .collect();
    }

    // report the last plain update rather than an unevaluated extrapolation
    if let (false, Some(r)) = (converged, trace.last()) {
        sigma2.clone_from(&r.sigma2);
        phi = r.phi;
    }
    // φ at the last solve, not the updated value
    let (s, phi_solve) = last_solve.expect("at least one outer iteration");
    let b = coef.expect("coefficients after a solve");
    let covariance = s.tri.inverse() * phi_solve;
    let mu = eta.mapv(|e| family.inv_link(e));
    let mut out = FitResult {
        family,
        beta: b.slice(s![..nf]).to_owned(),
        alpha: b.slice(s![nf..]).to_owned(),
        theta: None,
        sigma2,
        phi,
        ed_per_component: eds,
        ed_total,
        deviance: last_dev,
        caic: 0.0,
        converged,
        iterations,
        pirls_iterations: pirls_total,
        trace,
        eta,
        mu,
        covariance,
        diagnostics,
    };
    out.caic = caic(&out);
    Ok(out)
}

/// `fit` for explicit `X`, `Z` and `𝓖_l` matrices.
#[allow(clippy::too_many_arguments)]
pub fn fit_dense(
    x: &Array2<f64>,
    z: &Array2<f64>,
    g_components: &[Array2<f64>],
    y: &Array1<f64>,
    family: Family,
    offset: Option<&Array1<f64>>,
    weights: Option<&Array1<f64>>,
    control: &FitControl,
) -> Result<FitResult> {
    let design = DenseDesign::new(x, z)?;
    let comps = DenseComponents::new(g_components.to_vec())?;
    fit(&design, &comps, y, family, offset, weights, control)
}

/// Gaussian restricted log-likelihood for `V = φI + Z G Zᵀ`,
/// `G⁻¹ = Σ σ_l⁻² 𝓖_l`, evaluated through the mixed-model equations.
pub fn reml_loglik(
    y: &Array1<f64>,
    x: &Array2<f64>,
    z: &Array2<f64>,
    comps: &dyn PrecisionComponents,
    sigma2: &[f64],
    phi: f64,
) -> Result<f64> {
    let n = y.len();
    let nf = x.ncols();
    let design = DenseDesign::new(x, z)?;
    if design.n_obs() != n || comps.n_random() != z.ncols() || sigma2.len() != comps.n_components() {
        return Err(Error::DimensionMismatch("REML inputs are not conformable".into()));
    }
    let xi: Vec<f64> = sigma2.iter().map(|s| phi / s).collect();
    let f = comps.weighted_sum(&xi);
    let log_det_f = Cholesky::new(f.view(), "scaled random-effects precision")?.log_det();
    let mut h = design.cross_product(Array1::ones(n).view());
    {
        let mut block = h.slice_mut(s![nf.., nf..]);
        block += &f;
    }
    let chol = Cholesky::new(h.view(), "penalised coefficient matrix")?;
    let rhs = design.transpose_times(y.view());
    let fitted_part = chol.solve(&rhs).dot(&rhs);
    let ypy = (y.dot(y) - fitted_part) / phi;
    let dof = (n - nf) as f64;
    Ok(-0.5
        * (dof * (2.0 * std::f64::consts::PI).ln() + dof * phi.ln() - log_det_f
            + chol.log_det()
            + ypy))
}

/// Pointwise predictions with intervals.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Prediction {
    pub eta: Array1<f64>,
    pub mu: Array1<f64>,
    pub se_eta: Array1<f64>,
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

/// Predict at rows of the combined design `[X | Z]`. The interval is
/// `η̂ ± z·se` mapped through the inverse link.
pub fn predict(
    fit: &FitResult,
    rows: &Array2<f64>,
    offset: Option<&Array1<f64>>,
    level: f64,
) -> Result<Prediction> {
    predict_from(&fit.coefficients(), &fit.covariance, fit.family, rows, offset, level)
}

/// `predict` from stored coefficients `(β, α)` and their covariance.
pub fn predict_from(
    coef: &Array1<f64>,
    covariance: &Array2<f64>,
    family: Family,
    rows: &Array2<f64>,
    offset: Option<&Array1<f64>>,
    level: f64,
) -> Result<Prediction> {
    let p = coef.len();
    if rows.ncols() != p || covariance.dim() != (p, p) {
        return Err(Error::DimensionMismatch(format!(
            "prediction rows have {} columns, the model has {p} coefficients",
            rows.ncols()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidResponse(format!("confidence level {level} not in (0, 1)")));
    }
    let m = rows.nrows();
    let mut eta = rows.dot(coef);
    if let Some(o) = offset {
        if o.len() != m {
            return Err(Error::DimensionMismatch("prediction offset length".into()));
        }
        eta += o;
    }
    let rc = rows.dot(covariance);
    let se_eta: Array1<f64> = (&rc * rows).sum_axis(Axis(1)).mapv(|v| v.max(0.0).sqrt());
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0);
    let mu = eta.mapv(|e| family.inv_link(e));
    let lower = Array1::from_shape_fn(m, |i| family.inv_link(eta[i] - z * se_eta[i]));
    let upper = Array1::from_shape_fn(m, |i| family.inv_link(eta[i] + z * se_eta[i]));
    Ok(Prediction {
        eta,
        mu,
        se_eta,
        lower,
        upper,
    })
}
