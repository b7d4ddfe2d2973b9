//! Standard anisotropic and locally adaptive difference penalties.
//!
//! For covariate `m` of a `K`-dimensional tensor product, coefficient
//! differences are formed by `L_m = I ⊗ … ⊗ D_m ⊗ … ⊗ I` (first covariate
//! innermost). The adaptive penalty weights every difference with its own
//! smoothing parameter, and those parameters are themselves a tensor
//! B-spline expansion `λ_m = (Ψ_mK ⊗ … ⊗ Ψ_m1) ξ_m`. Each column of the
//! Ψ product yields one penalty component `L_mᵀ diag(ψ) L_m`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::basis::{diff_matrix, eval_basis, kron_all, BasisSpec};
use crate::error::{Error, Result};

/// How the smoothing parameters for one covariate's differences vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptivityMode {
    /// One smoothing parameter for the whole direction.
    None,
    /// Varies along its own covariate and along all others.
    Full,
    /// Constant along its own covariate, varying with the other covariates.
    VaryWithOthers,
    /// Varies along its own covariate only.
    VaryAlongSelf,
}

impl AdaptivityMode {
    /// Whether the Ψ factor on axis `w` is a B-spline basis (else a ones column)
    /// for the differences of covariate `m`.
    pub fn uses_factor(self, m: usize, w: usize) -> bool {
        match self {
            AdaptivityMode::None => false,
            AdaptivityMode::Full => true,
            AdaptivityMode::VaryWithOthers => m != w,
            AdaptivityMode::VaryAlongSelf => m == w,
        }
    }
}

impl std::str::FromStr for AdaptivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "standard" => Ok(Self::None),
            "full" => Ok(Self::Full),
            "vary_with_others" | "ii" | "s2" => Ok(Self::VaryWithOthers),
            "vary_along_self" | "iii" | "s3" => Ok(Self::VaryAlongSelf),
            other => Err(Error::InvalidPenalty(format!("unknown adaptivity mode '{other}'"))),
        }
    }
}

/// Per-dimension bases, adaptivity modes and Ψ dimensions `p[m][w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptivePenaltySpec {
    pub dims: Vec<BasisSpec>,
    pub modes: Vec<AdaptivityMode>,
    /// `p[m][w]`: columns of the Ψ basis smoothing the parameters of
    /// covariate `m`'s differences along axis `w`.
    pub p: Vec<Vec<usize>>,
    pub psi_degree: usize,
}

impl AdaptivePenaltySpec {
    /// Same mode and `p` for every dimension.
    pub fn uniform(dims: Vec<BasisSpec>, mode: AdaptivityMode, p: usize) -> Self {
        let k = dims.len();
        Self {
            dims,
            modes: vec![mode; k],
            p: vec![vec![p; k]; k],
            psi_degree: 3,
        }
    }

    /// All-`None` spec: the standard anisotropic penalty.
    pub fn standard(dims: Vec<BasisSpec>) -> Self {
        Self::uniform(dims, AdaptivityMode::None, 1)
    }

    pub fn with_psi_degree(mut self, degree: usize) -> Self {
        self.psi_degree = degree;
        self
    }

    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    /// Number of rows of the Ψ factor for covariate `m` along axis `w`.
    fn factor_rows(&self, m: usize, w: usize) -> usize {
        if m == w {
            self.dims[m].d - self.dims[m].q
        } else {
            self.dims[w].d
        }
    }

    /// Shape of the array of raw smoothing parameters for covariate `m`.
    pub fn lambda_extents(&self, m: usize) -> Vec<usize> {
        (0..self.n_dims()).map(|w| self.factor_rows(m, w)).collect()
    }

    /// Number of penalty components attached to covariate `m`.
    pub fn n_components_for(&self, m: usize) -> usize {
        (0..self.n_dims())
            .map(|w| if self.modes[m].uses_factor(m, w) { self.p[m][w] } else { 1 })
            .product()
    }

    pub fn n_components(&self) -> usize {
        (0..self.n_dims()).map(|m| self.n_components_for(m)).sum()
    }

    pub fn n_coefficients(&self) -> usize {
        self.dims.iter().map(|s| s.d).product()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dims.len();
        if !(1..=3).contains(&k) {
            return Err(Error::InvalidPenalty(format!("{k} dimensions; 1 to 3 supported")));
        }
        if self.modes.len() != k {
            return Err(Error::InvalidPenalty(format!(
                "{} adaptivity modes for {k} dimensions",
                self.modes.len()
            )));
        }
        if self.p.len() != k || self.p.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidPenalty(format!("p must be a {k}x{k} table")));
        }
        for s in &self.dims {
            s.validate()?;
        }
        for m in 0..k {
            for w in 0..k {
                let p = self.p[m][w];
                if p == 0 {
                    return Err(Error::InvalidPenalty(format!("p[{m}][{w}] must be positive")));
                }
                if self.modes[m].uses_factor(m, w) {
                    check_psi_dims(self.factor_rows(m, w), p, self.psi_degree)?;
                }
            }
            let raw: usize = self.lambda_extents(m).iter().product();
            let reduced = self.n_components_for(m);
            if self.modes[m] == AdaptivityMode::Full && reduced >= raw {
                return Err(Error::InvalidPenalty(format!(
                    "dimension {}: {reduced} smoothing parameters do not reduce the {raw} coefficient differences",
                    m + 1
                )));
            }
            if reduced > raw {
                return Err(Error::InvalidPenalty(format!(
                    "dimension {}: {reduced} smoothing parameters exceed the {raw} coefficient differences",
                    m + 1
                )));
            }
        }
        Ok(())
    }
}

fn check_psi_dims(n_rows: usize, p: usize, psi_degree: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidPenalty("Ψ basis needs at least one column".into()));
    }
    if p > n_rows {
        return Err(Error::InvalidPenalty(format!(
            "Ψ basis with {p} columns exceeds the {n_rows} smoothing parameters it smooths"
        )));
    }
    if p > 1 && p <= psi_degree {
        return Err(Error::InvalidPenalty(format!(
            "Ψ basis with {p} columns needs more columns than its degree {psi_degree}"
        )));
    }
    Ok(())
}

/// B-spline basis over the index domain `1..=n_rows`; `p = 1` gives a ones column.
pub fn psi_matrix(n_rows: usize, p: usize, psi_degree: usize) -> Result<Array2<f64>> {
    check_psi_dims(n_rows, p, psi_degree)?;
    if p == 1 {
        return Ok(Array2::ones((n_rows, 1)));
    }
    let spec = BasisSpec::new(1.0, n_rows as f64, p, psi_degree, 1)?;
    let idx: Vec<f64> = (1..=n_rows).map(|i| i as f64).collect();
    eval_basis(&idx, &spec)
}

/// One summand `L_mᵀ diag(ψ) L_m` of an adaptive penalty.
#[derive(Debug, Clone)]
pub struct PenaltyComponent {
    pub matrix: Array2<f64>,
    /// Zero-based covariate whose differences are penalised.
    pub dimension: usize,
    /// Position within that covariate's Ψ expansion.
    pub index: usize,
}

/// Sparse `L_m = I ⊗ … ⊗ D_m ⊗ … ⊗ I`, stored row by row.
#[derive(Debug, Clone)]
pub struct DifferenceOperator {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl DifferenceOperator {
    /// Order-`q_m` differences along axis `m` of a coefficient array with extents `d`.
    pub fn new(d: &[usize], m: usize, q: usize) -> Result<Self> {
        let dm = diff_matrix(d[m], q)?;
        let mut row_extents = d.to_vec();
        row_extents[m] = d[m] - q;
        let n_rows: usize = row_extents.iter().product();
        let n_cols: usize = d.iter().product();
        let stride: usize = d[..m].iter().product();
        let mut rows = Vec::with_capacity(n_rows);
        let mut multi = vec![0usize; d.len()];
        for _ in 0..n_rows {
            // column index of the multi-index with axis m set to 0
            let mut base = 0;
            let mut s = 1;
            for (w, &i) in multi.iter().enumerate() {
                if w != m {
                    base += i * s;
                }
                s *= d[w];
            }
            let k = multi[m];
            let entries = (0..=q)
                .map(|t| (base + (k + t) * stride, dm[[k, k + t]]))
                .collect();
            rows.push(entries);
            for (w, idx) in multi.iter_mut().enumerate() {
                *idx += 1;
                if *idx < row_extents[w] {
                    break;
                }
                *idx = 0;
            }
        }
        Ok(Self { n_cols, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows(), self.n_cols));
        for (r, entries) in self.rows.iter().enumerate() {
            for &(c, v) in entries {
                out[[r, c]] = v;
            }
        }
        out
    }

    pub fn apply(&self, theta: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter(
            self.rows
                .iter()
                .map(|e| e.iter().map(|&(c, v)| v * theta[c]).sum::<f64>()),
        )
    }

    /// `Lᵀ diag(w) L`.
    pub fn weighted_gram(&self, weights: ArrayView1<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_cols, self.n_cols));
        self.add_weighted_gram(weights, &mut out);
        out
    }

    pub fn add_weighted_gram(&self, weights: ArrayView1<'_, f64>, out: &mut Array2<f64>) {
        for (entries, &w) in self.rows.iter().zip(weights.iter()) {
            if w == 0.0 {
                continue;
            }
            for &(a, va) in entries {
                for &(b, vb) in entries {
                    out[[a, b]] += w * va * vb;
                }
            }
        }
    }

    /// `diag(L M Lᵀ)` for a dense square `M`.
    pub fn sandwich_diag(&self, m: &Array2<f64>) -> Array1<f64> {
        Array1::from_iter(self.rows.iter().map(|entries| {
            let mut acc = 0.0;
            for &(a, va) in entries {
                for &(b, vb) in entries {
                    acc += va * vb * m[[a, b]];
                }
            }
            acc
        }))
    }
}

/// The differences of one covariate together with the Ψ basis that
/// smooths their smoothing parameters.
#[derive(Debug, Clone)]
pub struct DirectionalPenalty {
    pub dimension: usize,
    pub diff: DifferenceOperator,
    /// `n_differences × n_components`; column `j` is the weight vector of component `j`.
    pub psi: Array2<f64>,
}

impl DirectionalPenalty {
    pub fn n_components(&self) -> usize {
        self.psi.ncols()
    }

    pub fn component(&self, j: usize) -> Array2<f64> {
        self.diff.weighted_gram(self.psi.column(j))
    }
}

/// Adaptive (or standard) penalty of a 1-3 dimensional tensor product,
/// kept in factored form.
#[derive(Debug, Clone)]
pub struct AdaptivePenalty {
    pub spec: AdaptivePenaltySpec,
    pub directions: Vec<DirectionalPenalty>,
}

impl AdaptivePenalty {
    pub fn new(spec: &AdaptivePenaltySpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.n_dims();
        let d: Vec<usize> = spec.dims.iter().map(|s| s.d).collect();
        let mut directions = Vec::with_capacity(k);
        for m in 0..k {
            let factors = (0..k)
                .map(|w| {
                    let rows = spec.factor_rows(m, w);
                    if spec.modes[m].uses_factor(m, w) {
                        psi_matrix(rows, spec.p[m][w], spec.psi_degree)
                    } else {
                        Ok(Array2::ones((rows, 1)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            directions.push(DirectionalPenalty {
                dimension: m,
                diff: DifferenceOperator::new(&d, m, spec.dims[m].q)?,
                psi: kron_all(&factors),
            });
        }
        Ok(Self {
            spec: spec.clone(),
            directions,
        })
    }

    pub fn n_components(&self) -> usize {
        self.directions.iter().map(|d| d.n_components()).sum()
    }

    pub fn n_coefficients(&self) -> usize {
        self.spec.n_coefficients()
    }

    /// `(dimension, index)` of every component, in global order.
    pub fn component_tags(&self) -> Vec<(usize, usize)> {
        self.directions
            .iter()
            .flat_map(|dir| (0..dir.n_components()).map(move |j| (dir.dimension, j)))
            .collect()
    }

    pub fn components(&self) -> Vec<PenaltyComponent> {
        self.directions
            .iter()
            .flat_map(|dir| {
                (0..dir.n_components()).map(move |j| PenaltyComponent {
                    matrix: dir.component(j),
                    dimension: dir.dimension,
                    index: j,
                })
            })
            .collect()
    }

    /// `Σ_l ξ_l P_l` for weights in global component order.
    pub fn penalty(&self, xi: &[f64]) -> Result<Array2<f64>> {
        if xi.len() != self.n_components() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                xi.len(),
                self.n_components()
            )));
        }
        let c = self.n_coefficients();
        let mut out = Array2::zeros((c, c));
        let mut offset = 0;
        for dir in &self.directions {
            let nc = dir.n_components();
            let w = Array1::from(xi[offset..offset + nc].to_vec());
            let lambda = dir.psi.dot(&w);
            dir.diff.add_weighted_gram(lambda.view(), &mut out);
            offset += nc;
        }
        Ok(out)
    }
}

fn check_positive(lambdas: &[f64]) -> Result<()> {
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidPenalty(format!(
            "smoothing parameter {l} must be positive"
        )));
    }
    Ok(())
}

fn directional_dense(specs: &[BasisSpec], m: usize) -> Result<Array2<f64>> {
    let factors = specs
        .iter()
        .enumerate()
        .map(|(w, s)| {
            if w == m {
                diff_matrix(s.d, s.q)
            } else {
                Ok(Array2::eye(s.d))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(kron_all(&factors))
}

/// `Σ_m λ_m (I ⊗ … ⊗ D_mᵀD_m ⊗ … ⊗ I)`.
pub fn standard_penalty(lambdas: &[f64], specs: &[BasisSpec]) -> Result<Array2<f64>> {
    if lambdas.len() != specs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} smoothing parameters for {} dimensions",
            lambdas.len(),
            specs.len()
        )));
    }
    check_positive(lambdas)?;
    let mut out: Option<Array2<f64>> = None;
    for (m, &lambda) in lambdas.iter().enumerate() {
        specs[m].validate()?;
        let factors = specs
            .iter()
            .enumerate()
            .map(|(w, s)| {
                if w == m {
                    let d = diff_matrix(s.d, s.q)?;
                    Ok(d.t().dot(&d))
                } else {
                    Ok(Array2::eye(s.d))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let term = kron_all(&factors) * lambda;
        out = Some(match out {
            Some(acc) => acc + term,
            None => term,
        });
    }
    out.ok_or_else(|| Error::InvalidPenalty("no dimensions".into()))
}

pub fn standard_penalty_1d(lambda: f64, spec: &BasisSpec) -> Result<Array2<f64>> {
    standard_penalty(&[lambda], std::slice::from_ref(spec))
}

pub fn standard_penalty_2d(
    lambda: f64,
    lambda_tilde: f64,
    specs: &[BasisSpec; 2],
) -> Result<Array2<f64>> {
    standard_penalty(&[lambda, lambda_tilde], specs)
}

pub fn standard_penalty_3d(lambdas: [f64; 3], specs: &[BasisSpec; 3]) -> Result<Array2<f64>> {
    standard_penalty(&lambdas, specs)
}

/// Components of the Ψ-reduced adaptive penalty for any supported dimension.
pub fn adaptive_components(spec: &AdaptivePenaltySpec) -> Result<Vec<PenaltyComponent>> {
    Ok(AdaptivePenalty::new(spec)?.components())
}

pub fn adaptive_components_1d(spec: &BasisSpec, p: usize) -> Result<Vec<PenaltyComponent>> {
    let n_diff = spec.d.saturating_sub(spec.q);
    if p == 0 || p > n_diff {
        return Err(Error::InvalidPenalty(format!(
            "p = {p} outside 1..={n_diff}"
        )));
    }
    spec.validate()?;
    // cubic unless p is too small to carry it
    let psi_degree = if p > 1 { 3.min(p - 1) } else { 3 };
    let psi = psi_matrix(n_diff, p, psi_degree)?;
    let diff = DifferenceOperator::new(&[spec.d], 0, spec.q)?;
    Ok((0..p)
        .map(|j| PenaltyComponent {
            matrix: diff.weighted_gram(psi.column(j)),
            dimension: 0,
            index: j,
        })
        .collect())
}

fn expect_dims(spec: &AdaptivePenaltySpec, k: usize) -> Result<()> {
    if spec.n_dims() != k {
        return Err(Error::InvalidPenalty(format!(
            "expected a {k}-dimensional spec, got {}",
            spec.n_dims()
        )));
    }
    Ok(())
}

pub fn adaptive_components_2d(spec: &AdaptivePenaltySpec) -> Result<Vec<PenaltyComponent>> {
    expect_dims(spec, 2)?;
    adaptive_components(spec)
}

pub fn adaptive_components_3d(spec: &AdaptivePenaltySpec) -> Result<Vec<PenaltyComponent>> {
    expect_dims(spec, 3)?;
    adaptive_components(spec)
}

/// Unreduced adaptive penalty `Σ_m L_mᵀ diag(λ_m) L_m` built from dense
/// Kronecker products. Serves as the reference for the reduced form.
pub fn adaptive_penalty_direct(lambdas: &[Vec<f64>], specs: &[BasisSpec]) -> Result<Array2<f64>> {
    if lambdas.len() != specs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} smoothing-parameter vectors for {} dimensions",
            lambdas.len(),
            specs.len()
        )));
    }
    let c: usize = specs.iter().map(|s| s.d).product();
    let mut out = Array2::zeros((c, c));
    for (m, lambda) in lambdas.iter().enumerate() {
        let l = directional_dense(specs, m)?;
        if lambda.len() != l.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "dimension {}: {} smoothing parameters for {} differences",
                m + 1,
                lambda.len(),
                l.nrows()
            )));
        }
        if let Some(v) = lambda.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidPenalty(format!(
                "smoothing parameter {v} must be non-negative"
            )));
        }
        let weighted = Array2::from_shape_fn(l.dim(), |(i, j)| lambda[i] * l[[i, j]]);
        out += &l.t().dot(&weighted);
    }
    Ok(out)
}

pub fn adaptive_penalty_direct_2d(
    lambda: &[f64],
    lambda_tilde: &[f64],
    specs: &[BasisSpec; 2],
) -> Result<Array2<f64>> {
    adaptive_penalty_direct(&[lambda.to_vec(), lambda_tilde.to_vec()], specs)
}

pub fn adaptive_penalty_direct_3d(
    lambdas: [&[f64]; 3],
    specs: &[BasisSpec; 3],
) -> Result<Array2<f64>> {
    adaptive_penalty_direct(
        &[lambdas[0].to_vec(), lambdas[1].to_vec(), lambdas[2].to_vec()],
        specs,
    )
}
