//! Mixed-model reparameterization of a tensor-product P-spline.
//!
//! With `DᵀD = U Σ Uᵀ` for every marginal, the orthogonal matrix
//! `T = [T₀ | T₊]` built from Kronecker products of the null-space and
//! range-space eigenvectors splits `θ = T₀β + T₊α`. The penalty only sees
//! `α`, so `β` are fixed effects and `α` random effects with precision
//! `Σ_l σ_l⁻² 𝓖_l`, `𝓖_l = T₊ᵀ P_l T₊`.
//!
//! `T₊` columns come in blocks indexed by the set of covariates that take
//! their range-space factor: all singletons first, then pairs, then the
//! triple, each group in lexicographic order.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};

use crate::basis::{box_product, diff_matrix, kron_all, BasisSpec};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::penalty::{AdaptivePenalty, AdaptivePenaltySpec, PenaltyComponent};
use crate::sop::{PenaltyRows, PrecisionComponents};

/// Eigenvalues below this fraction of the largest count as zero.
pub const NULL_EIGEN_TOL: f64 = 1e-10;

/// Eigen-decomposition of `DᵀD` split into null and range parts.
#[derive(Debug, Clone)]
pub struct MarginalEvd {
    pub u_plus: Array2<f64>,
    pub u_zero: Array2<f64>,
    pub sigma_plus: Array1<f64>,
}

/// Flip each column so that its first clearly nonzero entry is positive.
fn pin_signs(u: &mut Array2<f64>) {
    for mut col in u.columns_mut() {
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-8 * scale).copied() {
            if first < 0.0 {
                col.mapv_inplace(|v| -v);
            }
        }
    }
}

pub fn marginal_evd(spec: &BasisSpec) -> Result<MarginalEvd> {
    spec.validate()?;
    let d = diff_matrix(spec.d, spec.q)?;
    let dtd = d.t().dot(&d);
    let (vals, mut vecs) = sym_eigen(dtd.view())?;
    pin_signs(&mut vecs);
    let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let null: Vec<usize> = (0..vals.len())
        .filter(|&i| vals[i] < NULL_EIGEN_TOL * max)
        .collect();
    if null.len() != spec.q {
        return Err(Error::NullSpace {
            q: spec.q,
            found: null.len(),
        });
    }
    let range: Vec<usize> = (0..vals.len()).filter(|i| !null.contains(i)).collect();
    Ok(MarginalEvd {
        u_zero: vecs.select(Axis(1), &null),
        u_plus: vecs.select(Axis(1), &range),
        sigma_plus: vals.select(Axis(0), &range),
    })
}

/// Subsets of `0..k` that take the range-space factor, in block order.
pub fn block_layout(k: usize) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << k))
        .map(|mask| (0..k).filter(|m| mask & (1 << m) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
}

fn factors_for<'a>(evds: &'a [MarginalEvd], plus: &[usize]) -> Vec<&'a Array2<f64>> {
    evds.iter()
        .enumerate()
        .map(|(m, e)| if plus.contains(&m) { &e.u_plus } else { &e.u_zero })
        .collect()
}

/// `(T₀, T₊)` for one to three marginals.
pub fn build_transforms(evds: &[MarginalEvd]) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(1..=3).contains(&evds.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{} marginals; 1 to 3 supported",
            evds.len()
        )));
    }
    let owned = |fs: Vec<&Array2<f64>>| fs.into_iter().cloned().collect::<Vec<_>>();
    let t_zero = kron_all(&owned(factors_for(evds, &[])));
    let blocks: Vec<Array2<f64>> = block_layout(evds.len())
        .iter()
        .map(|s| kron_all(&owned(factors_for(evds, s))))
        .collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let t_plus = concatenate(Axis(1), &views)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok((t_zero, t_plus))
}

fn box_all(factors: &[Array2<f64>]) -> Result<Array2<f64>> {
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        acc = box_product(f.view(), acc.view())?;
    }
    Ok(acc)
}

/// `X = B T₀` and `Z = B T₊`, formed block by block from the transformed
/// marginals `B_m U_m·` without materialising `B`.
pub fn build_design(
    margins: &[Array2<f64>],
    evds: &[MarginalEvd],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if margins.len() != evds.len() || margins.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} marginal designs for {} marginal decompositions",
            margins.len(),
            evds.len()
        )));
    }
    for (b, e) in margins.iter().zip(evds) {
        if b.ncols() != e.u_zero.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "marginal design has {} columns, basis has {}",
                b.ncols(),
                e.u_zero.nrows()
            )));
        }
    }
    let transformed = |plus: &[usize]| -> Vec<Array2<f64>> {
        margins
            .iter()
            .zip(factors_for(evds, plus))
            .map(|(b, u)| b.dot(u))
            .collect()
    };
    let x = box_all(&transformed(&[]))?;
    let blocks = block_layout(margins.len())
        .iter()
        .map(|s| box_all(&transformed(s)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let z = concatenate(Axis(1), &views).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok((x, z))
}

/// Dense `𝓖_l = T₊ᵀ P_l T₊` for every component.
pub fn build_g_components(
    t_plus: &Array2<f64>,
    components: &[PenaltyComponent],
) -> Result<Vec<Array2<f64>>> {
    components
        .iter()
        .map(|c| {
            if c.matrix.nrows() != t_plus.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "penalty component of size {} for a transform with {} rows",
                    c.matrix.nrows(),
                    t_plus.nrows()
                )));
            }
            let mut g = t_plus.t().dot(&c.matrix.dot(t_plus));
            crate::linalg::symmetrize(&mut g);
            Ok(g)
        })
        .collect()
}

/// Precision components kept as `T₊ᵀ L_mᵀ diag(ψ) L_m T₊` without forming
/// any `𝓖_l` explicitly. Memory stays at a few `c × c` matrices however many
/// components the penalty has.
#[derive(Debug, Clone)]
pub struct FactoredComponents {
    pub t_plus: Array2<f64>,
    pub penalty: AdaptivePenalty,
}

impl FactoredComponents {
    pub fn new(t_plus: Array2<f64>, penalty: AdaptivePenalty) -> Result<Self> {
        if t_plus.nrows() != penalty.n_coefficients() {
            return Err(Error::DimensionMismatch(format!(
                "transform has {} rows, penalty acts on {} coefficients",
                t_plus.nrows(),
                penalty.n_coefficients()
            )));
        }
        Ok(Self { t_plus, penalty })
    }

    /// `𝓖_l` for one component, mainly for inspection.
    pub fn dense(&self, l: usize) -> Array2<f64> {
        let (dim, j) = self.penalty.component_tags()[l];
        let p = self.penalty.directions[dim].component(j);
        self.t_plus.t().dot(&p.dot(&self.t_plus))
    }
}

impl PrecisionComponents for FactoredComponents {
    fn n_random(&self) -> usize {
        self.t_plus.ncols()
    }

    fn n_components(&self) -> usize {
        self.penalty.n_components()
    }

    fn weighted_sum(&self, w: &[f64]) -> Array2<f64> {
        let p = self
            .penalty
            .penalty(w)
            .expect("weight count checked by the caller");
        let mut g = self.t_plus.t().dot(&p.dot(&self.t_plus));
        crate::linalg::symmetrize(&mut g);
        g
    }

    fn quadratic_forms(&self, alpha: ArrayView1<'_, f64>) -> Vec<f64> {
        let theta = self.t_plus.dot(&alpha);
        self.penalty
            .directions
            .iter()
            .flat_map(|dir| {
                let r = dir.diff.apply(theta.view()).mapv(|v| v * v);
                dir.psi.t().dot(&r).to_vec()
            })
            .collect()
    }

    fn penalty_rows(&self) -> Result<PenaltyRows> {
        let total: usize = self.penalty.directions.iter().map(|d| d.diff.n_rows()).sum();
        let mut m = Array2::zeros((total, self.t_plus.ncols()));
        let mut psi = Array2::zeros((total, self.n_components()));
        let (mut r0, mut c0) = (0, 0);
        for dir in &self.penalty.directions {
            for (r, entries) in dir.diff.rows().iter().enumerate() {
                let mut row = m.row_mut(r0 + r);
                for &(c, w) in entries {
                    row.scaled_add(w, &self.t_plus.row(c));
                }
            }
            let (nr, nc) = dir.psi.dim();
            psi.slice_mut(s![r0..r0 + nr, c0..c0 + nc]).assign(&dir.psi);
            r0 += nr;
            c0 += nc;
        }
        PenaltyRows::new(m, psi)
    }

    fn traces(&self, m: &Array2<f64>) -> Vec<f64> {
        let n = self.t_plus.dot(&m.dot(&self.t_plus.t()));
        self.penalty
            .directions
            .iter()
            .flat_map(|dir| {
                let s = dir.diff.sandwich_diag(&n);
                dir.psi.t().dot(&s).to_vec()
            })
            .collect()
    }
}

/// Everything the fitter needs for scattered data.
#[derive(Debug, Clone)]
pub struct MixedModelParts {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    pub t_zero: Array2<f64>,
    pub t_plus: Array2<f64>,
    /// One precision component per penalty component, in the order of
    /// `AdaptivePenalty::component_tags`.
    pub components: FactoredComponents,
}

impl MixedModelParts {
    pub fn new(margins: &[Array2<f64>], spec: &AdaptivePenaltySpec) -> Result<Self> {
        let evds = spec
            .dims
            .iter()
            .map(marginal_evd)
            .collect::<Result<Vec<_>>>()?;
        let (t_zero, t_plus) = build_transforms(&evds)?;
        let (x, z) = build_design(margins, &evds)?;
        let components = FactoredComponents::new(t_plus.clone(), AdaptivePenalty::new(spec)?)?;
        Ok(Self {
            x,
            z,
            t_zero,
            t_plus,
            components,
        })
    }
}
