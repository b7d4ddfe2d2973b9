//! Thin bridge between `ndarray` storage and `faer` factorizations.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

pub(crate) fn to_faer(a: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_faer(m: faer::MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix.
pub struct Cholesky {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl Cholesky {
    pub fn new(a: ArrayView2<'_, f64>, what: &str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!("{what} is not square")));
        }
        let m = to_faer(a);
        let llt = m
            .llt(Side::Lower)
            .map_err(|_| Error::NotPositiveDefinite(what.to_string()))?;
        Ok(Self { llt })
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.llt.solve_in_place(&mut rhs);
        Array1::from_shape_fn(b.len(), |i| rhs[(i, 0)])
    }

    pub fn solve_mat(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut rhs = to_faer(b);
        self.llt.solve_in_place(&mut rhs);
        from_faer(rhs.as_ref())
    }

    pub fn inverse(&self) -> Array2<f64> {
        let inv = self.llt.inverse();
        let mut out = from_faer(inv.as_ref());
        symmetrize(&mut out);
        out
    }

    /// log |A|
    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    }
}

/// Upper-triangular `U` with `UᵀU = AᵀA`, from a Householder QR of `A` with
/// its rows sorted by decreasing norm. Sorting keeps rows whose scales differ
/// by many orders of magnitude from swamping each other.
pub struct TriFactor {
    u: Mat<f64>,
}

impl TriFactor {
    pub fn from_rows(a: ArrayView2<'_, f64>, what: &str) -> Result<Self> {
        let p = a.ncols();
        let norms: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
        let mut order: Vec<usize> = (0..a.nrows()).filter(|&i| norms[i] > 0.0).collect();
        order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
        let m = order.len().max(p);
        let sorted = Mat::from_fn(m, p, |i, j| order.get(i).map_or(0.0, |&r| a[[r, j]]));
        let qr = sorted.qr();
        let u = qr.thin_R().to_owned();
        if (0..p).any(|i| !(u[(i, i)] != 0.0) || !u[(i, i)].is_finite()) {
            return Err(Error::NotPositiveDefinite(what.to_string()));
        }
        Ok(Self { u })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `|u_ii|`
    pub fn pivot(&self, i: usize) -> f64 {
        self.u[(i, i)].abs()
    }

    /// `(UᵀU)⁻¹ b`
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.u.transpose().solve_lower_triangular_in_place(&mut rhs);
        self.u.solve_upper_triangular_in_place(&mut rhs);
        Array1::from_shape_fn(b.len(), |i| rhs[(i, 0)])
    }

    /// `B U⁻¹`, so that the squared row norms are `b_jᵀ (UᵀU)⁻¹ b_j`.
    pub fn right_solve(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut rhs = to_faer(b.t());
        self.u.transpose().solve_lower_triangular_in_place(&mut rhs);
        from_faer(rhs.transpose())
    }

    /// `(UᵀU)⁻¹`
    pub fn inverse(&self) -> Array2<f64> {
        let p = self.dim();
        let mut ui = Mat::<f64>::identity(p, p);
        self.u.solve_upper_triangular_in_place(&mut ui);
        let inv = &ui * ui.transpose();
        let mut out = from_faer(inv.as_ref());
        symmetrize(&mut out);
        out
    }

    /// log |UᵀU|
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.pivot(i).ln()).sum::<f64>() * 2.0
    }
}

/// A matrix `R` with `RᵀR = A` for symmetric positive semi-definite `A`.
/// Directions with non-positive eigenvalues are dropped.
pub fn psd_root(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (vals, vecs) = sym_eigen(a)?;
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
    Ok(Array2::from_shape_fn((keep.len(), a.ncols()), |(r, j)| {
        vals[keep[r]].sqrt() * vecs[[j, keep[r]]]
    }))
}

/// Symmetric eigen-decomposition with eigenvalues in ascending order.
pub fn sym_eigen(a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let m = to_faer(a);
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("eigen-decomposition failed: {e:?}")))?;
    let n = a.nrows();
    let s = evd.S();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let values = Array1::from_shape_fn(n, |k| s[order[k]]);
    let vectors = Array2::from_shape_fn((n, n), |(i, k)| u[(i, order[k])]);
    Ok((values, vectors))
}

pub(crate) fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}
