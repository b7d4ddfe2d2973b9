//! Equally spaced B-spline bases, difference operators and the row-wise /
//! full Kronecker products used to build tensor-product designs.
//!
//! Coefficient vectors of a tensor-product basis are ordered with the first
//! covariate's index varying fastest, so the design for covariates
//! `(x1, x2, x3)` is `B3 □ B2 □ B1`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `n × m` B-spline design; one observation per row.
pub type DesignMatrix = Array2<f64>;

/// Relative slack allowed at the domain boundaries before a point counts
/// as extrapolation.
const DOMAIN_SLACK: f64 = 1e-10;

/// Marginal B-spline configuration for one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub x_min: f64,
    pub x_max: f64,
    /// Number of basis functions.
    pub d: usize,
    pub degree: usize,
    /// Order of the difference penalty.
    pub q: usize,
}

impl BasisSpec {
    pub fn new(x_min: f64, x_max: f64, d: usize, degree: usize, q: usize) -> Result<Self> {
        let spec = Self {
            x_min,
            x_max,
            d,
            degree,
            q,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Cubic basis with the given dimension and penalty order.
    pub fn cubic(x_min: f64, x_max: f64, d: usize, q: usize) -> Result<Self> {
        Self::new(x_min, x_max, d, 3, q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite()) || self.x_min >= self.x_max {
            return Err(Error::InvalidBasis(format!(
                "domain [{}, {}] must be finite with x_min < x_max",
                self.x_min, self.x_max
            )));
        }
        if self.d <= self.degree {
            return Err(Error::InvalidBasis(format!(
                "basis dimension {} must exceed the degree {}",
                self.d, self.degree
            )));
        }
        if self.q == 0 || self.q >= self.d {
            return Err(Error::InvalidBasis(format!(
                "penalty order {} must satisfy 1 <= q < d = {}",
                self.q, self.d
            )));
        }
        Ok(())
    }

    /// Knot spacing.
    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.d - self.degree) as f64
    }

    /// Number of order-`q` coefficient differences.
    pub fn n_differences(&self) -> usize {
        self.d - self.q
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = DOMAIN_SLACK * (self.x_max - self.x_min);
        x >= self.x_min - slack && x <= self.x_max + slack
    }
}

/// Equally spaced knot sequence, extended `degree` spacings past each boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    pub knots: Vec<f64>,
}

impl KnotVector {
    pub fn spacing(&self) -> f64 {
        self.knots[1] - self.knots[0]
    }
}

pub fn make_knots(spec: &BasisSpec) -> Result<KnotVector> {
    if spec.d <= spec.degree {
        return Err(Error::InvalidBasis(format!(
            "basis dimension {} must exceed the degree {}",
            spec.d, spec.degree
        )));
    }
    if !(spec.x_min < spec.x_max) {
        return Err(Error::InvalidBasis("x_min must be below x_max".into()));
    }
    let h = spec.spacing();
    let start = spec.x_min - spec.degree as f64 * h;
    let knots = (0..spec.d + spec.degree + 1)
        .map(|k| start + k as f64 * h)
        .collect();
    Ok(KnotVector { knots })
}

/// Evaluates the B-spline basis at each `x`; rows sum to one.
pub fn eval_basis(x: &[f64], spec: &BasisSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    let knots = make_knots(spec)?.knots;
    let deg = spec.degree;
    let h = spec.spacing();
    let n_intervals = spec.d - deg;
    let mut out = Array2::zeros((x.len(), spec.d));
    let mut vals = vec![0.0; deg + 1];
    let mut left = vec![0.0; deg + 1];
    let mut right = vec![0.0; deg + 1];
    for (row, &xi) in x.iter().enumerate() {
        if !xi.is_finite() || !spec.contains(xi) {
            return Err(Error::OutOfDomain {
                index: row,
                value: xi,
                min: spec.x_min,
                max: spec.x_max,
            });
        }
        let xi = xi.clamp(spec.x_min, spec.x_max);
        let j = (((xi - spec.x_min) / h).floor() as usize).min(n_intervals - 1);
        // de Boor / Cox recurrence on the knot span [t_{j+deg}, t_{j+deg+1}]
        let span = j + deg;
        vals[0] = 1.0;
        for r in 1..=deg {
            left[r] = xi - knots[span + 1 - r];
            right[r] = knots[span + r] - xi;
            let mut saved = 0.0;
            for k in 0..r {
                let temp = vals[k] / (right[k + 1] + left[r - k]);
                vals[k] = saved + right[k + 1] * temp;
                saved = left[r - k] * temp;
            }
            vals[r] = saved;
        }
        for (k, v) in vals.iter().enumerate() {
            out[[row, j + k]] = *v;
        }
    }
    Ok(out)
}

/// `(d - q) × d` matrix of order-`q` forward differences.
pub fn diff_matrix(d: usize, q: usize) -> Result<Array2<f64>> {
    if q >= d {
        return Err(Error::InvalidBasis(format!(
            "difference order {q} must be below the dimension {d}"
        )));
    }
    let mut m = Array2::<f64>::eye(d);
    for _ in 0..q {
        let rows = m.nrows() - 1;
        let next = Array2::from_shape_fn((rows, d), |(i, j)| m[[i + 1, j]] - m[[i, j]]);
        m = next;
    }
    Ok(m)
}

/// Row-wise Kronecker (face-splitting) product: row `i` is `A[i] ⊗ B[i]`.
pub fn box_product(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "box product needs equal row counts, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let (na, nb) = (a.ncols(), b.ncols());
    let mut out = Array2::zeros((a.nrows(), na * nb));
    for i in 0..a.nrows() {
        for k in 0..na {
            let ak = a[[i, k]];
            if ak == 0.0 {
                continue;
            }
            for j in 0..nb {
                out[[i, k * nb + j]] = ak * b[[i, j]];
            }
        }
    }
    Ok(out)
}

/// Tensor-product design `B_K □ … □ B_1` for marginals listed as `[B_1, …, B_K]`.
pub fn tensor_design(margins: &[Array2<f64>]) -> Result<Array2<f64>> {
    let (first, rest) = margins
        .split_first()
        .ok_or_else(|| Error::DimensionMismatch("no marginal bases".into()))?;
    let mut acc = first.clone();
    for m in rest {
        acc = box_product(m.view(), acc.view())?;
    }
    Ok(acc)
}

/// Standard Kronecker product `A ⊗ B`.
pub fn kron(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == 0.0 {
                continue;
            }
            let mut block = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.zip_mut_with(&b, |o, &v| *o = aij * v);
        }
    }
    out
}

/// `M_K ⊗ … ⊗ M_1` for factors listed as `[M_1, …, M_K]`.
pub fn kron_all(factors: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = Array2::from_elem((1, 1), 1.0);
    for f in factors {
        acc = kron(f.view(), acc.view());
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn knots_cubic_unit_interval() {
        let spec = BasisSpec::new(0.0, 1.0, 5, 3, 2).unwrap();
        let k = make_knots(&spec).unwrap().knots;
        assert_eq!(k.len(), 9);
        for (i, v) in k.iter().enumerate() {
            assert_abs_diff_eq!(*v, -1.5 + 0.5 * i as f64, epsilon = 1e-15);
        }
    }

    #[test]
    fn knots_degree_zero_partition() {
        let spec = BasisSpec::new(0.0, 1.0, 4, 0, 1).unwrap();
        let k = make_knots(&spec).unwrap().knots;
        assert_eq!(k, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn knots_spacing_matches_rule() {
        let spec = BasisSpec::new(-5.0, 1.5, 12, 3, 2).unwrap();
        let kv = make_knots(&spec).unwrap();
        assert_abs_diff_eq!(kv.spacing(), 6.5 / 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(kv.knots[3], -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kv.knots[12], 1.5, epsilon = 1e-12);
        let grid: Vec<f64> = (0..=1000).map(|i| -5.0 + 6.5 * i as f64 / 1000.0).collect();
        let b = eval_basis(&grid, &spec).unwrap();
        for row in b.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degree_violations_rejected() {
        assert!(BasisSpec::new(0.0, 1.0, 3, 3, 1).is_err());
        let raw = BasisSpec {
            x_min: 0.0,
            x_max: 1.0,
            d: 3,
            degree: 3,
            q: 1,
        };
        assert!(make_knots(&raw).is_err());
        assert!(BasisSpec::new(0.0, 1.0, 5, 3, 5).is_err());
        assert!(BasisSpec::new(1.0, 1.0, 5, 3, 2).is_err());
    }

    #[test]
    fn degree_zero_indicator() {
        let spec = BasisSpec::new(0.0, 1.0, 4, 0, 1).unwrap();
        let b = eval_basis(&[0.3], &spec).unwrap();
        assert_eq!(b.row(0).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cubic_values_at_left_boundary() {
        let spec = BasisSpec::new(0.0, 1.0, 5, 3, 2).unwrap();
        let b = eval_basis(&[0.0], &spec).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 0.0, 0.0];
        for (v, e) in b.row(0).iter().zip(expected) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-14);
        }
        // right boundary mirrors the left one
        let b = eval_basis(&[1.0], &spec).unwrap();
        let expected = [0.0, 0.0, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
        for (v, e) in b.row(0).iter().zip(expected) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn out_of_domain_rejected() {
        let spec = BasisSpec::cubic(0.0, 1.0, 6, 2).unwrap();
        match eval_basis(&[0.5, 1.2], &spec) {
            Err(Error::OutOfDomain { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected out-of-domain error, got {other:?}"),
        }
        assert!(eval_basis(&[f64::NAN], &spec).is_err());
    }

    #[test]
    fn difference_matrices() {
        let d1 = diff_matrix(4, 1).unwrap();
        assert_eq!(
            d1,
            array![[-1.0, 1.0, 0.0, 0.0], [0.0, -1.0, 1.0, 0.0], [0.0, 0.0, -1.0, 1.0]]
        );
        let d2 = diff_matrix(4, 2).unwrap();
        assert_eq!(d2, array![[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]]);
        assert!(diff_matrix(4, 4).is_err());
    }

    #[test]
    fn differences_annihilate_low_order_polynomials() {
        for d in 3..10 {
            let ones = ndarray::Array1::<f64>::ones(d);
            let ramp = ndarray::Array1::from_shape_fn(d, |i| i as f64);
            let quad = ndarray::Array1::from_shape_fn(d, |i| (i * i) as f64);
            for q in 1..d {
                let dm = diff_matrix(d, q).unwrap();
                assert_eq!(dm.dim(), (d - q, d));
                assert!(dm.dot(&ones).iter().all(|v| v.abs() < 1e-12));
                if q >= 2 {
                    assert!(dm.dot(&ramp).iter().all(|v| v.abs() < 1e-12));
                }
                if q >= 3 {
                    assert!(dm.dot(&quad).iter().all(|v| v.abs() < 1e-9));
                }
            }
        }
    }

    #[test]
    fn box_product_definition() {
        let out = box_product(array![[1.0, 2.0]].view(), array![[3.0, 4.0]].view()).unwrap();
        assert_eq!(out, array![[3.0, 4.0, 6.0, 8.0]]);
        let sel = box_product(
            array![[0.0, 1.0]].view(),
            array![[5.0, 6.0, 7.0]].view(),
        )
        .unwrap();
        assert_eq!(sel, array![[0.0, 0.0, 0.0, 5.0, 6.0, 7.0]]);
        assert!(box_product(Array2::zeros((2, 2)).view(), Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn box_product_matches_hadamard_identity() {
        let a = array![[0.3, -1.2], [2.0, 0.5], [-0.7, 1.1]];
        let b = array![[1.0, 0.2, -0.4], [0.0, 3.0, 1.5], [2.2, -1.0, 0.6]];
        // (A ⊗ 1ᵀ_b) ⊙ (1ᵀ_a ⊗ B)
        let left = kron(a.view(), Array2::ones((1, 3)).view());
        let right = kron(Array2::ones((1, 2)).view(), b.view());
        let naive = &left * &right;
        let fast = box_product(a.view(), b.view()).unwrap();
        for (u, v) in naive.iter().zip(fast.iter()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-15);
        }
    }

    #[test]
    fn kron_basics() {
        let k = kron(Array2::eye(2).view(), array![[1.0, -1.0]].view());
        assert_eq!(k, array![[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]]);
        let a = Array2::from_shape_fn((2, 3), |(i, j)| (i + 2 * j) as f64 - 1.5);
        let b = Array2::from_shape_fn((4, 2), |(i, j)| (i * j) as f64 + 0.25);
        let c = Array2::from_shape_fn((3, 2), |(i, j)| (i as f64 - j as f64) * 0.7);
        let d = Array2::from_shape_fn((2, 3), |(i, j)| 1.0 / (1.0 + i as f64 + j as f64));
        assert_eq!(kron(a.view(), b.view()).dim(), (8, 6));
        let lhs = kron(a.view(), b.view()).dot(&kron(c.view(), d.view()));
        let rhs = kron(a.dot(&c).view(), b.dot(&d).view());
        for (u, v) in lhs.iter().zip(rhs.iter()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn tensor_design_column_ordering() {
        // B·vec(Θ) must equal Σ_j Σ_k θ_jk B1_j(x1) B2_k(x2)
        let s1 = BasisSpec::cubic(0.0, 1.0, 6, 2).unwrap();
        let s2 = BasisSpec::cubic(-1.0, 2.0, 5, 2).unwrap();
        let x1 = [0.1, 0.45, 0.8, 0.99];
        let x2 = [-0.7, 0.3, 1.9, 0.0];
        let b1 = eval_basis(&x1, &s1).unwrap();
        let b2 = eval_basis(&x2, &s2).unwrap();
        let b = tensor_design(&[b1.clone(), b2.clone()]).unwrap();
        let theta = Array2::from_shape_fn((6, 5), |(j, k)| ((j * 5 + k * 3) % 7) as f64 - 2.5);
        let vec_theta = ndarray::Array1::from_shape_fn(30, |idx| theta[[idx % 6, idx / 6]]);
        let fitted = b.dot(&vec_theta);
        for i in 0..4 {
            let mut direct = 0.0;
            for j in 0..6 {
                for k in 0..5 {
                    direct += theta[[j, k]] * b1[[i, j]] * b2[[i, k]];
                }
            }
            assert_abs_diff_eq!(fitted[i], direct, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rows_partition_unity_and_banded(
            x in proptest::collection::vec(0.0f64..=1.0, 1..40),
            d in 4usize..20,
            degree in 0usize..4,
        ) {
            prop_assume!(d > degree);
            let spec = BasisSpec::new(0.0, 1.0, d, degree, 1).unwrap();
            let b = eval_basis(&x, &spec).unwrap();
            for row in b.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().filter(|v| **v != 0.0).count() <= degree + 1);
                prop_assert!(row.iter().all(|v| *v >= -1e-15));
            }
        }
    }
}
