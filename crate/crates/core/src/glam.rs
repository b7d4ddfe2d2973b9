//! Array arithmetic for data on a complete grid.
//!
//! A tensor-product design on a grid is `B = B_K ⊗ … ⊗ B₁` (rows and columns
//! both with the first axis fastest). Products with `B`, `Bᵀ` and the
//! weighted cross-product `BᵀWB` are computed one axis at a time.

use ndarray::{Array1, Array2, ArrayView2};

use crate::basis::box_product;
use crate::error::{Error, Result};

/// Values on a grid of up to three axes, stored column-major (first axis
/// fastest), which matches `vec` of the array.
#[derive(Debug, Clone, PartialEq)]
pub struct GridArray {
    dims: Vec<usize>,
    values: Array1<f64>,
}

impl GridArray {
    pub fn new(dims: Vec<usize>, values: Array1<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::DimensionMismatch(format!(
                "grid arrays have 1 to 3 axes, got {}",
                dims.len()
            )));
        }
        let size: usize = dims.iter().product();
        if size != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "extents {dims:?} need {size} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let size: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut values = Vec::with_capacity(size);
        for _ in 0..size {
            values.push(f(&idx));
            for (i, n) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < *n {
                    break;
                }
                *i = 0;
            }
        }
        Self::new(dims, Array1::from(values))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Multiply along the first axis by `m`, then rotate that axis to the back.
pub fn rh_transform(m: ArrayView2<'_, f64>, a: &GridArray) -> Result<GridArray> {
    let n1 = a.dims[0];
    if m.ncols() != n1 {
        return Err(Error::DimensionMismatch(format!(
            "matrix with {} columns applied to an axis of extent {n1}",
            m.ncols()
        )));
    }
    let rest = a.len() / n1.max(1);
    // column-major n1 × rest is row-major rest × n1
    let at = a
        .values
        .view()
        .into_shape_with_order((rest, n1))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let prod = m.dot(&at.t());
    let mut dims: Vec<usize> = a.dims[1..].to_vec();
    dims.push(m.nrows());
    let values = Array1::from_iter(prod.iter().copied());
    GridArray::new(dims, values)
}

fn check_margins(margins: &[Array2<f64>], dims: &[usize], by_rows: bool) -> Result<()> {
    if margins.len() != dims.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} marginal matrices for a {}-axis array",
            margins.len(),
            dims.len()
        )));
    }
    for (m, (b, &n)) in margins.iter().zip(dims).enumerate() {
        let extent = if by_rows { b.nrows() } else { b.ncols() };
        if extent != n {
            return Err(Error::DimensionMismatch(format!(
                "marginal {} has extent {extent}, array axis has {n}",
                m + 1
            )));
        }
    }
    Ok(())
}

/// `B·vec(Θ)` reshaped onto the grid.
pub fn glam_fitted(margins: &[Array2<f64>], theta: &GridArray) -> Result<GridArray> {
    check_margins(margins, theta.dims(), false)?;
    margins
        .iter()
        .try_fold(theta.clone(), |acc, b| rh_transform(b.view(), &acc))
}

/// `Bᵀ·vec(V)` for values `V` on the grid, reshaped to coefficient extents.
pub fn glam_transpose(margins: &[Array2<f64>], v: &GridArray) -> Result<GridArray> {
    check_margins(margins, v.dims(), true)?;
    margins
        .iter()
        .try_fold(v.clone(), |acc, b| rh_transform(b.t(), &acc))
}

/// `Bᵀ diag(vec W) B` in the column order of `tensor_design`.
pub fn glam_weighted_inner(margins: &[Array2<f64>], w: &GridArray) -> Result<Array2<f64>> {
    check_margins(margins, w.dims(), true)?;
    let rowwise: Vec<Array2<f64>> = margins
        .iter()
        .map(|b| box_product(b.view(), b.view()).map(|g| g.reversed_axes()))
        .collect::<Result<_>>()?;
    // entry (j_1 + c_1 k_1, j_2 + c_2 k_2, ...) = Σ_x w Π B_m[x, k_m] B_m[x, j_m]
    let arr = rowwise
        .iter()
        .try_fold(w.clone(), |acc, g| rh_transform(g.view(), &acc))?;
    let c: Vec<usize> = margins.iter().map(|b| b.ncols()).collect();
    let total: usize = c.iter().product();
    let mut out = Array2::zeros((total, total));
    let vals = arr.values();
    let k = c.len();
    let mut strides = vec![1usize; k];
    for m in 1..k {
        strides[m] = strides[m - 1] * c[m - 1] * c[m - 1];
    }
    for r in 0..total {
        for s in 0..total {
            let (mut rr, mut ss, mut pos) = (r, s, 0usize);
            for m in 0..k {
                let (jm, km) = (rr % c[m], ss % c[m]);
                rr /= c[m];
                ss /= c[m];
                pos += (jm + c[m] * km) * strides[m];
            }
            out[[r, s]] = vals[pos];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{eval_basis, kron_all, BasisSpec};
    use crate::testutil::{max_abs_diff, random_matrix, rng, uniform_vec};

    fn random_grid(seed: u64, dims: Vec<usize>) -> GridArray {
        let mut r = rng(seed);
        let n = dims.iter().product();
        GridArray::new(dims, Array1::from(uniform_vec(&mut r, n, -1.0, 1.0))).unwrap()
    }

    #[test]
    fn identity_rotates_axes() {
        let a = random_grid(1, vec![2, 3, 4]);
        let once = rh_transform(Array2::eye(2).view(), &a).unwrap();
        assert_eq!(once.dims(), &[3, 4, 2]);
        // element (i, j, k) of a sits at (j, k, i) of the result
        assert_eq!(once.values()[1 + 3 * 2 + 12], a.values()[1 + 2 + 6 * 2]);
        let back = rh_transform(Array2::eye(3).view(), &once).unwrap();
        let back = rh_transform(Array2::eye(4).view(), &back).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn matches_kronecker_products() {
        let mut r = rng(2);
        let a = random_grid(3, vec![3, 4]);
        let m1 = random_matrix(&mut r, 5, 3);
        let m2 = random_matrix(&mut r, 2, 4);
        let res = rh_transform(m2.view(), &rh_transform(m1.view(), &a).unwrap()).unwrap();
        let naive = kron_all(&[m1.clone(), m2.clone()]).dot(a.values());
        assert_eq!(res.dims(), &[5, 2]);
        assert!(res.values().iter().zip(naive.iter()).all(|(u, v)| (u - v).abs() < 1e-12));

        let v = random_grid(4, vec![3]);
        let res = rh_transform(m1.view(), &v).unwrap();
        let naive = m1.dot(v.values());
        assert!(res.values().iter().zip(naive.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
    }

    #[test]
    fn rejects_mismatch() {
        let a = random_grid(1, vec![2, 3]);
        assert!(rh_transform(Array2::eye(3).view(), &a).is_err());
        assert!(GridArray::new(vec![2, 2], Array1::zeros(3)).is_err());
    }

    fn grid_margins(dims: &[usize], d: &[usize]) -> Vec<Array2<f64>> {
        dims.iter()
            .zip(d)
            .map(|(&n, &dm)| {
                let spec = BasisSpec::new(0.0, 1.0, dm, 2, 1).unwrap();
                let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1).max(1) as f64).collect();
                eval_basis(&x, &spec).unwrap()
            })
            .collect()
    }

    #[test]
    fn fitted_and_inner_match_naive() {
        for (dims, d) in [(vec![4, 3], vec![5, 4]), (vec![4, 3, 3], vec![5, 4, 3])] {
            let margins = grid_margins(&dims, &d);
            let b = kron_all(&margins);

            let theta = random_grid(5, d.clone());
            let fitted = glam_fitted(&margins, &theta).unwrap();
            let naive = b.dot(theta.values());
            assert_eq!(fitted.dims(), &dims[..]);
            assert!(fitted.values().iter().zip(naive.iter()).all(|(u, v)| (u - v).abs() < 1e-10));

            let v = random_grid(6, dims.clone());
            let bt = glam_transpose(&margins, &v).unwrap();
            let naive = b.t().dot(v.values());
            assert!(bt.values().iter().zip(naive.iter()).all(|(u, v)| (u - v).abs() < 1e-10));

            let w = random_grid(7, dims.clone());
            let inner = glam_weighted_inner(&margins, &w).unwrap();
            let naive = b.t().dot(&(&b * &w.values().view().insert_axis(ndarray::Axis(1))));
            assert!(max_abs_diff(&inner, &naive) < 1e-10);

            let zero = GridArray::new(dims.clone(), Array1::zeros(w.len())).unwrap();
            assert!(glam_weighted_inner(&margins, &zero).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn constant_coefficients_give_constant_fit() {
        let margins = grid_margins(&[4, 3, 3], &[5, 4, 3]);
        let theta = GridArray::new(vec![5, 4, 3], Array1::from_elem(60, 2.5)).unwrap();
        let fitted = glam_fitted(&margins, &theta).unwrap();
        assert!(fitted.values().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn unit_weights_factorise() {
        let margins = grid_margins(&[4, 3], &[5, 4]);
        let ones = GridArray::new(vec![4, 3], Array1::ones(12)).unwrap();
        let inner = glam_weighted_inner(&margins, &ones).unwrap();
        let grams: Vec<Array2<f64>> = margins.iter().map(|b| b.t().dot(b)).collect();
        assert!(max_abs_diff(&inner, &kron_all(&grams)) < 1e-12);
    }

    #[test]
    fn from_fn_is_first_axis_fastest() {
        let g = GridArray::from_fn(vec![2, 3], |i| (i[0] + 10 * i[1]) as f64).unwrap();
        assert_eq!(g.values().to_vec(), vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
    }
}
