//! End-to-end smoother: basis evaluation, mixed-model transform and fit.

use ndarray::{concatenate, Array1, Array2, Axis};

use crate::basis::eval_basis;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::mmtransform::{build_design, build_transforms, marginal_evd, FactoredComponents, MarginalEvd};
use crate::penalty::{AdaptivePenalty, AdaptivePenaltySpec};
use crate::sop::{self, DenseDesign, Family, FitControl, FitResult, GridDesign, Prediction};

/// A tensor-product P-spline with an (optionally adaptive) penalty, ready to
/// be fitted to scattered or grid data.
#[derive(Debug, Clone)]
pub struct Smoother {
    spec: AdaptivePenaltySpec,
    evds: Vec<MarginalEvd>,
    t_zero: Array2<f64>,
    t_plus: Array2<f64>,
    components: FactoredComponents,
}

impl Smoother {
    pub fn new(spec: AdaptivePenaltySpec) -> Result<Self> {
        spec.validate()?;
        let evds = spec
            .dims
            .iter()
            .map(marginal_evd)
            .collect::<Result<Vec<_>>>()?;
        let (t_zero, t_plus) = build_transforms(&evds)?;
        let components = FactoredComponents::new(t_plus.clone(), AdaptivePenalty::new(&spec)?)?;
        Ok(Self {
            spec,
            evds,
            t_zero,
            t_plus,
            components,
        })
    }

    pub fn spec(&self) -> &AdaptivePenaltySpec {
        &self.spec
    }

    pub fn n_fixed(&self) -> usize {
        self.t_zero.ncols()
    }

    pub fn n_random(&self) -> usize {
        self.t_plus.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.components.penalty.n_components()
    }

    pub fn t_zero(&self) -> &Array2<f64> {
        &self.t_zero
    }

    pub fn t_plus(&self) -> &Array2<f64> {
        &self.t_plus
    }

    pub fn components(&self) -> &FactoredComponents {
        &self.components
    }

    fn margins(&self, covariates: &[Vec<f64>], same_length: bool) -> Result<Vec<Array2<f64>>> {
        let k = self.spec.n_dims();
        if covariates.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} covariates for a {k}-dimensional smoother",
                covariates.len()
            )));
        }
        if same_length && covariates.iter().any(|c| c.len() != covariates[0].len()) {
            return Err(Error::DimensionMismatch("covariates differ in length".into()));
        }
        covariates
            .iter()
            .zip(&self.spec.dims)
            .enumerate()
            .map(|(m, (x, spec))| {
                if let Some(i) = x.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("covariate {} at row {i}", m + 1)));
                }
                eval_basis(x, spec)
            })
            .collect()
    }

    /// The unpenalised part of covariate `m` must be estimable; fails when
    /// there are too few distinct values for the penalty order.
    fn check_fixed_rank(&self, margins: &[Array2<f64>]) -> Result<()> {
        for (m, (b, evd)) in margins.iter().zip(&self.evds).enumerate() {
            let bu = b.dot(&evd.u_zero);
            let gram = bu.t().dot(&bu);
            let scale = gram.diag().iter().fold(0.0f64, |a, v| a.max(*v));
            let ridge = &gram + &(Array2::<f64>::eye(gram.nrows()) * (-1e-10 * scale));
            if Cholesky::new(ridge.view(), "").is_err() {
                return Err(Error::RankDeficient(format!(
                    "covariate {} does not have enough distinct values for a penalty of order {}",
                    m + 1,
                    self.spec.dims[m].q
                )));
            }
        }
        Ok(())
    }

    /// Rows of `[X | Z]` at the given points.
    pub fn design_rows(&self, covariates: &[Vec<f64>]) -> Result<Array2<f64>> {
        let margins = self.margins(covariates, true)?;
        let (x, z) = build_design(&margins, &self.evds)?;
        concatenate(Axis(1), &[x.view(), z.view()]).map_err(|e| Error::DimensionMismatch(e.to_string()))
    }

    /// Fit to scattered observations; `covariates[m][i]` is covariate `m` of
    /// observation `i`.
    pub fn fit(
        &self,
        covariates: &[Vec<f64>],
        y: &Array1<f64>,
        family: Family,
        offset: Option<&Array1<f64>>,
        weights: Option<&Array1<f64>>,
        control: &FitControl,
    ) -> Result<FitResult> {
        let margins = self.margins(covariates, true)?;
        self.check_fixed_rank(&margins)?;
        let (x, z) = build_design(&margins, &self.evds)?;
        let design = DenseDesign::new(&x, &z)?;
        let mut fit = sop::fit(&design, &self.components, y, family, offset, weights, control)?;
        fit.set_transforms(&self.t_zero, &self.t_plus);
        Ok(fit)
    }

    /// Fit to a complete grid. `axes[m]` holds the grid positions along
    /// covariate `m`; `y`, `offset` and `weights` are in grid order with the
    /// first covariate varying fastest.
    pub fn fit_grid(
        &self,
        axes: &[Vec<f64>],
        y: &Array1<f64>,
        family: Family,
        offset: Option<&Array1<f64>>,
        weights: Option<&Array1<f64>>,
        control: &FitControl,
    ) -> Result<FitResult> {
        let margins = self.margins(axes, false)?;
        self.check_fixed_rank(&margins)?;
        let design = GridDesign::new(margins, &self.t_zero, &self.t_plus)?;
        let mut fit = sop::fit(&design, &self.components, y, family, offset, weights, control)?;
        fit.set_transforms(&self.t_zero, &self.t_plus);
        Ok(fit)
    }

    pub fn predict(
        &self,
        fit: &FitResult,
        covariates: &[Vec<f64>],
        offset: Option<&Array1<f64>>,
        level: f64,
    ) -> Result<Prediction> {
        let rows = self.design_rows(covariates)?;
        sop::predict(fit, &rows, offset, level)
    }
}

/// Expand grid axes into per-point covariate columns, first axis fastest.
pub fn expand_grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut out = vec![Vec::with_capacity(total); axes.len()];
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        for (m, col) in out.iter_mut().enumerate() {
            col.push(axes[m][idx[m]]);
        }
        for (i, a) in idx.iter_mut().zip(axes) {
            *i += 1;
            if *i < a.len() {
                break;
            }
            *i = 0;
        }
    }
    out
}
