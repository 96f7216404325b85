//! Plug-in posterior predictive of the eTPR model.
//!
//! At a new input u, f(u) | data ~ EMTD(n/2 + ν, n/2 + ν − 1, μ*, σ*) with
//! μ* = k_uᵀΣ̃⁻¹y and σ* = s₀·(k(u,u) − k_uᵀΣ̃⁻¹k_u), where
//! s₀ = (yᵀΣ̃⁻¹y + 2(ν−1)) / (n + 2(ν−1)). With ν = ∞ this is the GP predictive.

use nalgebra::{DMatrix, DVector};

use crate::error::{EtprError, Result};
use crate::kernels::KernelParams;
use crate::model::{factor_noisy, CurveData, EtprModel};
use crate::numerics::{quad_form, solve_psd, PsdFactor};

/// Tiny negative variances from round-off are clamped to zero above this.
const NEGATIVE_VARIANCE_CLAMP: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predictive {
    pub mean: f64,
    pub variance: f64,
    /// n/2 + ν
    pub df: f64,
    pub scale_mix: f64,
}

fn scale_mix(nu: f64, n: usize, q: f64) -> f64 {
    if nu.is_infinite() {
        return 1.0;
    }
    let two_omega = 2.0 * (nu - 1.0);
    (q + two_omega) / (n as f64 + two_omega)
}

fn locate<'a>(model: &'a EtprModel, curve: &CurveData, index: usize) -> Result<&'a KernelParams> {
    let kernel = model
        .kernels
        .get(index)
        .ok_or_else(|| EtprError::UnknownCurveId(curve.id.clone()))?;
    if kernel.p() != curve.p() {
        return Err(EtprError::DimensionMismatch {
            expected: kernel.p(),
            found: curve.p(),
        });
    }
    Ok(kernel)
}

/// Shared factorization of Σ̃ for one curve.
struct Conditioner<'a> {
    kernel: &'a KernelParams,
    curve: &'a CurveData,
    factor: PsdFactor,
    alpha: DVector<f64>,
    s0: f64,
    df: f64,
}

impl<'a> Conditioner<'a> {
    fn new(model: &'a EtprModel, curve: &'a CurveData, index: usize) -> Result<Self> {
        let kernel = locate(model, curve, index)?;
        let sigma = kernel.gram(&curve.x)?.add_diagonal(model.sigma_sq);
        let factor = factor_noisy(&sigma)?;
        let alpha = solve_psd(&factor, &curve.y)?;
        let q = quad_form(&factor, &curve.y)?;
        let n = curve.n();
        Ok(Conditioner {
            kernel,
            curve,
            s0: scale_mix(model.nu, n, q),
            df: n as f64 / 2.0 + model.nu,
            factor,
            alpha,
        })
    }

    fn at(&self, u: &[f64]) -> Result<Predictive> {
        let k_u = self.kernel.cross(&self.curve.x, u)?;
        let k_uu = self.kernel.eval(u, u)?;
        let mean = k_u.dot(&self.alpha);
        let reduction = quad_form(&self.factor, &k_u)?;
        let mut variance = self.s0 * (k_uu - reduction);
        if variance < 0.0 {
            if variance < NEGATIVE_VARIANCE_CLAMP {
                return Err(EtprError::NegativeVariance(variance));
            }
            variance = 0.0;
        }
        Ok(Predictive {
            mean,
            variance,
            df: self.df,
            scale_mix: self.s0,
        })
    }
}

/// s₀ for curve `index` of `model`.
pub fn s0(model: &EtprModel, curve: &CurveData, index: usize) -> Result<f64> {
    Ok(Conditioner::new(model, curve, index)?.s0)
}

/// Predictive distribution of f at `u` for curve `index`.
pub fn posterior_predictive(model: &EtprModel, curve: &CurveData, index: usize, u: &[f64]) -> Result<Predictive> {
    Conditioner::new(model, curve, index)?.at(u)
}

/// Predictive at every row of `queries` (q × p), sharing one factorization.
pub fn predict_batch(
    model: &EtprModel,
    curve: &CurveData,
    index: usize,
    queries: &DMatrix<f64>,
) -> Result<Vec<Predictive>> {
    let cond = Conditioner::new(model, curve, index)?;
    if queries.nrows() > 0 && queries.ncols() != curve.p() {
        return Err(EtprError::DimensionMismatch {
            expected: curve.p(),
            found: queries.ncols(),
        });
    }
    (0..queries.nrows())
        .map(|r| {
            let u: Vec<f64> = queries.row(r).iter().copied().collect();
            cond.at(&u)
        })
        .collect()
}
