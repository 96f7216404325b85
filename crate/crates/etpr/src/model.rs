//! eTPR likelihood over m curves and the Bayesian log-posterior.
//!
//! Curve i contributes the EMTD(ν, ν−1, 0, Σ̃ᵢ) log-density of yᵢ with
//! Σ̃ᵢ = σ²I + Kᵢ. The posterior adds log-priors for ν, σ² and every kernel
//! parameter, plus log κ / log(1−κ) per inclusion indicator.
//!
//! Optimizers work on an unconstrained vector: log σ², log of every active
//! kernel parameter and, when ν is free, log(ν − ν_min). The objective itself
//! is always the density in the original parameter space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::emtd::{
    digamma_diff, log_density_from_parts, log_inclusion, log_prior, PriorComponent, PriorConfig,
};
use crate::error::{EtprError, Result};
use crate::kernels::{KernelParams, ParamId};
use crate::numerics::{chol_with_jitter, default_base_jitter, PsdFactor, SymMatrix};

/// Lower bound on ν; ω = ν − 1 must stay positive.
pub const NU_MIN: f64 = 1.0 + 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observed covariates and responses of one curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    pub id: String,
    /// Time stamps (or any ordering key); carried through I/O only.
    pub t: Vec<f64>,
    /// n × p covariates.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl CurveData {
    pub fn new(id: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let t = (0..y.len()).map(|j| j as f64).collect();
        Self::with_times(id, t, x, y)
    }

    pub fn with_times(id: impl Into<String>, t: Vec<f64>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() || t.len() != y.len() {
            return Err(EtprError::DimensionMismatch {
                expected: y.len(),
                found: x.nrows(),
            });
        }
        if y.is_empty() {
            return Err(EtprError::DimensionMismatch { expected: 1, found: 0 });
        }
        Ok(CurveData {
            id: id.into(),
            t,
            x,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx` as a new curve with the same id.
    pub fn subset(&self, idx: &[usize]) -> CurveData {
        CurveData {
            id: self.id.clone(),
            t: idx.iter().map(|&j| self.t[j]).collect(),
            x: self.x.select_rows(idx),
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&j| self.y[j])),
        }
    }
}

/// Shared (ν, σ²) and one kernel per curve. ν = +∞ denotes the Gaussian limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtprModel {
    pub nu: f64,
    pub sigma_sq: f64,
    pub kernels: Vec<KernelParams>,
}

impl EtprModel {
    pub fn validate_against(&self, data: &[CurveData]) -> Result<()> {
        if self.kernels.len() != data.len() {
            return Err(EtprError::DimensionMismatch {
                expected: self.kernels.len(),
                found: data.len(),
            });
        }
        if self.kernels.is_empty() {
            return Err(EtprError::DimensionMismatch { expected: 1, found: 0 });
        }
        for (k, c) in self.kernels.iter().zip(data) {
            k.validate()?;
            if k.p() != c.p() {
                return Err(EtprError::DimensionMismatch {
                    expected: k.p(),
                    found: c.p(),
                });
            }
        }
        Ok(())
    }

    /// Σ̃ = σ²I + K for curve `i`.
    pub fn noisy_gram(&self, i: usize, curve: &CurveData) -> Result<SymMatrix> {
        Ok(self.kernels[i].gram(&curve.x)?.add_diagonal(self.sigma_sq))
    }
}

pub(crate) fn factor_noisy(sigma: &SymMatrix) -> Result<PsdFactor> {
    chol_with_jitter(sigma, default_base_jitter(sigma))
}

/// Per-curve quantities shared by value and gradient.
struct CurveSolve {
    factor: PsdFactor,
    alpha: DVector<f64>,
    q: f64,
    n: usize,
}

impl CurveSolve {
    fn new(model: &EtprModel, i: usize, curve: &CurveData) -> Result<Self> {
        let sigma = model.noisy_gram(i, curve)?;
        let factor = factor_noisy(&sigma)?;
        let alpha = crate::numerics::solve_psd(&factor, &curve.y)?;
        let q = curve.y.dot(&alpha);
        Ok(CurveSolve {
            factor,
            alpha,
            q,
            n: curve.n(),
        })
    }

    fn emtd_loglik(&self, nu: f64) -> f64 {
        log_density_from_parts(nu, nu - 1.0, self.n, self.factor.log_det(), self.q)
    }

    fn gaussian_loglik(&self) -> f64 {
        -0.5 * (self.q + self.factor.log_det() + self.n as f64 * LN_2PI)
    }
}

/// Σᵢ log EMTD(yᵢ; ν, ν−1, 0, σ²I + Kᵢ).
pub fn marginal_loglik(model: &EtprModel, data: &[CurveData]) -> Result<f64> {
    model.validate_against(data)?;
    if !(model.nu > 1.0) {
        return Err(EtprError::ConfigInvalid(format!("nu must exceed 1, got {}", model.nu)));
    }
    if !(model.sigma_sq > 0.0) {
        return Err(EtprError::ConfigInvalid("sigma_sq must be positive".into()));
    }
    if model.nu.is_infinite() {
        return gaussian_loglik(model, data);
    }
    let mut total = 0.0;
    for (i, curve) in data.iter().enumerate() {
        total += CurveSolve::new(model, i, curve)?.emtd_loglik(model.nu);
    }
    Ok(total)
}

/// Gaussian log marginal likelihood Σᵢ −½(yᵀΣ̃⁻¹y + log|Σ̃| + n log 2π); ν is ignored.
pub fn gaussian_loglik(model: &EtprModel, data: &[CurveData]) -> Result<f64> {
    model.validate_against(data)?;
    let mut total = 0.0;
    for (i, curve) in data.iter().enumerate() {
        total += CurveSolve::new(model, i, curve)?.gaussian_loglik();
    }
    Ok(total)
}

/// Sum of all prior and inclusion terms; depends on parameters only.
pub fn log_prior_total(model: &EtprModel, priors: &PriorConfig) -> f64 {
    let mut lp = log_prior(PriorComponent::Nu(model.nu), priors)
        + log_prior(PriorComponent::SigmaSq(model.sigma_sq), priors);
    for k in &model.kernels {
        lp += log_prior(PriorComponent::V(k.v), priors);
        for q in 0..k.p() {
            lp += log_inclusion(k.gamma[q], priors.kappa);
            if k.gamma[q] {
                lp += log_prior(PriorComponent::W(k.w[q]), priors);
            }
            lp += log_inclusion(k.delta[q], priors.kappa);
            if k.delta[q] {
                lp += log_prior(PriorComponent::A(k.a[q]), priors);
            }
        }
    }
    lp
}

fn in_support(model: &EtprModel) -> bool {
    model.nu >= 1.0
        && model.nu.is_finite()
        && model.sigma_sq > 0.0
        && model.kernels.iter().all(|k| {
            k.v > 0.0
                && (0..k.p()).all(|q| (!k.gamma[q] || k.w[q] > 0.0) && (!k.delta[q] || k.a[q] > 0.0))
        })
}

/// log-likelihood + log-priors; −∞ for parameters outside the prior support.
pub fn log_posterior(model: &EtprModel, data: &[CurveData], priors: &PriorConfig) -> Result<f64> {
    if !in_support(model) || model.nu <= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(marginal_loglik(model, data)? + log_prior_total(model, priors))
}

/// Which criterion an optimizer maximizes.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Gaussian marginal likelihood over (σ², β); no ν.
    Gaussian,
    /// eTPR marginal likelihood over (ν, σ², β).
    Likelihood,
    /// Log-posterior over (ν, σ², β).
    Posterior(PriorConfig),
}

impl Objective {
    pub fn has_nu(&self) -> bool {
        !matches!(self, Objective::Gaussian)
    }

    pub fn value(&self, model: &EtprModel, data: &[CurveData]) -> Result<f64> {
        match self {
            Objective::Gaussian => gaussian_loglik(model, data),
            Objective::Likelihood => marginal_loglik(model, data),
            Objective::Posterior(p) => log_posterior(model, data, p),
        }
    }
}

/// One coordinate of the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    /// log(ν − ν_min)
    Nu,
    /// log σ²
    SigmaSq,
    /// log of kernel parameter `id` of curve `curve`
    Kernel { curve: usize, id: ParamId },
}

/// Maps between [`EtprModel`] and the unconstrained optimization vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    coords: Vec<Coord>,
}

impl ParamLayout {
    /// Active coordinates of `template` (its masks decide which kernel
    /// parameters appear).
    pub fn new(template: &EtprModel, with_nu: bool) -> Self {
        let mut coords = Vec::new();
        if with_nu {
            coords.push(Coord::Nu);
        }
        coords.push(Coord::SigmaSq);
        for (curve, k) in template.kernels.iter().enumerate() {
            coords.extend(k.active_ids().into_iter().map(|id| Coord::Kernel { curve, id }));
        }
        ParamLayout { coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn to_vector(&self, model: &EtprModel) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.coords.iter().map(|c| match *c {
                Coord::Nu => (model.nu - NU_MIN).ln(),
                Coord::SigmaSq => model.sigma_sq.ln(),
                Coord::Kernel { curve, id } => model.kernels[curve].get(id).ln(),
            }),
        )
    }

    /// Writes `theta` into a copy of `template`.
    pub fn to_model(&self, theta: &DVector<f64>, template: &EtprModel) -> EtprModel {
        let mut m = template.clone();
        for (c, &t) in self.coords.iter().zip(theta.iter()) {
            match *c {
                Coord::Nu => m.nu = NU_MIN + t.exp(),
                Coord::SigmaSq => m.sigma_sq = t.exp(),
                Coord::Kernel { curve, id } => m.kernels[curve].set(id, t.exp()),
            }
        }
        m
    }
}

/// Objective value and gradient with respect to the unconstrained vector.
pub fn value_and_gradient(
    objective: &Objective,
    model: &EtprModel,
    data: &[CurveData],
    layout: &ParamLayout,
) -> Result<(f64, DVector<f64>)> {
    model.validate_against(data)?;
    let gaussian = matches!(objective, Objective::Gaussian);
    let nu = model.nu;
    if !gaussian && !(nu > 1.0 && nu.is_finite()) {
        return Err(EtprError::ConfigInvalid(format!("nu must be finite and > 1, got {nu}")));
    }
    let mut grad = DVector::zeros(layout.len());
    let mut value = 0.0;

    // position of each coordinate
    let nu_pos = layout.coords.iter().position(|c| *c == Coord::Nu);
    let s_pos = layout.coords.iter().position(|c| *c == Coord::SigmaSq);

    for (i, curve) in data.iter().enumerate() {
        let cs = CurveSolve::new(model, i, curve)?;
        let n = cs.n as f64;
        let omega = nu - 1.0;
        // weight multiplying αᵀMα in ∂ℓ/∂θ
        let quad_weight = if gaussian {
            value += cs.gaussian_loglik();
            0.5
        } else {
            value += cs.emtd_loglik(nu);
            (n / 2.0 + nu) / (2.0 * omega + cs.q)
        };
        let inv = cs.factor.inverse();
        let dir = |m: &DMatrix<f64>| -> f64 {
            let trace = inv.component_mul(m).sum();
            let quad = cs.alpha.dot(&(m * &cs.alpha));
            -0.5 * trace + quad_weight * quad
        };

        if let Some(pos) = s_pos {
            let trace = inv.trace();
            let quad = cs.alpha.norm_squared();
            grad[pos] += model.sigma_sq * (-0.5 * trace + quad_weight * quad);
        }
        if let Some(pos) = nu_pos {
            let d_nu = -n / (2.0 * omega) + digamma_diff(nu, n / 2.0)
                - (cs.q / (2.0 * omega)).ln_1p()
                + (n / 2.0 + nu) * cs.q / (omega * (2.0 * omega + cs.q));
            grad[pos] += (nu - NU_MIN) * d_nu;
        }
        let kernel = &model.kernels[i];
        let grads = kernel.grad_gram(&curve.x)?;
        for (id, m) in grads {
            let pos = layout
                .coords
                .iter()
                .position(|c| *c == Coord::Kernel { curve: i, id })
                .expect("layout covers every active parameter");
            grad[pos] += kernel.get(id) * dir(&m);
        }
    }

    if let Objective::Posterior(priors) = objective {
        if !in_support(model) {
            return Ok((f64::NEG_INFINITY, grad));
        }
        value += log_prior_total(model, priors);
        let jac = priors.lognormal_density.inv_x_power();
        let ln_normal = |x: f64, mu: f64, var: f64| -jac - (x.ln() - mu) / var;
        for (pos, c) in layout.coords.iter().enumerate() {
            grad[pos] += match *c {
                Coord::Nu => -2.0 * (nu - NU_MIN) / nu,
                Coord::SigmaSq => ln_normal(model.sigma_sq, priors.mu4, priors.sigma4_sq),
                Coord::Kernel { curve, id } => {
                    let x = model.kernels[curve].get(id);
                    match id {
                        ParamId::V => ln_normal(x, priors.mu3, priors.sigma3_sq),
                        ParamId::A(_) => ln_normal(x, priors.mu2, priors.sigma2_sq),
                        ParamId::W(_) => -(priors.alpha1 + 1.0) + priors.w_ig_scale() / x,
                    }
                }
            };
        }
    }
    Ok((value, grad))
}

/// Gradient of [`log_posterior`] over (log(ν−ν_min), log σ², log β_active).
pub fn grad_log_posterior(model: &EtprModel, data: &[CurveData], priors: &PriorConfig) -> Result<DVector<f64>> {
    let layout = ParamLayout::new(model, true);
    Ok(value_and_gradient(&Objective::Posterior(priors.clone()), model, data, &layout)?.1)
}
