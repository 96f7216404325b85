//! Extended multivariate t distribution EMTD(ν, ω, h, K).
//!
//! Density
//!
//! ```text
//! p(z) = |2πωK|^{-1/2} Γ(n/2+ν)/Γ(ν) · (1 + (z−h)ᵀK⁻¹(z−h)/(2ω))^{−(n/2+ν)}
//! ```
//!
//! which is the Gaussian scale mixture `z | r ~ N(h, rK)`, `r ~ IG(ν, ω)`.
//! The density depends on (ω, K) only through the product ωK, which is what
//! lets [`EmtdSpec::conditional`] report its result under the ω = ν − 1
//! convention used by the regression model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{EtprError, Result};
use crate::numerics::{chol_with_jitter, quad_form, solve_psd, PsdFactor, SymMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Parameters of an extended multivariate t distribution.
#[derive(Debug, Clone)]
pub struct EmtdSpec {
    pub nu: f64,
    pub omega: f64,
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl EmtdSpec {
    pub fn new(nu: f64, omega: f64, mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if cov.dim() != mean.len() {
            return Err(EtprError::DimensionMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        if !(nu > 1.0) || !(omega > 0.0) {
            return Err(EtprError::ConfigInvalid(format!(
                "EMTD needs nu > 1 and omega > 0, got nu = {nu}, omega = {omega}"
            )));
        }
        Ok(EmtdSpec {
            nu,
            omega,
            mean,
            cov,
        })
    }

    /// Zero-mean spec.
    pub fn centered(nu: f64, omega: f64, cov: SymMatrix) -> Result<Self> {
        let n = cov.dim();
        Self::new(nu, omega, DVector::zeros(n), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn factor(&self) -> Result<PsdFactor> {
        chol_with_jitter(&self.cov, 0.0)
    }

    /// Log-density at `z`, computed entirely in log space.
    pub fn logpdf(&self, z: &DVector<f64>) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(EtprError::DimensionMismatch {
                expected: self.dim(),
                found: z.len(),
            });
        }
        let f = self.factor()?;
        let q = quad_form(&f, &(z - &self.mean))?;
        Ok(log_density_from_parts(self.nu, self.omega, self.dim(), f.log_det(), q))
    }

    /// One draw via r ~ IG(ν, ω), z = h + √r·L·ε.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let f = chol_with_jitter(&self.cov, 1e-12 * self.cov.mean_diagonal().abs().max(1e-300))?;
        let r = sample_inverse_gamma(self.nu, self.omega, rng);
        let eps = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        Ok(&self.mean + f.lower() * eps * r.sqrt())
    }

    /// Marginal over the leading `d` coordinates.
    pub fn marginal_prefix(&self, d: usize) -> Result<EmtdSpec> {
        if d == 0 || d > self.dim() {
            return Err(EtprError::DimensionMismatch {
                expected: self.dim(),
                found: d,
            });
        }
        let cov = self.cov.as_matrix().view((0, 0), (d, d)).into_owned();
        EmtdSpec::new(
            self.nu,
            self.omega,
            self.mean.rows(0, d).into_owned(),
            SymMatrix::from_symmetric_unchecked(cov),
        )
    }

    /// Distribution of the trailing coordinates given the leading
    /// `observed.len()` coordinates.
    ///
    /// With d observed coordinates, q = (y − h₁)ᵀΣ₁₁⁻¹(y − h₁) and Schur
    /// complement S, the result is EMTD(ν + d/2, ω*, m, (2ω + q)/(2ω*)·S)
    /// with ω* = ν + d/2 − 1.
    pub fn condition_on_prefix(&self, observed: &DVector<f64>) -> Result<EmtdSpec> {
        let d = observed.len();
        let n = self.dim();
        if d == 0 || d >= n {
            return Err(EtprError::DimensionMismatch {
                expected: n - 1,
                found: d,
            });
        }
        let s = self.cov.as_matrix();
        let s11 = SymMatrix::from_symmetric_unchecked(s.view((0, 0), (d, d)).into_owned());
        let s21 = s.view((d, 0), (n - d, d)).into_owned();
        let s22 = s.view((d, d), (n - d, n - d)).into_owned();
        let f = chol_with_jitter(&s11, 0.0)?;

        let centered = observed - self.mean.rows(0, d);
        let alpha = solve_psd(&f, &centered)?;
        let q = centered.dot(&alpha);
        let mean = self.mean.rows(d, n - d) + &s21 * &alpha;

        // S = Σ₂₂ − Σ₂₁Σ₁₁⁻¹Σ₁₂
        let mut solved = DMatrix::zeros(d, n - d);
        for c in 0..(n - d) {
            let col = solve_psd(&f, &s21.row(c).transpose())?;
            solved.set_column(c, &col);
        }
        let schur = s22 - &s21 * solved;
        let schur = (&schur + schur.transpose()) * 0.5;

        let nu_star = self.nu + d as f64 / 2.0;
        let omega_star = nu_star - 1.0;
        let scale = (2.0 * self.omega + q) / (2.0 * omega_star);
        EmtdSpec::new(
            nu_star,
            omega_star,
            mean,
            SymMatrix::from_symmetric_unchecked(schur * scale),
        )
    }

    /// Coordinate `k` (1-based) given coordinates 1..k−1 equal to `observed`.
    /// Returns a one-dimensional spec.
    pub fn conditional(&self, k: usize, observed: &DVector<f64>) -> Result<EmtdSpec> {
        if k < 2 || k > self.dim() || observed.len() != k - 1 {
            return Err(EtprError::DimensionMismatch {
                expected: k.saturating_sub(1),
                found: observed.len(),
            });
        }
        self.marginal_prefix(k)?.condition_on_prefix(observed)
    }
}

/// Log-density of EMTD(ν, ω, ·, K) given log|K| and the quadratic form q.
pub(crate) fn log_density_from_parts(nu: f64, omega: f64, n: usize, log_det: f64, q: f64) -> f64 {
    let half_n = n as f64 / 2.0;
    -0.5 * (n as f64 * (LN_2PI + omega.ln()) + log_det) + ln_gamma_ratio(nu, half_n)
        - (half_n + nu) * (q / (2.0 * omega)).ln_1p()
}

/// ln Γ(ν + a) − ln Γ(ν).
pub(crate) fn ln_gamma_ratio(nu: f64, a: f64) -> f64 {
    if nu > 1e4 {
        // Stirling series written in differences so that no ~ν·ln ν terms cancel.
        let (x, y) = (nu, nu + a);
        let inv_diff1 = -a / (x * y);
        let inv_diff3 = -a * (x * x + x * y + y * y) / (x * x * x * y * y * y);
        a * x.ln() + (y - 0.5) * (a / x).ln_1p() - a + inv_diff1 / 12.0 - inv_diff3 / 360.0
    } else {
        ln_gamma(nu + a) - ln_gamma(nu)
    }
}

/// ψ(ν + a) − ψ(ν).
pub(crate) fn digamma_diff(nu: f64, a: f64) -> f64 {
    if nu > 1e4 {
        let (x, y) = (nu, nu + a);
        let inv_diff1 = -a / (x * y);
        let inv_diff2 = -a * (x + y) / (x * x * y * y);
        let inv_diff4 = inv_diff2 * (x * x + y * y) / (x * x * y * y);
        (a / x).ln_1p() - 0.5 * inv_diff1 - inv_diff2 / 12.0 + inv_diff4 / 120.0
    } else {
        digamma(nu + a) - digamma(nu)
    }
}

/// r ~ IG(shape, scale), i.e. 1/r ~ Gamma(shape, rate = scale).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}

/// How the gamma prior on w⁻¹ is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaConvention {
    /// w⁻¹ ~ Gamma(shape α₁, rate μ₁), so w ~ IG(α₁, μ₁).
    ShapeRate,
    /// w⁻¹ ~ Gamma(shape α₁, scale μ₁), so w ~ IG(α₁, 1/μ₁).
    ShapeScale,
}

/// How the log-normal priors on σ², v and a are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogNormalDensity {
    /// Density of x itself, including the 1/x factor.
    OriginalScale,
    /// Normal density of log x.
    LogScale,
}

impl LogNormalDensity {
    /// Coefficient of −log x in the log-density.
    pub(crate) fn inv_x_power(self) -> f64 {
        match self {
            LogNormalDensity::OriginalScale => 1.0,
            LogNormalDensity::LogScale => 0.0,
        }
    }
}

/// Hyper-prior settings for (ν, σ², v, w, a) and the inclusion probability κ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub alpha1: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma2_sq: f64,
    pub mu3: f64,
    pub sigma3_sq: f64,
    pub mu4: f64,
    pub sigma4_sq: f64,
    pub kappa: f64,
    pub gamma_convention: GammaConvention,
    pub lognormal_density: LogNormalDensity,
}

impl Default for PriorConfig {
    /// log a ~ N(−3, 3²), log σ² ~ N(−3, 3²), log v ~ N(−3, 1), w⁻¹ ~ Γ(2, 0.5), κ = 0.84.
    fn default() -> Self {
        PriorConfig {
            alpha1: 2.0,
            mu1: 0.5,
            mu2: -3.0,
            sigma2_sq: 9.0,
            mu3: -3.0,
            sigma3_sq: 1.0,
            mu4: -3.0,
            sigma4_sq: 9.0,
            kappa: 0.84,
            gamma_convention: GammaConvention::ShapeScale,
            lognormal_density: LogNormalDensity::LogScale,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha1", self.alpha1),
            ("mu1", self.mu1),
            ("sigma2_sq", self.sigma2_sq),
            ("sigma3_sq", self.sigma3_sq),
            ("sigma4_sq", self.sigma4_sq),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EtprError::ConfigInvalid(format!("{name} must be positive")));
            }
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(EtprError::ConfigInvalid("kappa must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Scale β of the inverse-gamma law IG(α₁, β) placed on w.
    pub fn w_ig_scale(&self) -> f64 {
        match self.gamma_convention {
            GammaConvention::ShapeRate => self.mu1,
            GammaConvention::ShapeScale => 1.0 / self.mu1,
        }
    }
}

/// One scalar parameter to be scored under its prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorComponent {
    /// π(ν) ∝ ν⁻², ν ≥ 1 (unnormalized).
    Nu(f64),
    /// log σ² ~ N(μ₄, σ₄²).
    SigmaSq(f64),
    /// log v ~ N(μ₃, σ₃²).
    V(f64),
    /// w ~ IG(α₁, β) (slab only).
    W(f64),
    /// log a ~ N(μ₂, σ₂²) (slab only).
    A(f64),
}

/// Log-normal log-density of x; `scale` decides whether the 1/x factor is kept.
pub(crate) fn log_normal_logpdf(x: f64, mu: f64, var: f64, scale: LogNormalDensity) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    let l = x.ln();
    -scale.inv_x_power() * l - 0.5 * (LN_2PI + var.ln()) - (l - mu) * (l - mu) / (2.0 * var)
}

pub(crate) fn inverse_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Log prior density of one component; −∞ outside its support.
pub fn log_prior(component: PriorComponent, prior: &PriorConfig) -> f64 {
    match component {
        PriorComponent::Nu(nu) => {
            if nu >= 1.0 && nu.is_finite() {
                -2.0 * nu.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        PriorComponent::SigmaSq(s) => log_normal_logpdf(s, prior.mu4, prior.sigma4_sq, prior.lognormal_density),
        PriorComponent::V(v) => log_normal_logpdf(v, prior.mu3, prior.sigma3_sq, prior.lognormal_density),
        PriorComponent::W(w) => inverse_gamma_logpdf(w, prior.alpha1, prior.w_ig_scale()),
        PriorComponent::A(a) => log_normal_logpdf(a, prior.mu2, prior.sigma2_sq, prior.lognormal_density),
    }
}

/// log κ for an included parameter, log(1 − κ) for an excluded one.
pub fn log_inclusion(included: bool, kappa: f64) -> f64 {
    if included {
        kappa.ln()
    } else {
        (1.0 - kappa).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Continuous, StudentsT};

    fn scalar(nu: f64, omega: f64) -> EmtdSpec {
        EmtdSpec::centered(nu, omega, SymMatrix::identity(1)).unwrap()
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn logpdf_at_mode() {
        let lp = scalar(2.0, 1.0).logpdf(&v1(0.0)).unwrap();
        let expected = (1.329_340_388_179_137f64).ln() - 0.918_938_533_204_672_7;
        assert!((lp - expected).abs() < 1e-12);
        assert!((lp - (-0.6343)).abs() < 1e-4);
    }

    #[test]
    fn student_t_identity() {
        for nu in [1.5, 2.0, 3.7] {
            let spec = scalar(nu, nu);
            let t = StudentsT::new(0.0, 1.0, 2.0 * nu).unwrap();
            for z in -5..=5 {
                let z = z as f64;
                assert!((spec.logpdf(&v1(z)).unwrap() - t.ln_pdf(z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_limit() {
        let nu = 1e6;
        let spec = scalar(nu, nu - 1.0);
        for z in -3..=3 {
            let z = z as f64;
            let normal = -0.5 * LN_2PI - 0.5 * z * z;
            assert!((spec.logpdf(&v1(z)).unwrap() - normal).abs() < 1e-3);
        }
    }

    #[test]
    fn gamma_ratio_branches_agree() {
        for a in [0.5, 1.0, 5.0, 20.0] {
            let nu = 1.2e4;
            let direct = ln_gamma(nu + a) - ln_gamma(nu);
            assert!((ln_gamma_ratio(nu, a) - direct).abs() < 1e-8);
            let direct = digamma(nu + a) - digamma(nu);
            assert!((digamma_diff(nu, a) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_nu_has_no_cancellation() {
        // ln Γ(ν+a) − ln Γ(ν) = a ln ν + a(a−1)/(2ν) + O(ν⁻²)
        for nu in [1e8, 1e12, 1e17] {
            let a = 12.5;
            let expected = a * f64::ln(nu) + a * (a - 1.0) / (2.0 * nu);
            assert!((ln_gamma_ratio(nu, a) - expected).abs() < 1e-12 * expected);
            assert!((digamma_diff(nu, a) - a / nu).abs() < 1e-6 * a / nu);
        }
        // the density tends to the Gaussian one
        let (n, log_det, q) = (25, -3.0, 20.0);
        let gauss = -0.5 * (n as f64 * LN_2PI + log_det + q);
        let t = log_density_from_parts(1e17, 1e17 - 1.0, n, log_det, q);
        assert!((t - gauss).abs() < 1e-9, "{t} vs {gauss}");
    }

    #[test]
    fn logpdf_dimension_mismatch() {
        assert!(scalar(2.0, 1.0).logpdf(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(EmtdSpec::centered(1.0, 1.0, SymMatrix::identity(1)).is_err());
        assert!(EmtdSpec::centered(2.0, 0.0, SymMatrix::identity(1)).is_err());
        assert!(EmtdSpec::new(2.0, 1.0, DVector::zeros(2), SymMatrix::identity(1)).is_err());
    }

    #[test]
    fn degenerate_covariance_samples_at_mean() {
        let spec = EmtdSpec::new(
            3.0,
            2.0,
            DVector::from_element(3, 1.7),
            SymMatrix::from_symmetric_unchecked(DMatrix::from_element(3, 3, 0.0)).add_diagonal(1e-20),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let z = spec.sample(&mut rng).unwrap();
            assert!(z.iter().all(|&x| (x - 1.7).abs() < 1e-6));
        }
    }

    #[test]
    fn sample_moments() {
        let spec = scalar(3.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| spec.sample(&mut rng).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // variance is ω/(ν−1) = 1
        assert!(mean.abs() < 3.0 * (var / n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05, "var = {var}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = scalar(3.0, 2.0);
        let a = spec.sample(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = spec.sample(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_under_independence() {
        let cov = SymMatrix::from_diagonal(&[2.0, 0.5, 3.0]);
        let (nu, omega) = (2.5, 1.5);
        let spec = EmtdSpec::centered(nu, omega, cov).unwrap();
        let y = DVector::from_vec(vec![1.0, -0.4]);
        let c = spec.conditional(3, &y).unwrap();
        let q = 1.0 / 2.0 + 0.16 / 0.5;
        // density-equivalent form: ω*·v_k must equal (ω + q/2)·K_kk
        let expected_scaled = (omega + q / 2.0) * 3.0;
        assert_eq!(c.dim(), 1);
        assert!(c.mean[0].abs() < 1e-15);
        assert!((c.nu - (nu + 1.0)).abs() < 1e-15);
        assert!((c.omega * c.cov.as_matrix()[(0, 0)] - expected_scaled).abs() < 1e-12);

        // under ω = ν − 1 the scale factor is (2ω + q)/(2ω + k − 1)
        let spec = EmtdSpec::centered(2.0, 1.0, SymMatrix::from_diagonal(&[2.0, 0.5, 3.0])).unwrap();
        let c = spec.conditional(3, &y).unwrap();
        let vk = (2.0 + q) / (2.0 + 2.0) * 3.0;
        assert!((c.cov.as_matrix()[(0, 0)] - vk).abs() < 1e-12);
    }

    #[test]
    fn conditional_on_zero_observation() {
        let cov = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0])).unwrap();
        let spec = EmtdSpec::centered(2.0, 1.0, cov).unwrap();
        let c = spec.conditional(2, &v1(0.0)).unwrap();
        let schur = 2.0 - 0.36;
        assert_eq!(c.mean[0], 0.0);
        assert!((c.cov.as_matrix()[(0, 0)] - 2.0 / 3.0 * schur).abs() < 1e-14);
    }

    #[test]
    fn conditional_bad_split() {
        let spec = EmtdSpec::centered(2.0, 1.0, SymMatrix::identity(3)).unwrap();
        assert!(spec.conditional(1, &DVector::zeros(0)).is_err());
        assert!(spec.conditional(3, &DVector::zeros(1)).is_err());
    }

    #[test]
    fn nu_prior() {
        let p = PriorConfig::default();
        assert_eq!(log_prior(PriorComponent::Nu(1.0), &p), 0.0);
        assert_eq!(log_prior(PriorComponent::Nu(2.0), &p), -2.0 * 2f64.ln());
        assert_eq!(log_prior(PriorComponent::Nu(0.5), &p), f64::NEG_INFINITY);
    }

    #[test]
    fn log_normal_at_median() {
        let p = PriorConfig {
            lognormal_density: LogNormalDensity::OriginalScale,
            ..PriorConfig::default()
        };
        let median = p.mu2.exp();
        let expected = -(median * p.sigma2_sq.sqrt() * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((log_prior(PriorComponent::A(median), &p) - expected).abs() < 1e-12);

        let p = PriorConfig::default();
        let expected = -(p.sigma2_sq.sqrt() * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((log_prior(PriorComponent::A(median), &p) - expected).abs() < 1e-12);
        assert_eq!(log_prior(PriorComponent::A(0.0), &p), f64::NEG_INFINITY);
        assert_eq!(log_prior(PriorComponent::W(-1.0), &p), f64::NEG_INFINITY);
    }

    #[test]
    fn gamma_conventions() {
        // w⁻¹ ~ Gamma(2, rate 0.5) ⇒ p(w) = 0.25 w⁻³ exp(−0.5/w)
        let mut p = PriorConfig {
            gamma_convention: GammaConvention::ShapeRate,
            ..PriorConfig::default()
        };
        let w: f64 = 2.0;
        let expected = (0.25f64).ln() - 3.0 * w.ln() - 0.5 / w;
        assert!((log_prior(PriorComponent::W(w), &p) - expected).abs() < 1e-12);
        // scale 0.5 ⇒ rate 2 ⇒ p(w) = 4 w⁻³ exp(−2/w)
        p.gamma_convention = GammaConvention::ShapeScale;
        let expected = 4f64.ln() - 3.0 * w.ln() - 2.0 / w;
        assert!((log_prior(PriorComponent::W(w), &p) - expected).abs() < 1e-12);
    }

    #[test]
    fn prior_validation() {
        assert!(PriorConfig::default().validate().is_ok());
        let bad = PriorConfig {
            kappa: 1.0,
            ..PriorConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
