//! Fitting procedures: GPR, eTPR by maximum likelihood, BeTPR by MAP, and
//! the spike-and-slab indicator search on top of BeTPR.
//!
//! Every fit is a multi-start BFGS ascent on the unconstrained
//! parameterization. Start 0 is the supplied (or heuristic) initial model;
//! further starts are drawn from a seeded stream, so a fit is a pure function
//! of (data, init, options).

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emtd::PriorConfig;
use crate::error::{EtprError, Result};
use crate::kernels::KernelParams;
use crate::model::{value_and_gradient, CurveData, EtprModel, Objective, ParamLayout, NU_MIN};
use crate::optim::{maximize, OptimOptions, OptimOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gpr")]
    Gpr,
    #[serde(rename = "etpr")]
    EtprMle,
    #[serde(rename = "betpr")]
    BetprMap,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gpr => "gpr",
            Method::EtprMle => "etpr",
            Method::BetprMap => "betpr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Random starts in addition to the initial model.
    pub restarts: usize,
    pub seed: u64,
    /// Minimum log-posterior gain for keeping an indicator toggle.
    pub tol_select: f64,
    pub max_sweeps: usize,
    /// Enumerate every indicator configuration when there are at most this many.
    pub exhaustive_limit: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optim: OptimOptions::default(),
            restarts: 5,
            seed: 0,
            tol_select: 1e-4,
            max_sweeps: 10,
            exhaustive_limit: 256,
        }
    }
}

/// Inclusion indicators of one curve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveMask {
    pub gamma: Vec<bool>,
    pub delta: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: EtprModel,
    pub method: Method,
    /// True when the indicators were searched (BeTPR with variable selection).
    pub selected: bool,
    pub objective: f64,
    pub trace: Vec<(usize, f64)>,
    pub converged: bool,
    pub grad_norm: f64,
    pub mask: Vec<CurveMask>,
    pub restarts_used: usize,
}

impl FitResult {
    pub fn objective_kind(&self, priors: &PriorConfig) -> Objective {
        objective_for(self.method, priors)
    }
}

pub fn objective_for(method: Method, priors: &PriorConfig) -> Objective {
    match method {
        Method::Gpr => Objective::Gaussian,
        Method::EtprMle => Objective::Likelihood,
        Method::BetprMap => Objective::Posterior(priors.clone()),
    }
}

fn masks_of(model: &EtprModel) -> Vec<CurveMask> {
    model
        .kernels
        .iter()
        .map(|k| CurveMask {
            gamma: k.gamma.clone(),
            delta: k.delta.clone(),
        })
        .collect()
}

fn validate_data(data: &[CurveData]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| EtprError::ConfigInvalid("no curves supplied".into()))?;
    let p = first.p();
    if p == 0 {
        return Err(EtprError::ConfigInvalid("curves need at least one covariate".into()));
    }
    for c in data {
        if c.p() != p {
            return Err(EtprError::InconsistentDimensions(format!(
                "curve {} has {} covariates, expected {p}",
                c.id,
                c.p()
            )));
        }
    }
    Ok(p)
}

fn variance(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 1.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    if var > 0.0 && var.is_finite() {
        var
    } else {
        1.0
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

/// 1 / median squared pairwise distance of covariate `q` within curves.
fn length_scale_guess(data: &[CurveData], q: usize) -> f64 {
    let mut d2 = Vec::new();
    for c in data {
        for j in 0..c.n() {
            for l in 0..j {
                let d = c.x[(j, q)] - c.x[(l, q)];
                if d != 0.0 {
                    d2.push(d * d);
                }
            }
        }
    }
    match median(d2) {
        Some(m) if m > 0.0 => 1.0 / m,
        _ => 1.0,
    }
}

/// Heuristic starting point: ν = 2, σ² = 0.1·var(y), v = var(y),
/// w_q = 1/median squared distance, a_q = 1e-2.
pub fn default_init(data: &[CurveData]) -> Result<EtprModel> {
    let p = validate_data(data)?;
    let pooled = variance(data.iter().flat_map(|c| c.y.iter().copied()));
    let w: Vec<f64> = (0..p).map(|q| length_scale_guess(data, q)).collect();
    let kernels = data
        .iter()
        .map(|c| KernelParams::new(variance(c.y.iter().copied()), w.clone(), vec![1e-2; p]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EtprModel {
        nu: 2.0,
        sigma_sq: 0.1 * pooled,
        kernels,
    })
}

fn check_init(init: &EtprModel, data: &[CurveData], method: Method) -> Result<EtprModel> {
    init.validate_against(data)?;
    let mut m = init.clone();
    if method != Method::Gpr && !(m.nu > NU_MIN && m.nu.is_finite()) {
        m.nu = 2.0;
    }
    if !(m.sigma_sq > 0.0) {
        return Err(EtprError::ConfigInvalid("initial sigma_sq must be positive".into()));
    }
    Ok(m)
}

/// Random start: a log-uniform perturbation (factor up to 10) of the template
/// for the likelihood methods, a prior draw for BeTPR.
fn random_start(template: &EtprModel, method: Method, priors: &PriorConfig, rng: &mut ChaCha8Rng) -> EtprModel {
    let mut m = template.clone();
    let clamp = |x: f64| x.clamp(-9.0, 4.0).exp();
    match method {
        Method::Gpr | Method::EtprMle => {
            let ln10 = std::f64::consts::LN_10;
            let mut jitter = |x: f64| x * (rng.gen_range(-1.0..1.0) * ln10).exp();
            m.sigma_sq = jitter(m.sigma_sq);
            for k in &mut m.kernels {
                k.v = jitter(k.v);
                for q in 0..k.p() {
                    if k.gamma[q] {
                        k.w[q] = jitter(k.w[q]);
                    }
                    if k.delta[q] {
                        k.a[q] = jitter(k.a[q]);
                    }
                }
            }
            if method == Method::EtprMle {
                m.nu = (rng.gen_range(1.2f64.ln()..10f64.ln())).exp();
            }
        }
        Method::BetprMap => {
            let lognormal = |mu: f64, var: f64, rng: &mut ChaCha8Rng| {
                clamp(Normal::new(mu, var.sqrt()).expect("positive variance").sample(rng))
            };
            m.sigma_sq = lognormal(priors.mu4, priors.sigma4_sq, rng);
            let inv_w = Gamma::new(priors.alpha1, 1.0 / priors.w_ig_scale()).expect("valid gamma");
            for k in &mut m.kernels {
                k.v = lognormal(priors.mu3, priors.sigma3_sq, rng);
                for q in 0..k.p() {
                    if k.gamma[q] {
                        k.w[q] = clamp((1.0 / inv_w.sample(rng)).ln());
                    }
                    if k.delta[q] {
                        k.a[q] = lognormal(priors.mu2, priors.sigma2_sq, rng);
                    }
                }
            }
            // π(ν) ∝ ν⁻² on [1, ∞): inverse CDF, capped at 20
            let u: f64 = rng.gen_range(0.0..1.0);
            m.nu = (1.0 / (1.0 - u)).clamp(1.05, 20.0);
        }
    }
    m
}

fn run_start(
    objective: &Objective,
    start: &EtprModel,
    data: &[CurveData],
    opts: &OptimOptions,
) -> Result<(OptimOutcome, ParamLayout)> {
    let layout = ParamLayout::new(start, objective.has_nu());
    let theta0 = layout.to_vector(start);
    let outcome = maximize(
        |theta| value_and_gradient(objective, &layout.to_model(theta, start), data, &layout),
        theta0,
        opts,
    )?;
    Ok((outcome, layout))
}

/// Fits `method` with multi-start BFGS. `init` fixes the masks and start 0;
/// without it the heuristic initial model with every parameter included is used.
pub fn fit(
    method: Method,
    data: &[CurveData],
    priors: &PriorConfig,
    init: Option<&EtprModel>,
    opts: &FitOptions,
) -> Result<FitResult> {
    validate_data(data)?;
    if method == Method::BetprMap {
        priors.validate()?;
    }
    let template = match init {
        Some(m) => check_init(m, data, method)?,
        None => default_init(data)?,
    };
    let objective = objective_for(method, priors);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![template.clone()];
    for _ in 0..opts.restarts {
        starts.push(random_start(&template, method, priors, &mut rng));
    }

    let outcomes: Vec<Result<(OptimOutcome, ParamLayout)>> = starts
        .par_iter()
        .map(|s| run_start(&objective, s, data, &opts.optim))
        .collect();

    let mut best: Option<(usize, OptimOutcome, ParamLayout)> = None;
    let mut last_err = None;
    for (idx, res) in outcomes.into_iter().enumerate() {
        match res {
            Ok((o, layout)) => {
                let better = best.as_ref().map_or(true, |(_, b, _)| o.value > b.value);
                if better {
                    best = Some((idx, o, layout));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((idx, outcome, layout)) = best else {
        return Err(EtprError::OptimizationFailed(format!(
            "all {} starts failed{}",
            starts.len(),
            last_err.map(|e| format!(": {e}")).unwrap_or_default()
        )));
    };
    let mut model = layout.to_model(&outcome.theta, &starts[idx]);
    if method == Method::Gpr {
        model.nu = f64::INFINITY;
    }
    Ok(FitResult {
        mask: masks_of(&model),
        model,
        method,
        selected: false,
        objective: outcome.value,
        trace: outcome.trace,
        converged: outcome.converged,
        grad_norm: outcome.grad_norm,
        restarts_used: starts.len(),
    })
}

pub fn fit_gpr(data: &[CurveData], init: Option<&EtprModel>, opts: &FitOptions) -> Result<FitResult> {
    fit(Method::Gpr, data, &PriorConfig::default(), init, opts)
}

pub fn fit_etpr_mle(data: &[CurveData], init: Option<&EtprModel>, opts: &FitOptions) -> Result<FitResult> {
    fit(Method::EtprMle, data, &PriorConfig::default(), init, opts)
}

pub fn fit_betpr_map(
    data: &[CurveData],
    priors: &PriorConfig,
    init: Option<&EtprModel>,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit(Method::BetprMap, data, priors, init, opts)
}

/// One inclusion indicator: (curve, covariate, which block).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Indicator {
    Gamma { curve: usize, q: usize },
    Delta { curve: usize, q: usize },
}

fn indicators(model: &EtprModel) -> Vec<Indicator> {
    let mut out = Vec::new();
    for (curve, k) in model.kernels.iter().enumerate() {
        out.extend((0..k.p()).map(|q| Indicator::Gamma { curve, q }));
        out.extend((0..k.p()).map(|q| Indicator::Delta { curve, q }));
    }
    out
}

fn is_included(model: &EtprModel, ind: Indicator) -> bool {
    match ind {
        Indicator::Gamma { curve, q } => model.kernels[curve].gamma[q],
        Indicator::Delta { curve, q } => model.kernels[curve].delta[q],
    }
}

/// Returns `model` with `ind` set to `included`; newly included parameters
/// restart from the heuristic values in `defaults`.
fn with_indicator(model: &EtprModel, ind: Indicator, included: bool, defaults: &EtprModel) -> EtprModel {
    let mut m = model.clone();
    match ind {
        Indicator::Gamma { curve, q } => {
            let w0 = defaults.kernels[curve].w[q];
            m.kernels[curve].set_gamma(q, included, w0)
        }
        Indicator::Delta { curve, q } => {
            let a0 = defaults.kernels[curve].a[q];
            m.kernels[curve].set_delta(q, included, a0)
        }
    }
    m
}

fn refit(data: &[CurveData], priors: &PriorConfig, start: &EtprModel, opts: &FitOptions) -> Result<FitResult> {
    let single = FitOptions {
        restarts: 0,
        ..opts.clone()
    };
    let mut r = fit(Method::BetprMap, data, priors, Some(start), &single)?;
    r.selected = true;
    Ok(r)
}

/// Toggles indicator `ind` of `incumbent.model`, re-optimizes from that warm
/// start and returns the refit.
pub fn toggle_and_refit(
    data: &[CurveData],
    priors: &PriorConfig,
    incumbent: &EtprModel,
    ind: Indicator,
    opts: &FitOptions,
) -> Result<FitResult> {
    let defaults = default_init(data)?;
    let start = with_indicator(incumbent, ind, !is_included(incumbent, ind), &defaults);
    refit(data, priors, &start, opts)
}

pub fn all_indicators(model: &EtprModel) -> Vec<Indicator> {
    indicators(model)
}

/// BeTPR with spike-and-slab selection of the w and a parameters.
///
/// Starts from the all-included MAP fit. Small problems (at most
/// `exhaustive_limit` indicator configurations) are enumerated; larger ones use
/// greedy sweeps that keep a toggle only when the log-posterior improves by
/// more than `tol_select`.
pub fn select_spike_slab(
    data: &[CurveData],
    priors: &PriorConfig,
    init: Option<&EtprModel>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let p = validate_data(data)?;
    if p < 1 {
        return Err(EtprError::ConfigInvalid("selection needs p >= 1".into()));
    }
    let defaults = default_init(data)?;
    let mut base = fit(Method::BetprMap, data, priors, init, opts)?;
    base.selected = true;
    let inds = indicators(&base.model);
    let mut refits = base.restarts_used;

    let configs = 1usize.checked_shl(inds.len() as u32).unwrap_or(usize::MAX);
    if configs <= opts.exhaustive_limit {
        let include_all = base.model.clone();
        // mask index 0 keeps every indicator as in the base fit
        let results: Vec<Result<FitResult>> = (1..configs)
            .into_par_iter()
            .map(|bits| {
                let mut start = include_all.clone();
                for (b, &ind) in inds.iter().enumerate() {
                    if bits & (1 << b) != 0 {
                        start = with_indicator(&start, ind, !is_included(&include_all, ind), &defaults);
                    }
                }
                refit(data, priors, &start, opts)
            })
            .collect();
        let mut best = base;
        for r in results.into_iter().flatten() {
            refits += 1;
            if r.objective > best.objective {
                best = r;
            }
        }
        best.restarts_used = refits;
        return Ok(best);
    }

    let mut incumbent = base;
    for _ in 0..opts.max_sweeps {
        let mut changed = false;
        for &ind in &inds {
            let Ok(candidate) = toggle_and_refit(data, priors, &incumbent.model, ind, opts) else {
                refits += 1;
                continue;
            };
            refits += 1;
            if candidate.objective > incumbent.objective + opts.tol_select {
                incumbent = candidate;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    incumbent.restarts_used = refits;
    Ok(incumbent)
}

/// Objective of `result` re-evaluated from its model.
pub fn recompute_objective(result: &FitResult, data: &[CurveData], priors: &PriorConfig) -> Result<f64> {
    result.objective_kind(priors).value(&result.model, data)
}

/// Gradient of the method's objective at the fitted model.
pub fn gradient_at(result: &FitResult, data: &[CurveData], priors: &PriorConfig) -> Result<DVector<f64>> {
    let objective = result.objective_kind(priors);
    let layout = ParamLayout::new(&result.model, objective.has_nu());
    Ok(value_and_gradient(&objective, &result.model, data, &layout)?.1)
}
