//! Simulation cases, outlier injection and the replication harness.
//!
//! Cases 1–4 use one covariate on 50 evenly spaced points in [0, 3] and the
//! kernel β₀ = (0.025, 2, 0.025):
//!
//! 1. f ~ GP, ε ~ N(0, σ²)
//! 2. f ~ GP, ε ~ σ·t₂
//! 3. f ~ ETP(2, 2), ε ~ ETP(2, 2) independent
//! 4. f and ε share one mixing draw r ~ IG(2, 2)
//!
//! Cases 5–6 use three covariates (the first evenly spaced in [5, 10], the
//! others N(0, 0.1)) with β = (0.5, w = (1, 0, 0), a = (0.5, 0, 0)); case 5 is
//! Gaussian and case 6 follows case 3's law.
//!
//! Replication r draws from stream r of a ChaCha generator seeded with the
//! study seed, so results do not depend on scheduling or thread count.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emtd::{sample_inverse_gamma, PriorConfig};
use crate::error::{EtprError, Result};
use crate::estimate::{fit, select_spike_slab, FitOptions, FitResult, Method};
use crate::kernels::KernelParams;
use crate::model::CurveData;
use crate::numerics::{chol_with_jitter, default_base_jitter};
use crate::predict::predict_batch;

/// Where the extra t₂ error goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierScope {
    /// One training point in every curve.
    PerCurve,
    /// One training point in one randomly chosen curve.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub case: u8,
    pub m: usize,
    pub n_train: usize,
    pub n_total: usize,
    pub p: usize,
    pub reps: usize,
    pub seed: u64,
    pub inject_outlier: bool,
    pub outlier_scope: OutlierScope,
    pub beta0: KernelParams,
    pub sigma0_sq: f64,
}

impl SimConfig {
    /// Standard settings for `case`: n = 10 of N = 50 points for training,
    /// σ₀² = 0.05, outliers in cases 1, 3 and 4.
    pub fn for_case(case: u8, m: usize, reps: usize, seed: u64) -> Result<Self> {
        let (p, beta0) = match case {
            1..=4 => (1, KernelParams::new(0.025, vec![2.0], vec![0.025])?),
            5 | 6 => (
                3,
                KernelParams::with_mask(
                    0.5,
                    vec![1.0, 0.0, 0.0],
                    vec![0.5, 0.0, 0.0],
                    vec![true, false, false],
                    vec![true, false, false],
                )?,
            ),
            _ => return Err(EtprError::ConfigInvalid(format!("case must be 1..6, got {case}"))),
        };
        let config = SimConfig {
            case,
            m,
            n_train: 10,
            n_total: 50,
            p,
            reps,
            seed,
            inject_outlier: matches!(case, 1 | 3 | 4),
            outlier_scope: OutlierScope::PerCurve,
            beta0,
            sigma0_sq: 0.05,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.case) {
            return Err(EtprError::ConfigInvalid(format!("case must be 1..6, got {}", self.case)));
        }
        if self.m == 0 || self.reps == 0 {
            return Err(EtprError::ConfigInvalid("m and reps must be positive".into()));
        }
        if self.n_train == 0 || self.n_train >= self.n_total {
            return Err(EtprError::ConfigInvalid("need 0 < n_train < n_total".into()));
        }
        let expected_p = if self.case <= 4 { 1 } else { 3 };
        if self.p != expected_p || self.beta0.p() != self.p {
            return Err(EtprError::ConfigInvalid(format!(
                "case {} needs p = {expected_p} and a matching beta0",
                self.case
            )));
        }
        if !(self.sigma0_sq >= 0.0) {
            return Err(EtprError::ConfigInvalid("sigma0_sq must be nonnegative".into()));
        }
        self.beta0.validate()
    }
}

/// One simulated curve: all N points plus the train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCurve {
    pub full: CurveData,
    /// Noise-free function values at every point.
    pub signal: DVector<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SimCurve {
    pub fn train_data(&self) -> CurveData {
        self.full.subset(&self.train)
    }

    pub fn test_data(&self) -> CurveData {
        self.full.subset(&self.test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub curves: Vec<SimCurve>,
    pub truth: KernelParams,
    /// (curve, point index within the full curve)
    pub outlier_positions: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn train(&self) -> Vec<CurveData> {
        self.curves.iter().map(SimCurve::train_data).collect()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
}

fn covariates(config: &SimConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = config.n_total;
    if config.p == 1 {
        return DMatrix::from_column_slice(n, 1, &linspace(0.0, 3.0, n));
    }
    let first = linspace(5.0, 10.0, n);
    let sd = 0.1f64.sqrt();
    let mut x = DMatrix::zeros(n, config.p);
    for j in 0..n {
        x[(j, 0)] = first[j];
    }
    for q in 1..config.p {
        for j in 0..n {
            x[(j, q)] = sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    x
}

fn gaussian_draw(chol: &DMatrix<f64>, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = chol.nrows();
    let eps = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    chol * eps * scale
}

/// Generates one dataset for `config.case` (without outliers).
pub fn gen_case(config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    config.validate()?;
    let n = config.n_total;
    let sigma = config.sigma0_sq.sqrt();
    let mut curves = Vec::with_capacity(config.m);
    for i in 0..config.m {
        let x = covariates(config, rng);
        let k = config.beta0.gram(&x)?;
        let chol = chol_with_jitter(&k, default_base_jitter(&k))?.lower().clone();

        let (f_scale, noise): (f64, DVector<f64>) = match config.case {
            1 | 5 => (1.0, DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))),
            2 => {
                let t2 = StudentT::new(2.0).expect("valid df");
                (1.0, DVector::from_fn(n, |_, _| sigma * t2.sample(rng)))
            }
            3 | 6 => {
                let r_f = sample_inverse_gamma(2.0, 2.0, rng);
                let r_e = sample_inverse_gamma(2.0, 2.0, rng);
                let e = DVector::from_fn(n, |_, _| sigma * r_e.sqrt() * rng.sample::<f64, _>(StandardNormal));
                (r_f.sqrt(), e)
            }
            4 => {
                let r = sample_inverse_gamma(2.0, 2.0, rng);
                let e = DVector::from_fn(n, |_, _| sigma * r.sqrt() * rng.sample::<f64, _>(StandardNormal));
                (r.sqrt(), e)
            }
            _ => unreachable!("validated"),
        };
        let signal = gaussian_draw(&chol, f_scale, rng);
        let y = &signal + noise;
        let mut train: Vec<usize> = sample_indices(rng, n, config.n_train).into_vec();
        train.sort_unstable();
        let test: Vec<usize> = (0..n).filter(|j| train.binary_search(j).is_err()).collect();
        let t = (0..n).map(|j| j as f64).collect();
        curves.push(SimCurve {
            full: CurveData::with_times(format!("curve{}", i + 1), t, x, y)?,
            signal,
            train,
            test,
        });
    }
    Ok(Dataset {
        curves,
        truth: config.beta0.clone(),
        outlier_positions: Vec::new(),
    })
}

/// Adds an extra t₂ error to training points (see [`OutlierScope`]).
pub fn inject_outlier(dataset: &Dataset, scope: OutlierScope, rng: &mut ChaCha8Rng) -> Dataset {
    let t2 = StudentT::new(2.0).expect("valid df");
    inject_outlier_with(dataset, scope, rng, |r| t2.sample(r))
}

/// As [`inject_outlier`] with a caller-supplied perturbation draw.
pub fn inject_outlier_with<F>(dataset: &Dataset, scope: OutlierScope, rng: &mut ChaCha8Rng, mut draw: F) -> Dataset
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    let mut out = dataset.clone();
    let targets: Vec<usize> = match scope {
        OutlierScope::PerCurve => (0..out.curves.len()).collect(),
        OutlierScope::Single => vec![rng.gen_range(0..out.curves.len())],
    };
    for i in targets {
        let curve = &mut out.curves[i];
        let j = curve.train[rng.gen_range(0..curve.train.len())];
        curve.full.y[j] += draw(rng);
        out.outlier_positions.push((i, j));
    }
    out
}

/// Methods compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SimMethod {
    #[serde(rename = "GPR")]
    Gpr,
    #[serde(rename = "ETPR")]
    Etpr,
    #[serde(rename = "BETPR")]
    Betpr,
    #[serde(rename = "BETPR_VS")]
    BetprVs,
}

impl SimMethod {
    pub fn label(&self) -> &'static str {
        match self {
            SimMethod::Gpr => "GPR",
            SimMethod::Etpr => "ETPR",
            SimMethod::Betpr => "BETPR",
            SimMethod::BetprVs => "BETPR_VS",
        }
    }

    /// Default comparison for a case.
    pub fn defaults_for(case: u8) -> Vec<SimMethod> {
        if case <= 4 {
            vec![SimMethod::Gpr, SimMethod::Etpr, SimMethod::Betpr]
        } else {
            vec![SimMethod::Etpr, SimMethod::Betpr, SimMethod::BetprVs]
        }
    }
}

/// Settings shared by every fit inside a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub fit: FitOptions,
    pub priors: PriorConfig,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            fit: FitOptions::default(),
            priors: PriorConfig::default(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRecord {
    pub method: SimMethod,
    pub mse: Option<f64>,
    pub nu_hat: Option<f64>,
    /// Fraction of w indicators matching the truth (selection methods only).
    pub acc_w: Option<f64>,
    pub acc_a: Option<f64>,
    pub kernels: Vec<KernelParams>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub methods: Vec<MethodRecord>,
}

/// Mean over test points and curves of (y − ŷ)², with ŷ from `predictor(curve, u)`.
pub fn test_mse<F>(dataset: &Dataset, mut predictor: F) -> Result<f64>
where
    F: FnMut(usize, &DMatrix<f64>) -> Result<Vec<f64>>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, c) in dataset.curves.iter().enumerate() {
        let test = c.test_data();
        let pred = predictor(i, &test.x)?;
        for (y, yhat) in test.y.iter().zip(pred) {
            sum += (y - yhat).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(EtprError::ConfigInvalid("no test points".into()));
    }
    Ok(sum / count as f64)
}

/// Fraction of indicators in `fit` equal to the truth, per block (w, a).
pub fn selection_accuracy(kernels: &[KernelParams], truth: &KernelParams) -> (f64, f64) {
    let (mut hit_w, mut hit_a, mut total) = (0usize, 0usize, 0usize);
    for k in kernels {
        for q in 0..truth.p() {
            hit_w += usize::from(k.gamma[q] == truth.gamma[q]);
            hit_a += usize::from(k.delta[q] == truth.delta[q]);
            total += 1;
        }
    }
    (hit_w as f64 / total as f64, hit_a as f64 / total as f64)
}

fn fit_method(method: SimMethod, train: &[CurveData], opts: &StudyOptions, seed: u64) -> Result<FitResult> {
    let fit_opts = FitOptions {
        seed,
        ..opts.fit.clone()
    };
    match method {
        SimMethod::Gpr => fit(Method::Gpr, train, &opts.priors, None, &fit_opts),
        SimMethod::Etpr => fit(Method::EtprMle, train, &opts.priors, None, &fit_opts),
        SimMethod::Betpr => fit(Method::BetprMap, train, &opts.priors, None, &fit_opts),
        SimMethod::BetprVs => select_spike_slab(train, &opts.priors, None, &fit_opts),
    }
}

fn evaluate(method: SimMethod, dataset: &Dataset, train: &[CurveData], opts: &StudyOptions, seed: u64) -> MethodRecord {
    let outcome = fit_method(method, train, opts, seed).and_then(|r| {
        let mse = test_mse(dataset, |i, u| {
            Ok(predict_batch(&r.model, &train[i], i, u)?.into_iter().map(|p| p.mean).collect())
        })?;
        Ok((r, mse))
    });
    match outcome {
        Ok((r, mse)) => {
            let (acc_w, acc_a) = if method == SimMethod::BetprVs {
                let (w, a) = selection_accuracy(&r.model.kernels, &dataset.truth);
                (Some(w), Some(a))
            } else {
                (None, None)
            };
            MethodRecord {
                method,
                mse: Some(mse),
                nu_hat: r.model.nu.is_finite().then_some(r.model.nu),
                acc_w,
                acc_a,
                kernels: r.model.kernels,
                error: None,
            }
        }
        Err(e) => MethodRecord {
            method,
            mse: None,
            nu_hat: None,
            acc_w: None,
            acc_a: None,
            kernels: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Generator for replication `rep`: stream `rep` of the study seed.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Generates the replication's dataset (with outliers when configured).
pub fn replication_dataset(config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let clean = gen_case(config, rng)?;
    Ok(if config.inject_outlier {
        inject_outlier(&clean, config.outlier_scope, rng)
    } else {
        clean
    })
}

/// Fits every method on one shared dataset. Method failures are recorded, not raised.
pub fn run_replication(
    config: &SimConfig,
    methods: &[SimMethod],
    rep: usize,
    opts: &StudyOptions,
) -> Result<ReplicationRecord> {
    let mut rng = replication_rng(config.seed, rep);
    let dataset = replication_dataset(config, &mut rng)?;
    let train = dataset.train();
    let fit_seed = rng.next_u64();
    let methods = methods
        .iter()
        .map(|&m| evaluate(m, &dataset, &train, opts, fit_seed))
        .collect();
    Ok(ReplicationRecord { rep, methods })
}

/// Sample mean and standard deviation (n − 1 denominator; 0 when n < 2).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: SimMethod,
    pub reps: usize,
    pub failures: usize,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub nu_mean: Option<f64>,
    pub nu_sd: Option<f64>,
    pub acc_w: Option<f64>,
    pub acc_a: Option<f64>,
    /// Fewer than two successful replications; sd fields are 0 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub config: SimConfig,
    pub rows: Vec<SummaryRow>,
    pub records: Vec<ReplicationRecord>,
}

impl StudySummary {
    pub fn row(&self, method: SimMethod) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Aggregates replication records into per-method rows.
pub fn summarize(methods: &[SimMethod], records: &[ReplicationRecord]) -> Vec<SummaryRow> {
    methods
        .iter()
        .map(|&method| {
            let recs: Vec<&MethodRecord> = records
                .iter()
                .flat_map(|r| r.methods.iter().filter(move |m| m.method == method))
                .collect();
            let mses: Vec<f64> = recs.iter().filter_map(|r| r.mse).collect();
            let nus: Vec<f64> = recs.iter().filter_map(|r| r.nu_hat).collect();
            let accw: Vec<f64> = recs.iter().filter_map(|r| r.acc_w).collect();
            let acca: Vec<f64> = recs.iter().filter_map(|r| r.acc_a).collect();
            let (mse_mean, mse_sd) = mean_sd(&mses);
            let nu = (!nus.is_empty()).then(|| mean_sd(&nus));
            SummaryRow {
                method,
                reps: recs.len(),
                failures: recs.iter().filter(|r| r.error.is_some()).count(),
                mse_mean,
                mse_sd,
                nu_mean: nu.map(|x| x.0),
                nu_sd: nu.map(|x| x.1),
                acc_w: (!accw.is_empty()).then(|| mean_sd(&accw).0),
                acc_a: (!acca.is_empty()).then(|| mean_sd(&acca).0),
                degenerate: mses.len() < 2,
            }
        })
        .collect()
}

/// Runs `config.reps` replications and summarizes them.
pub fn run_study(config: &SimConfig, methods: &[SimMethod], opts: &StudyOptions) -> Result<StudySummary> {
    config.validate()?;
    if methods.is_empty() {
        return Err(EtprError::ConfigInvalid("no methods selected".into()));
    }
    let work = || -> Result<Vec<ReplicationRecord>> {
        (0..config.reps)
            .into_par_iter()
            .map(|rep| run_replication(config, methods, rep, opts))
            .collect()
    };
    let records = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| EtprError::ConfigInvalid(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let rows = summarize(methods, &records);
    for row in &rows {
        if row.failures * 5 > row.reps {
            return Err(EtprError::StudyFailed {
                method: row.method.label().to_string(),
                failures: row.failures,
                reps: row.reps,
            });
        }
    }
    Ok(StudySummary {
        config: config.clone(),
        rows,
        records,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Summary rows as CSV (full round-trip precision).
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("method,reps,failures,mse_mean,mse_sd,nu_mean,nu_sd,acc_w,acc_a,degenerate\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method.label(),
            r.reps,
            r.failures,
            r.mse_mean,
            r.mse_sd,
            opt(r.nu_mean),
            opt(r.nu_sd),
            opt(r.acc_w),
            opt(r.acc_a),
            r.degenerate
        );
    }
    s
}

/// Fixed three decimals, switching to scientific outside [1e-3, 1e6).
fn compact(x: f64) -> String {
    if x != 0.0 && x.is_finite() && !(1e-3..1e6).contains(&x.abs()) {
        format!("{x:.3e}")
    } else {
        format!("{x:.3}")
    }
}

/// Human-aligned table: MSE(sd), ν̂(sd), selection accuracy.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let header = ["method", "reps", "fail", "MSE (sd)", "nu (sd)", "acc_w", "acc_a"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            let pair = |m: Option<f64>, s: Option<f64>| match (m, s) {
                (Some(m), Some(s)) => format!("{} ({})", compact(m), compact(s)),
                _ => "-".to_string(),
            };
            let pct = |v: Option<f64>| v.map(|x| format!("{:.1}%", 100.0 * x)).unwrap_or_else(|| "-".into());
            [
                r.method.label().to_string(),
                r.reps.to_string(),
                r.failures.to_string(),
                pair(Some(r.mse_mean), Some(r.mse_sd)),
                pair(r.nu_mean, r.nu_sd),
                pct(r.acc_w),
                pct(r.acc_a),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..7)
        .map(|c| body.iter().map(|row| row[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    let line = |cells: Vec<&str>, s: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut s);
    for row in &body {
        line(row.iter().map(String::as_str).collect(), &mut s);
    }
    s
}

/// Per-replication records as CSV.
pub fn records_csv(records: &[ReplicationRecord]) -> String {
    let mut s = String::from("rep,method,mse,nu_hat,acc_w,acc_a,error\n");
    for r in records {
        for m in &r.methods {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.rep,
                m.method.label(),
                opt(m.mse),
                opt(m.nu_hat),
                opt(m.acc_w),
                opt(m.acc_a),
                m.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
        }
    }
    s
}
