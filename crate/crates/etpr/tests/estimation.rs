use etpr::emtd::EmtdSpec;
use etpr::estimate::{
    all_indicators, fit, fit_etpr_mle, fit_gpr, select_spike_slab, toggle_and_refit, FitOptions, Method,
};
use etpr::model::{marginal_loglik, CurveData, EtprModel};
use etpr::simulate::{gen_case, inject_outlier, replication_rng, OutlierScope, SimConfig};
use etpr::{KernelParams, PriorConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn draw_curve(id: &str, kernel: &KernelParams, x: DMatrix<f64>, noise_var: f64, rng: &mut ChaCha8Rng) -> CurveData {
    let cov = kernel.gram(&x).unwrap().add_diagonal(noise_var.max(1e-10));
    let spec = EmtdSpec::centered(1e8, 1e8 - 1.0, cov).unwrap();
    let y = spec.sample(rng).unwrap();
    CurveData::new(id, x, y).unwrap()
}

#[test]
fn gpr_recovers_kernel_from_noise_free_curve() {
    // squared-exponential only: a linear term is a single random slope per
    // curve and cannot be recovered from one draw
    let truth = KernelParams::with_mask(1.0, vec![2.0], vec![0.0], vec![true], vec![false]).unwrap();
    let x = DMatrix::from_fn(30, 1, |r, _| 10.0 * r as f64 / 29.0);
    let runs = 10;
    let mut hits = 0;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curve = draw_curve("c", &truth, x.clone(), 0.0, &mut rng);
        let mut start = etpr::estimate::default_init(std::slice::from_ref(&curve)).unwrap();
        start.kernels[0].set_delta(0, false, 0.0);
        let r = fit_gpr(&[curve], Some(&start), &FitOptions::default()).unwrap();
        let k = &r.model.kernels[0];
        let close = [(k.v, truth.v), (k.w[0], truth.w[0])]
            .iter()
            .all(|(est, t)| (est.ln() - t.ln()).abs() < 0.5);
        hits += close as usize;
    }
    assert!(hits * 10 >= runs as usize * 8, "{hits} of {runs} runs recovered");
}

#[test]
fn noise_variance_recovered_from_pure_noise() {
    let sigma0_sq: f64 = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data: Vec<CurveData> = (0..5)
        .map(|i| {
            let x = DMatrix::from_fn(50, 1, |r, _| 3.0 * r as f64 / 49.0);
            let y = DVector::from_fn(50, |_, _| sigma0_sq.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal));
            CurveData::new(format!("c{i}"), x, y).unwrap()
        })
        .collect();
    // maximum likelihood only: the default v prior sits at the noise level
    for method in [Method::Gpr, Method::EtprMle] {
        let r = fit(method, &data, &PriorConfig::default(), None, &FitOptions::default()).unwrap();
        let ratio = r.model.sigma_sq / sigma0_sq;
        assert!((ratio - 1.0).abs() < 0.3, "{method}: sigma_sq {} vs {sigma0_sq}", r.model.sigma_sq);
    }
}

#[test]
fn outlier_lowers_etpr_nu() {
    let config = SimConfig::for_case(1, 2, 1, 0).unwrap();
    let mut lower = 0;
    let reps = 50;
    for rep in 0..reps {
        let mut rng = replication_rng(99, rep);
        let clean = gen_case(&config, &mut rng).unwrap();
        let dirty = inject_outlier(&clean, OutlierScope::PerCurve, &mut rng);
        let opts = FitOptions {
            seed: rep as u64,
            ..FitOptions::default()
        };
        let nu_clean = fit_etpr_mle(&clean.train(), None, &opts).unwrap().model.nu;
        let nu_dirty = fit_etpr_mle(&dirty.train(), None, &opts).unwrap().model.nu;
        lower += (nu_dirty < nu_clean) as usize;
    }
    assert!(lower * 2 > reps, "outlier lowered nu in {lower} of {reps} replications");
}

#[test]
fn flat_priors_wash_out() {
    // many curves with their own mixing draw, so ν is identified by the data;
    // w keeps its inverse-gamma tail at any variance, so curves are dense
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kernel = KernelParams::with_mask(0.8, vec![1.5], vec![0.0], vec![true], vec![false]).unwrap();
    let data: Vec<CurveData> = (0..20)
        .map(|i| {
            let x = DMatrix::from_fn(100, 1, |r, _| r as f64 * 0.15);
            let cov = kernel.gram(&x).unwrap().add_diagonal(0.1);
            let y = EmtdSpec::centered(2.5, 1.5, cov).unwrap().sample(&mut rng).unwrap();
            CurveData::new(format!("c{i}"), x, y).unwrap()
        })
        .collect();
    let flat = PriorConfig {
        // inverse gamma with mean 1 and variance 1000
        alpha1: 2.001,
        mu1: 1.0 / 1.001,
        sigma2_sq: 1e6,
        sigma3_sq: 1e6,
        sigma4_sq: 1e6,
        kappa: 1.0 - 1e-9,
        ..PriorConfig::default()
    };
    let opts = FitOptions::default();
    let init = {
        let mut m = etpr::estimate::default_init(&data).unwrap();
        for k in &mut m.kernels {
            k.set_delta(0, false, 0.0);
        }
        m
    };
    let map = fit(Method::BetprMap, &data, &flat, Some(&init), &opts).unwrap();
    // the likelihood has local optima in the per-curve parameters
    let mle = [Some(&init), Some(&map.model)]
        .into_iter()
        .map(|start| fit_etpr_mle(&data, start, &opts).unwrap())
        .max_by(|a, b| a.objective.total_cmp(&b.objective))
        .unwrap();
    let ll_map = marginal_loglik(&map.model, &data).unwrap();
    let ll_mle = mle.objective;
    assert!(
        (ll_map - ll_mle).abs() < 0.01 * ll_mle.abs(),
        "MAP loglik {ll_map} (nu {}), MLE loglik {ll_mle} (nu {})",
        map.model.nu,
        mle.model.nu
    );
}

fn selection_data(seed: u64, p: usize) -> Vec<CurveData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..p).map(|q| if q == 0 { 2.0 } else { 0.0 }).collect();
    let a: Vec<f64> = (0..p).map(|q| if q == 0 { 0.5 } else { 0.0 }).collect();
    let mask: Vec<bool> = (0..p).map(|q| q == 0).collect();
    let kernel = KernelParams::with_mask(1.0, w, a, mask.clone(), mask).unwrap();
    (0..2)
        .map(|i| {
            let x = DMatrix::from_fn(20, p, |r, q| {
                if q == 0 {
                    -2.0 + 4.0 * r as f64 / 19.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            });
            draw_curve(&format!("c{i}"), &kernel, x, 0.01, &mut rng)
        })
        .collect()
}

#[test]
fn selected_mask_is_locally_optimal() {
    let data = selection_data(1, 1);
    let priors = PriorConfig::default();
    let opts = FitOptions::default();
    let best = select_spike_slab(&data, &priors, None, &opts).unwrap();
    for ind in all_indicators(&best.model) {
        let r = toggle_and_refit(&data, &priors, &best.model, ind, &opts).unwrap();
        assert!(r.objective <= best.objective + opts.tol_select, "{ind:?}: {} > {}", r.objective, best.objective);
    }
}

#[test]
fn greedy_never_beats_exhaustive() {
    let priors = PriorConfig::default();
    for seed in 0..4 {
        let data = selection_data(10 + seed, 1);
        let exhaustive = select_spike_slab(&data, &priors, None, &FitOptions::default()).unwrap();
        let greedy_opts = FitOptions {
            exhaustive_limit: 0,
            ..FitOptions::default()
        };
        let greedy = select_spike_slab(&data, &priors, None, &greedy_opts).unwrap();
        assert!(greedy.objective <= exhaustive.objective + 1e-6, "seed {seed}");
        assert!(exhaustive.selected && greedy.selected);
    }
}

#[test]
fn informative_covariate_is_retained() {
    // a clear linear trend plus a smooth bump: both kernel terms are needed
    let priors = PriorConfig::default();
    let runs = 10;
    let mut kept = 0;
    let mut total = 0;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let data: Vec<CurveData> = (0..2)
            .map(|i| {
                let x = DMatrix::from_fn(20, 1, |r, _| -2.0 + 4.0 * r as f64 / 19.0);
                let y = DVector::from_fn(20, |r, _| {
                    let t = x[(r, 0)];
                    1.5 * t + (2.0 * t).sin() + 0.1 * rng.gen_range(-1.0..1.0)
                });
                CurveData::new(format!("c{i}"), x, y).unwrap()
            })
            .collect();
        let r = select_spike_slab(&data, &priors, None, &FitOptions::default()).unwrap();
        for k in &r.model.kernels {
            kept += k.gamma[0] as usize + k.delta[0] as usize;
            total += 2;
        }
    }
    assert!(kept * 10 >= total * 9, "{kept} of {total} indicators retained");
}

#[test]
fn irrelevant_linear_terms_are_dropped() {
    let priors = PriorConfig::default();
    let mut dropped = 0;
    let mut total = 0;
    for seed in 0..10 {
        let data = selection_data(200 + seed, 3);
        let r = select_spike_slab(&data, &priors, None, &FitOptions::default()).unwrap();
        for k in &r.model.kernels {
            dropped += k.delta[1..].iter().filter(|d| !**d).count();
            total += 2;
        }
    }
    assert!(dropped * 100 >= total * 85, "{dropped} of {total} irrelevant a dropped");
}

#[test]
fn case5_design_without_linear_terms_drops_them() {
    let mut config = SimConfig::for_case(5, 2, 1, 0).unwrap();
    config.beta0.a = vec![0.0; 3];
    config.beta0.delta = vec![false; 3];
    let priors = PriorConfig::default();
    let mut dropped = 0;
    let mut total = 0;
    for rep in 0..100 {
        let data = gen_case(&config, &mut replication_rng(31, rep)).unwrap().train();
        let r = select_spike_slab(&data, &priors, None, &FitOptions::default()).unwrap();
        for k in &r.model.kernels {
            dropped += k.delta.iter().filter(|d| !**d).count();
            total += k.delta.len();
        }
    }
    assert!(dropped * 100 >= total * 85, "{dropped} of {total} a indicators dropped");
}

#[test]
fn refit_from_fitted_model_reproduces_objective() {
    let data = selection_data(3, 1);
    let priors = PriorConfig::default();
    let opts = FitOptions::default();
    for method in [Method::Gpr, Method::EtprMle, Method::BetprMap] {
        let first = fit(method, &data, &priors, None, &opts).unwrap();
        let init: EtprModel = first.model.clone();
        let again = fit(method, &data, &priors, Some(&init), &opts).unwrap();
        assert!(again.objective >= first.objective - 1e-8, "{method}");
        assert!(again.trace.windows(2).all(|w| w[1].1 >= w[0].1));
    }
}

#[test]
fn ascent_trace_is_monotone_for_every_method() {
    let y = DVector::from_vec(vec![0.1, 0.4, -0.3, 0.9, 2.5, 0.2, -0.1, 0.0]);
    let x = DMatrix::from_fn(8, 1, |r, _| r as f64 * 0.3);
    let data = vec![CurveData::new("c", x, y).unwrap()];
    for method in [Method::Gpr, Method::EtprMle, Method::BetprMap] {
        let r = fit(method, &data, &PriorConfig::default(), None, &FitOptions::default()).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1].1 >= w[0].1), "{method}");
    }
}
