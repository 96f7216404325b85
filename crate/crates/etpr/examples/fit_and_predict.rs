//! Fits GPR, eTPR and BeTPR to one simulated dataset with an outlier and
//! compares their held-out errors.
//!
//! ```text
//! cargo run --release --example fit_and_predict -- [seed]
//! ```

use etpr::estimate::{fit, FitOptions, Method};
use etpr::predict::predict_batch;
use etpr::simulate::{replication_dataset, replication_rng, SimConfig};
use etpr::PriorConfig;

fn main() -> etpr::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let config = SimConfig::for_case(1, 2, 1, seed)?;
    let data = replication_dataset(&config, &mut replication_rng(seed, 0))?;
    let train = data.train();
    for &(curve, j) in &data.outlier_positions {
        println!("outlier in {} at t = {}", data.curves[curve].full.id, data.curves[curve].full.t[j]);
    }

    let priors = PriorConfig::default();
    let opts = FitOptions::default();
    for method in [Method::Gpr, Method::EtprMle, Method::BetprMap] {
        let result = fit(method, &train, &priors, None, &opts)?;
        let mut sq = 0.0;
        let mut count = 0;
        for (i, c) in data.curves.iter().enumerate() {
            let test = c.test_data();
            let preds = predict_batch(&result.model, &train[i], i, &test.x)?;
            for (p, y) in preds.iter().zip(test.y.iter()) {
                sq += (y - p.mean).powi(2);
                count += 1;
            }
        }
        println!(
            "{:<6} nu = {:<10.4} sigma_sq = {:.4}  objective = {:.3}  test MSE = {:.4}",
            method.to_string(),
            result.model.nu,
            result.model.sigma_sq,
            result.objective,
            sq / count as f64
        );
    }
    Ok(())
}
