//! Spike-and-slab selection of kernel parameters on a three-covariate
//! dataset where only the first covariate matters.
//!
//! ```text
//! cargo run --release --example variable_selection -- [seed]
//! ```

use etpr::estimate::{select_spike_slab, FitOptions};
use etpr::simulate::{replication_dataset, replication_rng, selection_accuracy, SimConfig};
use etpr::PriorConfig;

fn main() -> etpr::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let config = SimConfig::for_case(5, 2, 1, seed)?;
    let data = replication_dataset(&config, &mut replication_rng(seed, 0))?;
    let result = select_spike_slab(&data.train(), &PriorConfig::default(), None, &FitOptions::default())?;

    println!("truth: gamma {:?} delta {:?}", data.truth.gamma, data.truth.delta);
    for (c, k) in data.curves.iter().zip(&result.model.kernels) {
        println!("{}: gamma {:?} delta {:?}  v = {:.3}", c.full.id, k.gamma, k.delta, k.v);
    }
    let (acc_w, acc_a) = selection_accuracy(&result.model.kernels, &data.truth);
    println!(
        "accuracy: w {:.0}%  a {:.0}%  ({} refits, nu = {:.3})",
        100.0 * acc_w,
        100.0 * acc_a,
        result.restarts_used,
        result.model.nu
    );
    Ok(())
}
