//! Runs a small simulation study and prints the summary table.
//!
//! ```text
//! cargo run --release --example simulation_study -- <case> <m> <reps> <seed>
//! ```

use etpr::simulate::{run_study, summary_text, SimConfig, SimMethod, StudyOptions};

fn main() -> etpr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let case = arg(0, 1) as u8;
    let config = SimConfig::for_case(case, arg(1, 2) as usize, arg(2, 20) as usize, arg(3, 2024))?;
    let methods = SimMethod::defaults_for(case);
    let start = std::time::Instant::now();
    let summary = run_study(&config, &methods, &StudyOptions::default())?;
    println!("case {case}, m = {}, {} replications", config.m, config.reps);
    print!("{}", summary_text(&summary.rows));
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
