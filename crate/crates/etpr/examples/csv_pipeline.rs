//! End-to-end file workflow through the command-line driver: write a data
//! CSV, fit BeTPR, predict at query points and print the report.
//!
//! ```text
//! cargo run --release --example csv_pipeline -- [output dir]
//! ```

use std::fs;
use std::path::PathBuf;

use etpr::cli;
use etpr::io::save_curves;
use etpr::simulate::{replication_dataset, replication_rng, SimConfig};

fn main() -> etpr::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("etpr_csv_pipeline"));
    fs::create_dir_all(&dir)?;

    let config = SimConfig::for_case(3, 3, 1, 11)?;
    let data = replication_dataset(&config, &mut replication_rng(11, 0))?;
    save_curves(dir.join("train.csv"), &data.train())?;

    let mut query = String::from("curve_id,x1\n");
    for c in &data.curves {
        for &j in c.test.iter().step_by(8) {
            query.push_str(&format!("{},{}\n", c.full.id, c.full.x[(j, 0)]));
        }
    }
    fs::write(dir.join("query.csv"), query)?;

    let path = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let steps: [Vec<String>; 3] = [
        ["fit", "--data", &path("train.csv"), "--model", "betpr", "--out", &path("model.json")]
            .map(String::from)
            .to_vec(),
        [
            "predict", "--fitted", &path("model.json"), "--data", &path("train.csv"), "--query",
            &path("query.csv"), "--out", &path("pred.csv"),
        ]
        .map(String::from)
        .to_vec(),
        ["report", "--fitted", &path("model.json")].map(String::from).to_vec(),
    ];
    for args in steps {
        let code = cli::run(std::iter::once("etpr".to_string()).chain(args));
        if code != 0 {
            std::process::exit(code);
        }
    }
    print!("{}", fs::read_to_string(dir.join("pred.csv"))?);
    Ok(())
}
