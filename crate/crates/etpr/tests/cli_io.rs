use std::fs;
use std::path::{Path, PathBuf};

use etpr::cli;
use etpr::io::{parse_curves, parse_queries, read_curves, save_curves, write_curves, ModelFile};
use etpr::predict::predict_batch;
use etpr::simulate::{replication_dataset, replication_rng, SimConfig};
use etpr::{CurveData, EtprError};
use nalgebra::DMatrix;
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    std::env::set_var("ETPR_LOG", "quiet");
    cli::run(std::iter::once("etpr").chain(args.iter().copied()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn case1_file(dir: &Path, m: usize) -> (PathBuf, Vec<CurveData>) {
    let config = SimConfig::for_case(1, m, 1, 3).unwrap();
    let data = replication_dataset(&config, &mut replication_rng(3, 0)).unwrap().train();
    let path = dir.join("train.csv");
    save_curves(&path, &data).unwrap();
    (path, data)
}

#[test]
fn two_curves_three_rows_each() {
    let text = "curve_id,t,x1,y\na,0,0.1,1\na,1,0.2,2\nb,0,0.1,3\na,2,0.3,4\nb,1,0.2,5\nb,2,0.3,6\n";
    let curves = read_curves(text.as_bytes()).unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!((curves[0].id.as_str(), curves[0].n()), ("a", 3));
    assert_eq!((curves[1].id.as_str(), curves[1].n()), ("b", 3));
    assert_eq!(curves[0].y.as_slice(), &[1.0, 2.0, 4.0]);
}

#[test]
fn write_then_parse_round_trips() {
    let dir = TempDir::new().unwrap();
    let config = SimConfig::for_case(5, 3, 1, 9).unwrap();
    let data = replication_dataset(&config, &mut replication_rng(9, 0)).unwrap().train();
    let mut buf = Vec::new();
    write_curves(&mut buf, &data).unwrap();
    let back = read_curves(buf.as_slice()).unwrap();
    assert_eq!(back, data);

    let path = dir.path().join("d.csv");
    save_curves(&path, &back).unwrap();
    assert_eq!(parse_curves(&path).unwrap(), data);
}

#[test]
fn missing_y_is_a_parse_error_naming_the_line() {
    let text = "curve_id,t,x1,y\na,0,0.1,1\na,1,0.2,\n";
    match read_curves(text.as_bytes()) {
        Err(EtprError::ParseError { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }

    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.csv"), text).unwrap();
    let code = run(&["fit", "--data", &p(dir.path(), "bad.csv"), "--model", "gpr", "--out", &p(dir.path(), "m.json")]);
    assert_eq!(code, 2);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let (data, _) = case1_file(dir.path(), 2);
    let data = data.to_string_lossy().into_owned();
    assert_eq!(run(&["fit", "--data", &data, "--model", "bogus", "--out", &p(dir.path(), "m.json")]), 2);
    assert_eq!(run(&["simulate", "--case", "7", "--out", &p(dir.path(), "sim")]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn fit_writes_one_kernel_block_per_curve() {
    let dir = TempDir::new().unwrap();
    let (data, curves) = case1_file(dir.path(), 3);
    let out = p(dir.path(), "m.json");
    assert_eq!(run(&["fit", "--data", &data.to_string_lossy(), "--model", "betpr", "--out", &out]), 0);

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for field in ["method", "nu", "sigma_sq", "curves"] {
        assert!(json.get(field).is_some(), "missing {field}");
    }
    let blocks = json["curves"].as_array().unwrap();
    assert_eq!(blocks.len(), curves.len());
    for (block, curve) in blocks.iter().zip(&curves) {
        assert_eq!(block["id"], curve.id.as_str());
        for field in ["v", "w", "a", "gamma", "delta"] {
            assert!(block.get(field).is_some(), "missing {field}");
        }
    }
}

#[test]
fn refit_from_written_model_reproduces_objective() {
    let dir = TempDir::new().unwrap();
    let (data, _) = case1_file(dir.path(), 2);
    let data = data.to_string_lossy().into_owned();
    for model in ["gpr", "etpr", "betpr"] {
        let first = p(dir.path(), &format!("{model}.json"));
        let second = p(dir.path(), &format!("{model}_again.json"));
        assert_eq!(run(&["fit", "--data", &data, "--model", model, "--out", &first]), 0);
        let args = ["fit", "--data", &data, "--model", model, "--init", &first, "--restarts", "0", "--out", &second];
        assert_eq!(run(&args), 0);
        let a = ModelFile::load(&first).unwrap().objective.unwrap();
        let b = ModelFile::load(&second).unwrap().objective.unwrap();
        assert!((a - b).abs() < 1e-8, "{model}: {a} vs {b}");
    }
}

fn fit_and_query(dir: &Path, query: &str) -> (String, Vec<CurveData>) {
    let (data, curves) = case1_file(dir, 2);
    let data = data.to_string_lossy().into_owned();
    assert_eq!(run(&["fit", "--data", &data, "--model", "etpr", "--out", &p(dir, "m.json")]), 0);
    fs::write(dir.join("q.csv"), query).unwrap();
    let args = [
        "predict", "--fitted", &p(dir, "m.json"), "--data", &data, "--query", &p(dir, "q.csv"), "--out", &p(dir, "pred.csv"),
    ];
    assert_eq!(run(&args), 0);
    (fs::read_to_string(dir.join("pred.csv")).unwrap(), curves)
}

#[test]
fn empty_query_gives_header_only() {
    let dir = TempDir::new().unwrap();
    let (out, _) = fit_and_query(dir.path(), "curve_id,x1\n");
    assert_eq!(out, "curve_id,x1,mean,variance,df\n");
}

#[test]
fn predict_output_matches_library() {
    let dir = TempDir::new().unwrap();
    let query = "curve_id,x1\ncurve2,0.5\ncurve1,1.25\ncurve1,2.9\ncurve2,0\n";
    let (out, curves) = fit_and_query(dir.path(), query);
    let model = ModelFile::load(dir.path().join("m.json")).unwrap().to_model().unwrap();
    let (_, queries) = parse_queries(dir.path().join("q.csv")).unwrap();

    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), queries.len());
    for (row, q) in rows.iter().zip(&queries) {
        let index = curves.iter().position(|c| c.id == q.curve_id).unwrap();
        let u = DMatrix::from_row_slice(1, 1, &q.x);
        let expected = predict_batch(&model, &curves[index], index, &u).unwrap()[0];
        assert_eq!(&row[0], q.curve_id.as_str());
        let got: Vec<f64> = (2..5).map(|c| row[c].parse().unwrap()).collect();
        assert_eq!(got, vec![expected.mean, expected.variance, expected.df]);
    }
}

#[test]
fn unknown_curve_in_query_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (data, _) = case1_file(dir.path(), 2);
    let data = data.to_string_lossy().into_owned();
    assert_eq!(run(&["fit", "--data", &data, "--model", "gpr", "--out", &p(dir.path(), "m.json")]), 0);
    fs::write(dir.path().join("q.csv"), "curve_id,x1\nnobody,0.5\n").unwrap();
    let args = [
        "predict", "--fitted", &p(dir.path(), "m.json"), "--data", &data, "--query", &p(dir.path(), "q.csv"),
        "--out", &p(dir.path(), "pred.csv"),
    ];
    assert_ne!(run(&args), 0);
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let outputs: Vec<Vec<(String, Vec<u8>)>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = p(dir.path(), name);
            let args = ["simulate", "--case", "1", "--m", "2", "--reps", "5", "--seed", "7", "--out", &out];
            assert_eq!(run(&args), 0);
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
                })
                .collect();
            files.sort();
            files
        })
        .collect();
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn report_reads_fitted_model_and_records() {
    let dir = TempDir::new().unwrap();
    let (data, _) = case1_file(dir.path(), 2);
    assert_eq!(run(&["fit", "--data", &data.to_string_lossy(), "--model", "gpr", "--out", &p(dir.path(), "m.json")]), 0);
    assert_eq!(run(&["report", "--fitted", &p(dir.path(), "m.json")]), 0);

    let sim = p(dir.path(), "sim");
    assert_eq!(run(&["simulate", "--case", "1", "--m", "2", "--reps", "2", "--methods", "gpr", "--out", &sim]), 0);
    assert_eq!(run(&["report", "--records", &p(Path::new(&sim), "replications.csv")]), 0);
}
