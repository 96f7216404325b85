//! File formats: curve and query CSVs, the fitted-model JSON and the
//! prediction CSV.
//!
//! Data CSV header is `curve_id,t,x1,...,xp,y`; query CSV header is
//! `curve_id,x1,...,xp`. Rows of one curve need not be contiguous but keep
//! their file order. Floats are written with round-trip precision.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EtprError, Result};
use crate::estimate::Method;
use crate::kernels::KernelParams;
use crate::model::{CurveData, EtprModel};
use crate::predict::Predictive;

fn parse_err(line: u64, message: impl Into<String>) -> EtprError {
    EtprError::ParseError {
        line,
        message: message.into(),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

/// Checks `x1..xp` at `cols` and returns p.
fn covariate_columns(names: &[&str], line: u64) -> Result<usize> {
    for (q, name) in names.iter().enumerate() {
        let expected = format!("x{}", q + 1);
        if *name != expected {
            return Err(parse_err(line, format!("expected column `{expected}`, found `{name}`")));
        }
    }
    Ok(names.len())
}

fn read_header<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    let mut rec = csv::StringRecord::new();
    if !rdr.read_record(&mut rec)? {
        return Err(parse_err(1, "missing header row"));
    }
    let mut cols: Vec<String> = rec.iter().map(str::to_string).collect();
    if let Some(first) = cols.first_mut() {
        // tolerate a UTF-8 byte order mark
        *first = first.trim_start_matches('\u{feff}').to_string();
    }
    Ok(cols)
}

fn parse_f64(cell: &str, column: &str, line: u64) -> Result<f64> {
    if cell.is_empty() {
        return Err(parse_err(line, format!("missing value in column `{column}`")));
    }
    cell.parse::<f64>()
        .map_err(|_| parse_err(line, format!("`{cell}` in column `{column}` is not a number")))
}

/// Parses a data CSV into curves ordered by first appearance.
pub fn read_curves<R: Read>(reader: R) -> Result<Vec<CurveData>> {
    let mut rdr = csv_reader(reader);
    let header = read_header(&mut rdr)?;
    let names: Vec<&str> = header.iter().map(String::as_str).collect();
    if names.len() < 4 || names[0] != "curve_id" || names[1] != "t" || names[names.len() - 1] != "y" {
        return Err(parse_err(1, "header must be `curve_id,t,x1,...,xp,y` with p >= 1"));
    }
    let p = covariate_columns(&names[2..names.len() - 1], 1)?;

    struct Rows {
        id: String,
        t: Vec<f64>,
        x: Vec<f64>,
        y: Vec<f64>,
    }
    let mut groups: Vec<Rows> = Vec::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = record_line(&rec);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != names.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
        let id = &rec[0];
        if id.is_empty() {
            return Err(parse_err(line, "missing curve_id"));
        }
        let t = parse_f64(&rec[1], "t", line)?;
        let mut xs = Vec::with_capacity(p);
        for q in 0..p {
            xs.push(parse_f64(&rec[2 + q], names[2 + q], line)?);
        }
        let y = parse_f64(&rec[2 + p], "y", line)?;
        let g = match groups.iter_mut().position(|g| g.id == id) {
            Some(i) => &mut groups[i],
            None => {
                groups.push(Rows {
                    id: id.to_string(),
                    t: Vec::new(),
                    x: Vec::new(),
                    y: Vec::new(),
                });
                groups.last_mut().unwrap()
            }
        };
        g.t.push(t);
        g.x.extend(xs);
        g.y.push(y);
    }
    groups
        .into_iter()
        .map(|g| {
            let n = g.y.len();
            let x = DMatrix::from_row_slice(n, p, &g.x);
            CurveData::with_times(g.id, g.t, x, DVector::from_vec(g.y))
        })
        .collect()
}

pub fn parse_curves(path: impl AsRef<Path>) -> Result<Vec<CurveData>> {
    read_curves(File::open(path)?)
}

/// Writes curves in the data CSV format. All curves must share p.
pub fn write_curves<W: Write>(writer: W, curves: &[CurveData]) -> Result<()> {
    let p = curves.first().map_or(1, CurveData::p);
    if let Some(c) = curves.iter().find(|c| c.p() != p) {
        return Err(EtprError::InconsistentDimensions(format!(
            "curve `{}` has p = {}, expected {p}",
            c.id,
            c.p()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["curve_id".to_string(), "t".to_string()];
    header.extend((1..=p).map(|q| format!("x{q}")));
    header.push("y".into());
    w.write_record(&header)?;
    for c in curves {
        for j in 0..c.n() {
            let mut row = vec![c.id.clone(), c.t[j].to_string()];
            row.extend((0..p).map(|q| c.x[(j, q)].to_string()));
            row.push(c.y[j].to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_curves(path: impl AsRef<Path>, curves: &[CurveData]) -> Result<()> {
    write_curves(BufWriter::new(File::create(path)?), curves)
}

/// One row of a query CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub curve_id: String,
    pub x: Vec<f64>,
}

/// Parses a query CSV; returns p and the rows in file order.
pub fn read_queries<R: Read>(reader: R) -> Result<(usize, Vec<QueryRow>)> {
    let mut rdr = csv_reader(reader);
    let header = read_header(&mut rdr)?;
    let names: Vec<&str> = header.iter().map(String::as_str).collect();
    if names.len() < 2 || names[0] != "curve_id" {
        return Err(parse_err(1, "header must be `curve_id,x1,...,xp`"));
    }
    let p = covariate_columns(&names[1..], 1)?;
    let mut rows = Vec::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = record_line(&rec);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != names.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
        let x = (0..p)
            .map(|q| parse_f64(&rec[1 + q], names[1 + q], line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(QueryRow {
            curve_id: rec[0].to_string(),
            x,
        });
    }
    Ok((p, rows))
}

pub fn parse_queries(path: impl AsRef<Path>) -> Result<(usize, Vec<QueryRow>)> {
    read_queries(File::open(path)?)
}

/// Writes `curve_id,x1..xp,mean,variance,df`, one line per query.
pub fn write_predictions<W: Write>(writer: W, p: usize, rows: &[(QueryRow, Predictive)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["curve_id".to_string()];
    header.extend((1..=p).map(|q| format!("x{q}")));
    header.extend(["mean", "variance", "df"].map(String::from));
    w.write_record(&header)?;
    for (q, pred) in rows {
        let mut row = vec![q.curve_id.clone()];
        row.extend(q.x.iter().map(f64::to_string));
        row.extend([pred.mean, pred.variance, pred.df].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Kernel block of one curve in the model JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBlock {
    pub id: String,
    pub v: f64,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub gamma: Vec<bool>,
    pub delta: Vec<bool>,
}

/// Fitted-model JSON. `nu` is `null` for GPR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub method: Method,
    pub nu: Option<f64>,
    pub sigma_sq: f64,
    pub curves: Vec<CurveBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default)]
    pub selected: bool,
}

impl ModelFile {
    pub fn from_model(method: Method, model: &EtprModel, ids: &[String]) -> Result<Self> {
        if ids.len() != model.kernels.len() {
            return Err(EtprError::DimensionMismatch {
                expected: model.kernels.len(),
                found: ids.len(),
            });
        }
        Ok(ModelFile {
            method,
            nu: model.nu.is_finite().then_some(model.nu),
            sigma_sq: model.sigma_sq,
            curves: ids
                .iter()
                .zip(&model.kernels)
                .map(|(id, k)| CurveBlock {
                    id: id.clone(),
                    v: k.v,
                    w: k.w.clone(),
                    a: k.a.clone(),
                    gamma: k.gamma.clone(),
                    delta: k.delta.clone(),
                })
                .collect(),
            objective: None,
            converged: None,
            selected: false,
        })
    }

    pub fn to_model(&self) -> Result<EtprModel> {
        let nu = match (self.method, self.nu) {
            (Method::Gpr, _) => f64::INFINITY,
            (_, Some(nu)) => nu,
            (_, None) => {
                return Err(EtprError::ConfigInvalid(format!(
                    "method {} needs a finite nu",
                    self.method
                )))
            }
        };
        let kernels = self
            .curves
            .iter()
            .map(|c| KernelParams::with_mask(c.v, c.w.clone(), c.a.clone(), c.gamma.clone(), c.delta.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(EtprModel {
            nu,
            sigma_sq: self.sigma_sq,
            kernels,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.curves.iter().map(|c| c.id.clone()).collect()
    }

    /// Reorders `data` to match the curve order of this file.
    pub fn align<'a>(&self, data: &'a [CurveData]) -> Result<Vec<&'a CurveData>> {
        self.curves
            .iter()
            .map(|c| {
                data.iter()
                    .find(|d| d.id == c.id)
                    .ok_or_else(|| EtprError::UnknownCurveId(c.id.clone()))
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}
