//! Command-line driver behind the `etpr` binary.
//!
//! ```text
//! etpr fit      --data d.csv --model gpr|etpr|betpr [--select] [--priors p.json] [--init m.json] --out m.json
//! etpr predict  --fitted m.json --data d.csv --query q.csv --out pred.csv
//! etpr simulate --case 1..6 --m 2 --reps 100 --seed 1 --out dir [--threads 4]
//! etpr report   --fitted m.json | --records dir/replications.csv
//! ```
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
//! `ETPR_LOG=debug|info|quiet` sets stderr verbosity (default info).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::emtd::PriorConfig;
use crate::error::{EtprError, Result};
use crate::estimate::{fit, select_spike_slab, FitOptions, Method};
use crate::io::{parse_curves, parse_queries, write_predictions, ModelFile, QueryRow};
use crate::model::CurveData;
use crate::predict::predict_batch;
use crate::simulate::{
    records_csv, run_study, summarize, summary_csv, summary_text, MethodRecord, OutlierScope, ReplicationRecord,
    SimConfig, SimMethod, StudyOptions,
};

#[derive(Debug, Parser)]
#[command(name = "etpr", version, about = "Robust functional regression with the extended t-process")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit GPR, eTPR or BeTPR to a data CSV and write the model JSON.
    Fit(FitArgs),
    /// Posterior predictive at query points from a fitted model.
    Predict(PredictArgs),
    /// Run a simulation study and write summary tables.
    Simulate(SimulateArgs),
    /// Print a fitted model or re-summarize replication records.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gpr,
    Etpr,
    Betpr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gpr => Method::Gpr,
            MethodArg::Etpr => Method::EtprMle,
            MethodArg::Betpr => Method::BetprMap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimMethodArg {
    Gpr,
    Etpr,
    Betpr,
    BetprVs,
}

impl From<SimMethodArg> for SimMethod {
    fn from(m: SimMethodArg) -> Self {
        match m {
            SimMethodArg::Gpr => SimMethod::Gpr,
            SimMethodArg::Etpr => SimMethod::Etpr,
            SimMethodArg::Betpr => SimMethod::Betpr,
            SimMethodArg::BetprVs => SimMethod::BetprVs,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub model: MethodArg,
    /// Spike-and-slab search over kernel parameters (betpr only).
    #[arg(long)]
    pub select: bool,
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Model JSON used as the first start and to fix the inclusion masks.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random starts in addition to the initial model.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub fitted: PathBuf,
    /// Training data the model was fitted to.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub case: u8,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Methods to compare; defaults depend on the case.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Vec<SimMethodArg>,
    /// Training points per curve.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Put the t₂ outlier in a single curve instead of every curve.
    #[arg(long)]
    pub single_outlier: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory for summary.csv, summary.txt and replications.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, conflicts_with = "records", required_unless_present = "records")]
    pub fitted: Option<PathBuf>,
    /// replications.csv written by `simulate`.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Quiet,
    Info,
    Debug,
}

fn log_level() -> Level {
    match std::env::var("ETPR_LOG").as_deref() {
        Ok("quiet") => Level::Quiet,
        Ok("debug") => Level::Debug,
        _ => Level::Info,
    }
}

struct Log(Level);

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if self.0 >= Level::Info {
            eprintln!("etpr: {}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.0 >= Level::Debug {
            eprintln!("etpr[debug]: {}", msg.as_ref());
        }
    }
}

/// Exit code for an error: 2 for bad input, 1 for everything else.
pub fn exit_code(err: &EtprError) -> i32 {
    match err {
        EtprError::ConfigInvalid(_)
        | EtprError::ParseError { .. }
        | EtprError::InconsistentDimensions(_)
        | EtprError::DimensionMismatch { .. }
        | EtprError::UnknownCurveId(_)
        | EtprError::Json(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let log = Log(log_level());
    let stdout = std::io::stdout();
    match execute(&cli.command, &mut stdout.lock(), &log) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("etpr: error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cmd: &Command, out: &mut dyn Write, log: &Log) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a, out, log),
        Command::Predict(a) => cmd_predict(a, out, log),
        Command::Simulate(a) => cmd_simulate(a, out, log),
        Command::Report(a) => cmd_report(a, out),
    }
}

fn load_priors(path: Option<&Path>) -> Result<PriorConfig> {
    let priors = match path {
        Some(p) => serde_json::from_str::<PriorConfig>(&fs::read_to_string(p)?)?,
        None => PriorConfig::default(),
    };
    priors.validate()?;
    Ok(priors)
}

fn check_same_p(data: &[CurveData]) -> Result<()> {
    if data.is_empty() {
        return Err(EtprError::ConfigInvalid("data file has no rows".into()));
    }
    let p = data[0].p();
    if let Some(c) = data.iter().find(|c| c.p() != p) {
        return Err(EtprError::InconsistentDimensions(format!("curve `{}` has p = {}", c.id, c.p())));
    }
    Ok(())
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| EtprError::ConfigInvalid(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn cmd_fit(args: &FitArgs, out: &mut dyn Write, log: &Log) -> Result<()> {
    let method = Method::from(args.model);
    if args.select && method != Method::BetprMap {
        return Err(EtprError::ConfigInvalid("--select requires --model betpr".into()));
    }
    let priors = load_priors(args.priors.as_deref())?;
    let mut data = parse_curves(&args.data)?;
    check_same_p(&data)?;
    log.info(format!("{} curves, p = {}", data.len(), data[0].p()));

    let init = match &args.init {
        Some(path) => {
            let file = ModelFile::load(path)?;
            data = file.align(&data)?.into_iter().cloned().collect();
            Some(file.to_model()?)
        }
        None => None,
    };
    let opts = FitOptions {
        seed: args.seed,
        restarts: args.restarts,
        ..FitOptions::default()
    };
    let result = with_pool(args.threads, || {
        if args.select {
            select_spike_slab(&data, &priors, init.as_ref(), &opts)
        } else {
            fit(method, &data, &priors, init.as_ref(), &opts)
        }
    })?;
    log.debug(format!(
        "grad norm {:e}, {} optimizations, {} trace points",
        result.grad_norm,
        result.restarts_used,
        result.trace.len()
    ));

    let ids: Vec<String> = data.iter().map(|c| c.id.clone()).collect();
    let mut file = ModelFile::from_model(method, &result.model, &ids)?;
    file.objective = Some(result.objective);
    file.converged = Some(result.converged);
    file.selected = result.selected;
    file.save(&args.out)?;
    writeln!(
        out,
        "method={} objective={} converged={}",
        method, result.objective, result.converged
    )?;
    Ok(())
}

fn cmd_predict(args: &PredictArgs, out: &mut dyn Write, log: &Log) -> Result<()> {
    let file = ModelFile::load(&args.fitted)?;
    let model = file.to_model()?;
    let data = parse_curves(&args.data)?;
    let curves = file.align(&data)?;
    let (p, queries) = parse_queries(&args.query)?;
    if let Some(c) = curves.iter().find(|c| c.p() != p) {
        return Err(EtprError::InconsistentDimensions(format!(
            "query has p = {p} but curve `{}` has p = {}",
            c.id,
            c.p()
        )));
    }

    // batch per curve, then restore file order
    let mut results = vec![None; queries.len()];
    for (index, curve) in curves.iter().enumerate() {
        let rows: Vec<usize> = (0..queries.len()).filter(|&r| queries[r].curve_id == curve.id).collect();
        if rows.is_empty() {
            continue;
        }
        let u = DMatrix::from_fn(rows.len(), p, |r, q| queries[rows[r]].x[q]);
        let preds = predict_batch(&model, curve, index, &u)?;
        for (r, pred) in rows.into_iter().zip(preds) {
            results[r] = Some(pred);
        }
    }
    let mut paired: Vec<(QueryRow, _)> = Vec::with_capacity(queries.len());
    for (q, pred) in queries.into_iter().zip(results) {
        let pred = pred.ok_or_else(|| EtprError::UnknownCurveId(q.curve_id.clone()))?;
        paired.push((q, pred));
    }
    write_predictions(std::io::BufWriter::new(fs::File::create(&args.out)?), p, &paired)?;
    log.info(format!("wrote {} predictions", paired.len()));
    writeln!(out, "predictions={}", paired.len())?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write, log: &Log) -> Result<()> {
    let mut config = SimConfig::for_case(args.case, args.m, args.reps, args.seed)?;
    if let Some(n) = args.n_train {
        config.n_train = n;
        config.validate()?;
    }
    if args.single_outlier {
        config.outlier_scope = OutlierScope::Single;
    }
    let methods: Vec<SimMethod> = if args.methods.is_empty() {
        SimMethod::defaults_for(args.case)
    } else {
        args.methods.iter().map(|&m| m.into()).collect()
    };
    let opts = StudyOptions {
        priors: load_priors(args.priors.as_deref())?,
        threads: args.threads,
        ..StudyOptions::default()
    };
    log.info(format!(
        "case {} m = {} reps = {} seed = {}",
        config.case, config.m, config.reps, config.seed
    ));
    let study = run_study(&config, &methods, &opts)?;

    fs::create_dir_all(&args.out)?;
    let text = summary_text(&study.rows);
    fs::write(args.out.join("summary.csv"), summary_csv(&study.rows))?;
    fs::write(args.out.join("summary.txt"), &text)?;
    fs::write(args.out.join("replications.csv"), records_csv(&study.records))?;
    write!(out, "{text}")?;
    Ok(())
}

fn parse_opt(cell: &str, line: u64) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| EtprError::ParseError {
        line,
        message: format!("`{cell}` is not a number"),
    })
}

/// Reads replications.csv back into records (kernels are not stored there).
pub fn read_records(path: &Path) -> Result<(Vec<SimMethod>, Vec<ReplicationRecord>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut methods: Vec<SimMethod> = Vec::new();
    let mut records: Vec<ReplicationRecord> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 7 {
            return Err(EtprError::ParseError {
                line,
                message: "expected 7 fields".into(),
            });
        }
        let rep: usize = row[0].parse().map_err(|_| EtprError::ParseError {
            line,
            message: "bad replication index".into(),
        })?;
        let method: SimMethod = serde_json::from_value(serde_json::Value::String(row[1].to_string()))
            .map_err(|_| EtprError::ParseError {
                line,
                message: format!("unknown method `{}`", &row[1]),
            })?;
        if !methods.contains(&method) {
            methods.push(method);
        }
        let rec = MethodRecord {
            method,
            mse: parse_opt(&row[2], line)?,
            nu_hat: parse_opt(&row[3], line)?,
            acc_w: parse_opt(&row[4], line)?,
            acc_a: parse_opt(&row[5], line)?,
            kernels: Vec::new(),
            error: (!row[6].is_empty()).then(|| row[6].to_string()),
        };
        match records.iter_mut().find(|r| r.rep == rep) {
            Some(r) => r.methods.push(rec),
            None => records.push(ReplicationRecord {
                rep,
                methods: vec![rec],
            }),
        }
    }
    Ok((methods, records))
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(path) = &args.records {
        let (methods, records) = read_records(path)?;
        write!(out, "{}", summary_text(&summarize(&methods, &records)))?;
        return Ok(());
    }
    let file = ModelFile::load(args.fitted.as_ref().expect("clap enforces one source"))?;
    let nu = file.nu.map_or("inf".to_string(), |v| format!("{v:.4e}"));
    writeln!(out, "method {}  nu {}  sigma_sq {:.4e}", file.method, nu, file.sigma_sq)?;
    if let Some(obj) = file.objective {
        writeln!(out, "objective {obj:.6}  converged {}", file.converged.unwrap_or(false))?;
    }
    for c in &file.curves {
        let fmt = |vals: &[f64], mask: &[bool]| {
            vals.iter()
                .zip(mask)
                .map(|(v, &on)| if on { format!("{v:.4}") } else { "0".into() })
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(
            out,
            "{}: v {:.4}  w [{}]  a [{}]",
            c.id,
            c.v,
            fmt(&c.w, &c.gamma),
            fmt(&c.a, &c.delta)
        )?;
    }
    Ok(())
}
