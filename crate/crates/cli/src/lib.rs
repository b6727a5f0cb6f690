//! The `ste` command-line driver.

pub mod ingest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ste_core::bench::{run_experiment, ExperimentSpec};
use ste_core::fit::{select_model, FitConfig, FitDocument, RssRow};
use ste_core::metrics::{integrated_sq_distance, l1_distance};
use ste_core::sim::{envelope, sample_patterns};
use ste_core::{fmt_num, predict_grid, EvalPoint, GeneralIntensity, GridSpec, Result, RngStream, SteError, SteModel};

use ingest::{ingest, CsvTable};

#[derive(Debug, Parser)]
#[command(name = "ste", version, about = "Stochastic Taylor expansion regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit models with 1..=M_max components and keep the selected one.
    Fit(FitArgs),
    /// Evaluate a fitted model on a grid or at listed points.
    Predict(PredictArgs),
    /// Pointwise quantile bands of simulated expansions.
    Envelope(EnvelopeArgs),
    /// Dump simulated point patterns of a fitted model.
    Simulate(SimulateArgs),
    /// Integrated squared and absolute distance between two grid CSVs.
    Distance(DistanceArgs),
    /// Run a benchmark experiment from a JSON spec.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "m-max")]
    pub m_max: usize,
    #[arg(long, default_value_t = 20)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "delta-frac", default_value_t = 0.05)]
    pub delta_frac: f64,
    /// Expansion origin in the input file's units.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Divisors for every column, inputs first and the response last.
    #[arg(long, value_delimiter = ',')]
    pub rescale: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `lo:hi:n` per dimension, comma separated.
    #[arg(long, conflicts_with = "points", required_unless_present = "points", allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// CSV whose first d columns are evaluation points.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnvelopeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    #[arg(long = "n-real", default_value_t = 10_000)]
    pub n_real: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the spec's seed count.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Include wall-clock timings in the reports.
    #[arg(long)]
    pub timings: bool,
}

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

impl ExitKind {
    fn name(self) -> &'static str {
        match self {
            ExitKind::Usage => "usage",
            ExitKind::Data => "data",
            ExitKind::Numeric => "numeric",
        }
    }
}

pub fn classify(e: &SteError) -> ExitKind {
    match e.root() {
        SteError::InvalidParams(_) => ExitKind::Usage,
        SteError::NumericRange { .. } | SteError::FitFailed { .. } | SteError::NotSampleable { .. } => ExitKind::Numeric,
        _ => ExitKind::Data,
    }
}

fn row_of(e: &SteError) -> Option<usize> {
    match e {
        SteError::AtRow { row, .. } => Some(*row),
        _ => None,
    }
}

fn report(kind: ExitKind, message: &str, row: Option<usize>) -> i32 {
    let mut obj = json!({ "error": kind.name(), "exit_code": kind as i32, "message": message });
    if let Some(r) = row {
        obj["row"] = json!(r);
    }
    eprintln!("{obj}");
    kind as i32
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => return report(ExitKind::Usage, e.to_string().trim(), None),
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => report(classify(&e), &e.to_string(), row_of(&e)),
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Envelope(a) => cmd_envelope(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Distance(a) => cmd_distance(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SteError::Io(e.error.to_string()))?;
    Ok(())
}

/// `lo:hi:n[,lo:hi:n...]`; every dimension must use the same `n`.
pub fn parse_grid(s: &str) -> Result<GridSpec> {
    let usage = |msg: String| SteError::InvalidParams(format!("--grid '{s}': {msg}"));
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut n = None;
    for part in s.split(',') {
        let f: Vec<&str> = part.split(':').collect();
        if f.len() != 3 {
            return Err(usage("expected lo:hi:n".into()));
        }
        let lo: f64 = f[0].trim().parse().map_err(|_| usage(format!("bad lower bound '{}'", f[0])))?;
        let hi: f64 = f[1].trim().parse().map_err(|_| usage(format!("bad upper bound '{}'", f[1])))?;
        let k: usize = f[2].trim().parse().map_err(|_| usage(format!("bad point count '{}'", f[2])))?;
        if n.is_some_and(|n| n != k) {
            return Err(usage("all dimensions must use the same point count".into()));
        }
        n = Some(k);
        lower.push(lo);
        upper.push(hi);
    }
    GridSpec::new(lower, upper, n.unwrap_or(0)).map_err(|e| usage(e.to_string()))
}

fn read_model(path: &Path) -> Result<SteModel> {
    let text = std::fs::read_to_string(path).map_err(|e| SteError::Data(format!("{}: {e}", path.display())))?;
    SteModel::from_json(&text)
}

/// Original-unit points to model units.
fn to_model_units(model: &SteModel, points: &[EvalPoint]) -> Result<Vec<EvalPoint>> {
    let d = model.d();
    points
        .iter()
        .map(|p| {
            if p.len() != d {
                return Err(SteError::Dimension { expected: d, got: p.len() });
            }
            Ok(EvalPoint(p.iter().zip(model.rescale()).map(|(v, c)| v / c).collect()))
        })
        .collect()
}

fn check_grid_dim(model: &SteModel, grid: &GridSpec) -> Result<()> {
    if grid.d() != model.d() {
        return Err(SteError::InvalidParams(format!("grid has {} dimensions, model has {}", grid.d(), model.d())));
    }
    Ok(())
}

fn write_rss_csv(path: &Path, rows: &[RssRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "rss", "sigma2", "n_starts_converged", "best_start_index"])?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.rss.map(fmt_num).unwrap_or_default(),
            r.sigma2.map(fmt_num).unwrap_or_default(),
            r.n_starts_converged.to_string(),
            r.best_start_index.map(|i| i.to_string()).unwrap_or_default(),
        ])?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| SteError::Io(e.to_string()))?)
}

/// `MODEL.json` -> `MODEL.rss.csv`.
pub fn rss_table_path(model_out: &Path) -> PathBuf {
    model_out.with_extension("rss.csv")
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let data = ingest(&a.input, a.rescale.as_deref())?;
    let d = data.d();
    let rescale = a.rescale.clone().unwrap_or_else(|| vec![1.0; d + 1]);
    let x0 = match &a.x0 {
        Some(x0) if x0.len() != d => {
            return Err(SteError::InvalidParams(format!("--x0 has {} values, data has {d} inputs", x0.len())))
        }
        Some(x0) => Some(x0.iter().zip(&rescale).map(|(v, c)| v / c).collect()),
        None => None,
    };
    let cfg = FitConfig { n_starts: a.starts, seed: a.seed, delta_frac: a.delta_frac, x0, ..FitConfig::default() };
    let sel = select_model(&data, a.m_max, &cfg)?;
    let model = sel.chosen.model.clone().with_rescale(rescale)?;
    let doc = FitDocument {
        model: model.to_document(),
        rss: sel.chosen.rss,
        chosen_m: sel.chosen_m,
        rss_table: sel.rss_table(),
    };
    write_atomic(&a.out, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    write_rss_csv(&rss_table_path(&a.out), &doc.rss_table)?;
    println!("{}", json!({ "chosen_m": sel.chosen_m, "rss": sel.chosen.rss, "underdetermined": sel.chosen.underdetermined }));
    Ok(())
}

fn write_values(path: &Path, points: &[EvalPoint], values: &[f64]) -> Result<()> {
    let d = points.first().map_or(0, |p| p.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=d).map(|r| format!("x_{r}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (p, v) in points.iter().zip(values) {
        let mut rec: Vec<String> = p.iter().map(|&x| fmt_num(x)).collect();
        rec.push(fmt_num(*v));
        w.write_record(&rec)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| SteError::Io(e.to_string()))?)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let points: Vec<EvalPoint> = match (&a.grid, &a.points) {
        (Some(g), _) => {
            let grid = parse_grid(g)?;
            check_grid_dim(&model, &grid)?;
            grid.points()
        }
        (None, Some(p)) => {
            let t = CsvTable::from_path(p)?;
            let d = model.d();
            if t.n_cols() != d && t.n_cols() != d + 1 {
                return Err(SteError::Data(format!("points file has {} columns, model needs {d} (or {d} plus y)", t.n_cols())));
            }
            t.rows.into_iter().map(|r| EvalPoint(r[..d].to_vec())).collect()
        }
        (None, None) => return Err(SteError::InvalidParams("either --grid or --points is required".into())),
    };
    let scaled = to_model_units(&model, &points)?;
    let c_y = model.rescale()[model.d()];
    let values: Vec<f64> = predict_grid(&model, &scaled)?.into_iter().map(|v| v * c_y).collect();
    write_values(&a.out, &points, &values)
}

fn cmd_envelope(a: EnvelopeArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let grid = parse_grid(&a.grid)?;
    check_grid_dim(&model, &grid)?;
    let points = grid.points();
    let scaled = to_model_units(&model, &points)?;
    let g = GeneralIntensity::from_model(&model);
    let env = envelope(&g, &scaled, a.n_real, a.alpha, RngStream::new(a.seed, 0))?;
    let mut out = env.rescaled(&model.rescale()[..model.d()], model.rescale()[model.d()]);
    out.grid = points;
    let mut buf = Vec::new();
    out.write_csv(&mut buf)?;
    write_atomic(&a.out, &buf)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let g = GeneralIntensity::from_model(&model);
    let patterns = sample_patterns(&g, a.n, RngStream::new(a.seed, 0))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["realization".to_string(), "a".to_string()];
    header.extend((1..=model.d()).map(|r| format!("n_{r}")));
    w.write_record(&header)?;
    for (i, p) in patterns.iter().enumerate() {
        for e in &p.events {
            let mut rec = vec![i.to_string(), fmt_num(e.a)];
            rec.extend(e.n.iter().map(|&v| fmt_num(v)));
            w.write_record(&rec)?;
        }
    }
    write_atomic(&a.out, &w.into_inner().map_err(|e| SteError::Io(e.to_string()))?)?;
    let counts: Vec<usize> = patterns.iter().map(|p| p.len()).collect();
    let total: usize = counts.iter().sum();
    println!("{}", json!({ "realizations": a.n, "events": total }));
    Ok(())
}

/// Values of a grid CSV (`x_1..x_d,value`), checked against the grid.
fn grid_values(path: &Path, grid: &GridSpec) -> Result<Vec<f64>> {
    let t = CsvTable::from_path(path)?;
    let d = grid.d();
    if t.n_cols() != d + 1 {
        return Err(SteError::Data(format!("{}: expected {} columns, found {}", path.display(), d + 1, t.n_cols())));
    }
    if t.rows.len() != grid.len() {
        return Err(SteError::Data(format!("{}: {} rows for a {}-point grid", path.display(), t.rows.len(), grid.len())));
    }
    for (k, (row, p)) in t.rows.iter().zip(grid.points()).enumerate() {
        for r in 0..d {
            let tol = 1e-9 * (grid.upper[r] - grid.lower[r]);
            if (row[r] - p[r]).abs() > tol {
                return Err(SteError::Data(format!("{}: point does not match the grid", path.display())).at_row(k + 1));
            }
        }
    }
    Ok(t.rows.iter().map(|r| r[d]).collect())
}

fn cmd_distance(a: DistanceArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    let pred = grid_values(&a.pred, &grid)?;
    let truth = grid_values(&a.truth, &grid)?;
    let d_sq = integrated_sq_distance(&pred, &truth, &grid)?;
    let d_l1 = l1_distance(&pred, &truth, &grid)?;
    println!("{}", json!({ "d_sq": d_sq, "d_l1": d_l1 }));
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| SteError::Data(format!("{}: {e}", a.spec.display())))?;
    let mut spec = ExperimentSpec::from_json(&text)?;
    if let Some(n) = a.seeds {
        spec.n_seeds = n;
    }
    let mut rep = run_experiment(&spec)?;
    if !a.timings {
        rep = rep.without_timings();
    }
    std::fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("report.json"), rep.to_json()?.as_bytes())?;
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    write_atomic(&a.out.join("report.csv"), &buf)?;
    println!("{}", json!({ "median_chosen_m": rep.median.chosen_m, "median_d_sq": rep.median.d_sq }));
    Ok(())
}
