//! Command-line front end: configuration loading, the `analyze`, `sweep`,
//! `table`, `gallery` and `predict` subcommands, and their JSON, CSV and
//! plot-data outputs.
//!
//! Exit codes: `0` on success (including a mathematically expected absence
//! of a cycle), `1` on configuration errors, `2` on numerical failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics::{
    predict_system, AsymptoticLaw, CaseTag, LawFamily, Quantity, SideLeading, SymbolicLaw, TableLaw,
};
use crate::bifurcation::{sign_data, sliding_segment, CycleRecord, CycleSearch, SignTriple, SlidingSegment};
use crate::fields::{make_builtin, parse_params, PiecewiseSystem, SystemDescriptor, GALLERY};
use crate::flow::IntegrationLimits;
use crate::sweepfit::{
    classify_law, compare, compare_exponent, fit_constant, fit_log, fit_power, fit_window, fmt17, sweep, write_csv,
    Classification, FitResult, SweepFailure, SweepGrid, Tolerances, Verdict,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Default directory for written artifacts.
pub const DEFAULT_OUT_DIR: &str = "pseudohopf-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

fn config_err(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "pseudohopf", version, about = "Crossing limit cycles born from a translated switching field")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sign data, sliding segment and crossing cycle at one value of b.
    Analyze {
        #[command(flatten)]
        system: SystemArgs,
        /// Translation of the upper field.
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
    },
    /// Sweep b, fit the position and period laws, compare with the predictions.
    Sweep {
        #[command(flatten)]
        system: SystemArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Output directory for CSV, JSON and plot data.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce the law table over the builtin rows.
    Table {
        /// Comma-separated row names (default: all rows).
        #[arg(long, value_delimiter = ',')]
        rows: Vec<String>,
        /// Output directory for table.csv and table.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON config; its `limits` apply to every flow-backed row.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// List the builtin systems and their parameters.
    Gallery,
    /// Run the predictors only.
    Predict {
        #[command(flatten)]
        system: SystemArgs,
    },
}

#[derive(Args, Debug, Default, Clone)]
pub struct SystemArgs {
    /// Builtin system name.
    #[arg(long, conflicts_with = "config")]
    pub gallery: Option<String>,
    /// Parameter overrides `key=value,key=value` for a builtin system.
    #[arg(long)]
    pub params: Option<String>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct FitArgs {
    /// Sweep grid `b_max,ratio,count`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Absolute tolerance on fitted exponents.
    #[arg(long)]
    pub tol_exp: Option<f64>,
    /// Relative tolerance on fitted coefficients.
    #[arg(long)]
    pub tol_coef: Option<f64>,
}

/// System named in a config: a builtin name or an inline description.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Gallery(String),
    Inline(Box<SystemDescriptor>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// JSON run configuration.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: Option<SystemSpec>,
    /// Parameter overrides for a builtin system.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub limits: Option<IntegrationLimits>,
    #[serde(default)]
    pub grid: Option<SweepGrid>,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Builds the system described by the flags and the optional config file.
pub fn resolve_system(args: &SystemArgs) -> Result<(RunConfig, PiecewiseSystem), CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(extra) = &args.params {
        cfg.params.extend(parse_params(extra).map_err(config_err)?);
    }
    if let Some(limits) = &cfg.limits {
        limits.validate().map_err(config_err)?;
    }
    let spec = match (&args.gallery, &cfg.system) {
        (Some(name), _) => SystemSpec::Gallery(name.clone()),
        (None, Some(spec)) => spec.clone(),
        (None, None) => return Err(CliError::Config("no system given: use --gallery NAME or --config FILE".into())),
    };
    let system = match spec {
        SystemSpec::Gallery(name) => {
            let sys = make_builtin(&name, &cfg.params).map_err(config_err)?;
            match cfg.limits {
                Some(l) => sys.with_limits(l),
                None => sys,
            }
        }
        SystemSpec::Inline(desc) => {
            if !cfg.params.is_empty() {
                return Err(CliError::Config("params apply to builtin systems only".into()));
            }
            desc.build(cfg.limits.unwrap_or_default()).map_err(config_err)?
        }
    };
    Ok((cfg, system))
}

/// Parses `b_max,ratio,count`.
pub fn parse_grid(spec: &str) -> Result<SweepGrid, CliError> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!("grid must be b_max,ratio,count, got {spec:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| CliError::Config(format!("grid value {s:?}: {e}")));
    let count = parts[2].parse::<usize>().map_err(|e| CliError::Config(format!("grid count {:?}: {e}", parts[2])))?;
    let grid = SweepGrid { b_max: num(parts[0])?, ratio: num(parts[1])?, count };
    grid.validate().map_err(CliError::Config)?;
    Ok(grid)
}

fn output_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = flag
        .clone()
        .or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Reports

/// A predicted law as reported in JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawReport {
    pub law_family: String,
    pub exponent: Option<f64>,
    pub coefficient: Option<f64>,
    /// Additive constant of a log law.
    pub offset: Option<f64>,
    pub case_tag: Option<CaseTag>,
    /// Formula that produced the law.
    pub paper_anchor: String,
}

fn family_parts(f: &LawFamily) -> (Option<f64>, Option<f64>, Option<f64>) {
    match *f {
        LawFamily::Power { c, lambda } | LawFamily::NegPower { c, lambda } => (Some(lambda), Some(c), None),
        LawFamily::Log { t0, offset } => (None, Some(t0), Some(offset)),
        LawFamily::Constant { t0, correction } => (correction, Some(t0), None),
    }
}

pub const PERIOD_ANCHOR: &str = "T = |tau+(x - b)| + |tau-(x)| with each flight composed with the position law";

impl LawReport {
    pub fn new(law: &AsymptoticLaw, case_tag: Option<CaseTag>, anchor: &str) -> Self {
        let (exponent, coefficient, offset) = family_parts(&law.family);
        Self {
            law_family: law.family.name().to_string(),
            exponent,
            coefficient,
            offset,
            case_tag,
            paper_anchor: anchor.to_string(),
        }
    }

    fn from_table(law: &SymbolicLaw) -> Self {
        Self {
            law_family: law.family_name().to_string(),
            exponent: law.exponent_value(),
            coefficient: None,
            offset: None,
            case_tag: None,
            paper_anchor: format!("law table entry {law}"),
        }
    }
}

/// A fitted law as reported in JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub law_family: String,
    pub exponent: Option<f64>,
    pub coefficient: Option<f64>,
    pub offset: Option<f64>,
    pub r_squared: f64,
    pub max_rel_residual: f64,
    pub window: (f64, f64),
}

impl From<&FitResult> for FitReport {
    fn from(f: &FitResult) -> Self {
        let (exponent, coefficient, offset) = family_parts(&f.law.family);
        Self {
            law_family: f.law.family.name().to_string(),
            exponent,
            coefficient,
            offset,
            r_squared: f.r_squared,
            max_rel_residual: f.max_rel_residual,
            window: f.window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub best: String,
    pub margin: f64,
    pub ambiguous: bool,
    pub candidates: Vec<(String, f64)>,
}

impl From<&Classification> for ClassificationReport {
    fn from(c: &Classification) -> Self {
        Self {
            best: c.best.law.family.name().to_string(),
            margin: c.margin,
            ambiguous: c.ambiguous,
            candidates: c.candidates.clone(),
        }
    }
}

/// Prediction, fit, classification and verdict for one measured quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantityReport {
    pub predicted: Option<LawReport>,
    pub refusal: Option<String>,
    pub fit: Option<FitReport>,
    pub fit_error: Option<String>,
    pub classification: Option<ClassificationReport>,
    pub verdict: Option<Verdict>,
}

/// Fits `samples` (on [`fit_window`]) with the family of the prediction, or
/// of the law table when no prediction exists, and compares.
pub fn evaluate_quantity(
    samples: &[(f64, f64)],
    of: Quantity,
    predicted: Option<(&AsymptoticLaw, Option<CaseTag>, &str)>,
    refusal: Option<String>,
    table: Option<&SymbolicLaw>,
    tol: &Tolerances,
) -> QuantityReport {
    let window = fit_window(samples);
    let classification = classify_law(window, of).ok();
    let family = predicted
        .map(|p| p.0.family.name())
        .or(table.map(SymbolicLaw::family_name))
        .or(classification.as_ref().map(|c| c.best.law.family.name()));
    let fit = match family {
        Some("power") | Some("neg_power") => Some(fit_power(window, of)),
        Some("log") => Some(fit_log(window, of)),
        Some("constant") => Some(fit_constant(window, of)),
        _ => None,
    };
    let (fit, fit_error) = match fit {
        Some(Ok(f)) => (Some(f), None),
        Some(Err(e)) => (None, Some(e.to_string())),
        None => (None, Some("no law family to fit".to_string())),
    };
    let verdict = fit.as_ref().and_then(|f| match (predicted, table) {
        (Some((law, _, _)), _) => Some(compare(law, f, tol)),
        (None, Some(t)) => Some(compare_exponent(t.family_name(), t.exponent_value(), f, tol)),
        (None, None) => None,
    });
    QuantityReport {
        predicted: predicted
            .map(|(l, tag, anchor)| LawReport::new(l, tag, anchor))
            .or(table.map(LawReport::from_table)),
        refusal,
        fit: fit.as_ref().map(FitReport::from),
        fit_error,
        classification: classification.as_ref().map(ClassificationReport::from),
        verdict,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub kind: &'static str,
    pub system: String,
    pub b: f64,
    pub signs: Option<SignTriple>,
    pub sliding: Option<SlidingSegment>,
    pub sliding_note: Option<String>,
    pub cycle: Option<CycleRecord>,
    pub no_cycle: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictReport {
    pub kind: &'static str,
    pub system: String,
    pub delta: i8,
    pub mu: i8,
    pub table: Option<TableLaw>,
    pub position: Option<LawReport>,
    pub position_refusal: Option<String>,
    pub period: Option<LawReport>,
    pub period_refusal: Option<String>,
    pub upper: SideLeading,
    pub lower: SideLeading,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub kind: &'static str,
    pub system: String,
    pub sign: i8,
    pub grid: SweepGrid,
    pub tolerances: Tolerances,
    pub successes: usize,
    pub failures: Vec<SweepFailure>,
    pub prediction_error: Option<String>,
    pub position: Option<QuantityReport>,
    pub period: Option<QuantityReport>,
    pub files: Vec<String>,
}

// ---------------------------------------------------------------------------
// Commands

/// Sign data, sliding segment and cycle at one `b`.
pub fn cmd_analyze(args: &SystemArgs, b: f64, out: &mut dyn Write) -> Result<i32, CliError> {
    let (_, system) = resolve_system(args)?;
    if !(b.is_finite() && b != 0.0) {
        return Err(CliError::Config(format!("--b must be finite and nonzero, got {b}")));
    }
    let mut report = AnalyzeReport {
        kind: "analyze",
        system: system.name.clone(),
        b,
        signs: None,
        sliding: None,
        sliding_note: None,
        cycle: None,
        no_cycle: false,
        error: None,
    };
    match sliding_segment(&system, b) {
        Ok(s) => report.sliding = Some(s),
        Err(e) => report.sliding_note = Some(e.to_string()),
    }
    let code = match sign_data(&system) {
        Err(e) => {
            report.error = Some(format!("sign data: {e}"));
            EXIT_NUMERICAL
        }
        Ok(signs) => {
            report.signs = Some(signs);
            let search = CycleSearch::new(&system).map_err(|e| CliError::Numerical(e.to_string()))?;
            match search.at(b) {
                Ok(rec) => {
                    report.cycle = Some(rec);
                    EXIT_OK
                }
                Err(e) if e.is_no_sign_change() => {
                    report.no_cycle = true;
                    EXIT_OK
                }
                Err(e) => {
                    report.error = Some(e.to_string());
                    EXIT_NUMERICAL
                }
            }
        }
    };
    out.write_all(to_json(&report).as_bytes()).map_err(config_err)?;
    Ok(code)
}

/// Predictors only.
pub fn cmd_predict(args: &SystemArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (_, system) = resolve_system(args)?;
    let p = predict_system(&system).map_err(|e| CliError::Numerical(e.to_string()))?;
    let report = PredictReport {
        kind: "predict",
        system: system.name.clone(),
        delta: p.delta,
        mu: p.mu,
        table: p.table.clone(),
        position: p
            .position
            .as_ref()
            .and_then(|pp| pp.law.as_ref().map(|l| LawReport::new(l, Some(pp.case_tag), pp.case_tag.formula()))),
        position_refusal: p
            .position_refusal
            .clone()
            .or_else(|| p.position.as_ref().filter(|pp| pp.law.is_none()).map(|pp| pp.case_tag.formula().to_string())),
        period: p.period.as_ref().map(|l| LawReport::new(l, None, PERIOD_ANCHOR)),
        period_refusal: p.period_refusal.clone(),
        upper: p.upper,
        lower: p.lower,
    };
    out.write_all(to_json(&report).as_bytes()).map_err(config_err)?;
    Ok(EXIT_OK)
}

/// Result of sweeping and fitting one system.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub records: Vec<CycleRecord>,
}

/// Sweep, fit, predict and compare for one system.
pub fn sweep_and_fit(system: &PiecewiseSystem, grid: &SweepGrid, tol: &Tolerances) -> Result<SweepOutcome, CliError> {
    let search = CycleSearch::new(system).map_err(|e| CliError::Numerical(format!("sign data: {e}")))?;
    let sign = search.signs.mu;
    let (prediction, prediction_error) = match predict_system(system) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let result = sweep(&search, grid, sign).map_err(|e| CliError::Config(e.to_string()))?;
    let mut report = SweepReport {
        kind: "sweep",
        system: system.name.clone(),
        sign,
        grid: *grid,
        tolerances: *tol,
        successes: result.samples.len(),
        failures: result.failures.clone(),
        prediction_error,
        position: None,
        period: None,
        files: Vec::new(),
    };
    if result.ensure_successes(8).is_ok() {
        let table = prediction.as_ref().and_then(|p| p.table.clone());
        let pos_pred = prediction.as_ref().and_then(|p| p.position.as_ref());
        let pos_law = pos_pred.and_then(|pp| pp.law.as_ref().map(|l| (l, Some(pp.case_tag), pp.case_tag.formula())));
        let pos_refusal = prediction.as_ref().and_then(|p| p.position_refusal.clone());
        report.position = Some(evaluate_quantity(
            &result.positions(),
            Quantity::Position,
            pos_law,
            pos_refusal,
            table.as_ref().map(|t| &t.position),
            tol,
        ));
        let per_law = prediction.as_ref().and_then(|p| p.period.as_ref()).map(|l| (l, None, PERIOD_ANCHOR));
        let per_refusal = prediction.as_ref().and_then(|p| p.period_refusal.clone());
        report.period = Some(evaluate_quantity(
            &result.periods(),
            Quantity::Period,
            per_law,
            per_refusal,
            table.as_ref().map(|t| &t.period),
            tol,
        ));
    }
    Ok(SweepOutcome { report, records: result.samples })
}

fn plot_data(samples: &[(f64, f64)], log_value: bool) -> String {
    let mut s = String::new();
    if log_value {
        s.push_str("# ln|b| ln(value)\n");
    } else {
        s.push_str("# -ln|b| value\n");
    }
    for &(b, v) in samples {
        let (x, y) = if log_value { (b.abs().ln(), v.ln()) } else { (-b.abs().ln(), v) };
        let _ = writeln!(s, "{} {}", fmt17(x), fmt17(y));
    }
    s
}

/// Writes the sweep CSV and the plot-data files; returns their names.
pub fn write_sweep_files(dir: &Path, records: &[CycleRecord]) -> Result<Vec<String>, CliError> {
    let mut csv = Vec::new();
    write_csv(&mut csv, records).map_err(config_err)?;
    write_file(&dir.join("sweep.csv"), &csv)?;
    let pos: Vec<(f64, f64)> = records.iter().map(|r| (r.b, r.x_star)).collect();
    let per: Vec<(f64, f64)> = records.iter().map(|r| (r.b, r.period)).collect();
    let files = [
        ("position_loglog.dat", plot_data(&pos, true)),
        ("position_semilog.dat", plot_data(&pos, false)),
        ("period_loglog.dat", plot_data(&per, true)),
        ("period_semilog.dat", plot_data(&per, false)),
    ];
    let mut names = vec!["sweep.csv".to_string()];
    for (name, body) in files {
        write_file(&dir.join(name), body.as_bytes())?;
        names.push(name.to_string());
    }
    names.push("report.json".to_string());
    Ok(names)
}

pub fn cmd_sweep(
    args: &SystemArgs,
    fit: &FitArgs,
    out_flag: &Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let (cfg, system) = resolve_system(args)?;
    let grid = match &fit.grid {
        Some(g) => parse_grid(g)?,
        None => cfg.grid.unwrap_or_default(),
    };
    grid.validate().map_err(CliError::Config)?;
    let mut tol = cfg.tolerances.unwrap_or_default();
    if let Some(e) = fit.tol_exp {
        tol.exponent = e;
    }
    if let Some(c) = fit.tol_coef {
        tol.coefficient = c;
    }
    let dir = output_dir(out_flag, &cfg)?;
    let mut outcome = sweep_and_fit(&system, &grid, &tol)?;
    outcome.report.files = write_sweep_files(&dir, &outcome.records)?;
    let json = to_json(&outcome.report);
    write_file(&dir.join("report.json"), json.as_bytes())?;
    out.write_all(json.as_bytes()).map_err(config_err)?;
    if outcome.report.successes < 8 {
        return Err(CliError::Numerical(format!(
            "only {} of {} sweep points produced a cycle, need 8",
            outcome.report.successes, grid.count
        )));
    }
    Ok(EXIT_OK)
}

pub fn cmd_gallery(out: &mut dyn Write) -> Result<i32, CliError> {
    let mut s = String::new();
    for e in GALLERY {
        let params: Vec<String> = e.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(s, "{:<28} {:<32} {}", e.name, params.join(","), e.summary);
    }
    out.write_all(s.as_bytes()).map_err(config_err)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// Law table

/// One reproducible row of the law table.
#[derive(Debug, Clone, Copy)]
pub struct TableRow {
    pub key: &'static str,
    pub system: &'static str,
    pub params: &'static [(&'static str, f64)],
    pub grid: SweepGrid,
    pub tol: Tolerances,
}

const DEFAULT_GRID: SweepGrid = SweepGrid { b_max: 1e-2, ratio: 0.5, count: 20 };
/// Model maps are exact to any depth; their sub-leading terms decay like a
/// small power of `|b|`, so they are swept far closer to zero.
const DEEP_GRID: SweepGrid = SweepGrid { b_max: 1e-20, ratio: 1e-4, count: 20 };
/// The fold side's map `b + x` hides the Dulac correction below one ulp
/// once `|b|` is small enough, so this grid stops near `1e-21`.
const MIXED_GRID: SweepGrid = SweepGrid { b_max: 1e-2, ratio: 0.1, count: 20 };
const TOL: Tolerances = Tolerances { exponent: 0.02, coefficient: 0.02 };

/// Rows of the law table.
pub const TABLE_ROWS: &[TableRow] = &[
    TableRow { key: "fold_fold", system: "fold_fold_broken", params: &[], grid: DEFAULT_GRID, tol: TOL },
    TableRow { key: "efocus_fold", system: "efocus_fold", params: &[("eps", 0.1)], grid: DEFAULT_GRID, tol: TOL },
    TableRow {
        key: "nfocus_fold",
        system: "nfocus_fold",
        params: &[],
        grid: DEFAULT_GRID,
        tol: Tolerances { exponent: 0.03, coefficient: 0.03 },
    },
    TableRow {
        key: "cusp_fold",
        system: "cusp_fold_broken",
        params: &[("c", 1.0)],
        grid: DEFAULT_GRID,
        tol: Tolerances { exponent: 0.05, coefficient: 0.05 },
    },
    // The focus adds a constant flight that decays relative to the cusp's
    // only like |b|^(1/3); the free-exponent fit absorbs it into c.
    TableRow {
        key: "cusp_efocus",
        system: "cusp_efocus",
        params: &[("c", 0.0), ("eps", 0.1)],
        grid: DEFAULT_GRID,
        tol: Tolerances { exponent: 0.05, coefficient: 0.15 },
    },
    TableRow {
        key: "circle_orbit_fold",
        system: "circle_orbit_fold",
        params: &[],
        grid: DEFAULT_GRID,
        tol: Tolerances { exponent: 0.02, coefficient: 0.01 },
    },
    TableRow {
        key: "polycycle_fold",
        system: "model_polycycle_fold",
        params: &[("r", 0.7), ("T0", 1.0)],
        grid: MIXED_GRID,
        tol: TOL,
    },
    TableRow {
        key: "polycycle_polycycle",
        system: "model_polycycle_polycycle",
        params: &[("r_plus", 1.4), ("r_minus", 1.25), ("T0_plus", 1.0), ("T0_minus", 1.0)],
        grid: DEEP_GRID,
        tol: Tolerances { exponent: 0.01, coefficient: 0.02 },
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Pass,
    Fail,
    /// A predictor declined and no numeric table exponent was available.
    Refused,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRowReport {
    pub row: String,
    pub system: String,
    pub status: RowStatus,
    pub successes: usize,
    pub position: Option<QuantityReport>,
    pub period: Option<QuantityReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableReport {
    pub kind: &'static str,
    pub rows: Vec<TableRowReport>,
}

fn row_status(q: [&Option<QuantityReport>; 2]) -> RowStatus {
    let verdicts: Vec<Option<bool>> =
        q.iter().map(|r| r.as_ref().and_then(|r| r.verdict.as_ref().map(|v| v.pass))).collect();
    let refused = q.iter().any(|r| r.as_ref().is_some_and(|r| r.refusal.is_some()));
    if verdicts.contains(&Some(false)) {
        RowStatus::Fail
    } else if refused || verdicts.iter().any(Option::is_none) {
        RowStatus::Refused
    } else {
        RowStatus::Pass
    }
}

/// Runs one table row.
pub fn run_row(row: &TableRow, limits: Option<IntegrationLimits>) -> TableRowReport {
    let params: BTreeMap<String, f64> = row.params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let build = make_builtin(row.system, &params).map(|s| match limits {
        Some(l) => s.with_limits(l),
        None => s,
    });
    let failed = |e: String| TableRowReport {
        row: row.key.into(),
        system: row.system.into(),
        status: RowStatus::Error,
        successes: 0,
        position: None,
        period: None,
        error: Some(e),
    };
    let system = match build {
        Ok(s) => s,
        Err(e) => return failed(e.to_string()),
    };
    match sweep_and_fit(&system, &row.grid, &row.tol) {
        Err(e) => failed(e.to_string()),
        Ok(o) if o.report.successes < 8 => TableRowReport {
            error: Some(format!("only {} sweep successes", o.report.successes)),
            successes: o.report.successes,
            ..failed(String::new())
        },
        Ok(o) => TableRowReport {
            row: row.key.into(),
            system: row.system.into(),
            status: row_status([&o.report.position, &o.report.period]),
            successes: o.report.successes,
            position: o.report.position,
            period: o.report.period,
            error: None,
        },
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

pub const TABLE_CSV_HEADER: &str = "row,system,status,position_family,position_predicted_exponent,position_predicted_coefficient,position_fitted_exponent,position_fitted_coefficient,position_pass,period_family,period_predicted_exponent,period_predicted_coefficient,period_fitted_exponent,period_fitted_coefficient,period_pass";

fn quantity_csv(q: &Option<QuantityReport>) -> String {
    let Some(q) = q else { return ",,,,,".to_string() };
    let (fam, pe, pc) =
        q.predicted.as_ref().map(|p| (p.law_family.clone(), opt(p.exponent), opt(p.coefficient))).unwrap_or_default();
    let (fe, fc) = q.fit.as_ref().map(|f| (opt(f.exponent), opt(f.coefficient))).unwrap_or_default();
    let pass = q.verdict.as_ref().map(|v| v.pass.to_string()).unwrap_or_default();
    format!("{fam},{pe},{pc},{fe},{fc},{pass}")
}

pub fn table_csv(report: &TableReport) -> String {
    let mut s = String::from(TABLE_CSV_HEADER);
    s.push('\n');
    for r in &report.rows {
        let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let _ =
            writeln!(s, "{},{},{},{},{}", r.row, r.system, status, quantity_csv(&r.position), quantity_csv(&r.period));
    }
    s
}

fn render_law(q: &Option<QuantityReport>) -> (String, String) {
    let Some(q) = q else { return ("-".into(), "-".into()) };
    let pred = match &q.predicted {
        Some(p) => match (p.law_family.as_str(), p.exponent, p.coefficient) {
            ("log", _, Some(c)) => format!("log slope {c:.4}"),
            ("constant", _, Some(c)) => format!("const {c:.4}"),
            (f, Some(e), Some(c)) => format!("{f} {e:.4} c={c:.4}"),
            (f, Some(e), None) => format!("{f} {e:.4}"),
            (f, _, _) => f.to_string(),
        },
        None => "refused".into(),
    };
    let fit = match &q.fit {
        Some(f) => match (f.law_family.as_str(), f.exponent, f.coefficient) {
            ("log", _, Some(c)) => format!("log slope {c:.4}"),
            ("constant", _, Some(c)) => format!("const {c:.4}"),
            (fam, Some(e), Some(c)) => format!("{fam} {e:.4} c={c:.4}"),
            (fam, _, _) => fam.to_string(),
        },
        None => "-".into(),
    };
    (pred, fit)
}

pub fn render_table(report: &TableReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:<30} {:<30} {:<30} {:<30} status",
        "row", "position predicted", "position fitted", "period predicted", "period fitted"
    );
    for r in &report.rows {
        let (pp, pf) = render_law(&r.position);
        let (tp, tf) = render_law(&r.period);
        let status = match r.status {
            RowStatus::Pass => "pass",
            RowStatus::Fail => "FAIL",
            RowStatus::Refused => "refused",
            RowStatus::Error => "ERROR",
        };
        let _ = writeln!(s, "{:<20} {:<30} {:<30} {:<30} {:<30} {}", r.row, pp, pf, tp, tf, status);
        if let Some(e) = &r.error {
            let _ = writeln!(s, "    error: {e}");
        }
    }
    s
}

/// Runs the selected table rows (all when `rows` is empty).
pub fn build_table(rows: &[String], limits: Option<IntegrationLimits>) -> Result<TableReport, CliError> {
    let selected: Vec<&TableRow> = if rows.is_empty() {
        TABLE_ROWS.iter().collect()
    } else {
        rows.iter()
            .map(|name| {
                TABLE_ROWS.iter().find(|r| r.key == name).ok_or_else(|| {
                    let known: Vec<&str> = TABLE_ROWS.iter().map(|r| r.key).collect();
                    CliError::Config(format!("unknown table row {name:?}; known rows: {}", known.join(", ")))
                })
            })
            .collect::<Result<_, _>>()?
    };
    Ok(TableReport { kind: "table", rows: selected.into_iter().map(|r| run_row(r, limits)).collect() })
}

pub fn cmd_table(
    rows: &[String],
    out_flag: &Option<PathBuf>,
    config: &Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(l) = &cfg.limits {
        l.validate().map_err(config_err)?;
    }
    let report = build_table(rows, cfg.limits)?;
    let dir = output_dir(out_flag, &cfg)?;
    write_file(&dir.join("table.csv"), table_csv(&report).as_bytes())?;
    write_file(&dir.join("table.json"), to_json(&report).as_bytes())?;
    out.write_all(render_table(&report).as_bytes()).map_err(config_err)?;
    if report.rows.iter().any(|r| r.status == RowStatus::Error) {
        return Err(CliError::Numerical("at least one table row failed to run".into()));
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Analyze { system, b } => cmd_analyze(system, *b, out),
        Command::Sweep { system, fit, out: dir } => cmd_sweep(system, fit, dir, out),
        Command::Table { rows, out: dir, config } => cmd_table(rows, dir, config, out),
        Command::Gallery => cmd_gallery(out),
        Command::Predict { system } => cmd_predict(system, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
