//! Command-line front end.
//!
//! Every command writes `<command>.json` (the report envelope), one CSV per
//! table and `<command>.manifest.json` into `--out`. Payloads depend only on
//! the instance bytes, the flags and the seed. Exit codes: 0 ok, 2 invalid
//! input, 3 numeric failure (or a replay mismatch), 4 partial result.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ellipsoid::{
    argmax_samples, ellipsoid_report, esup_check, gap_table, smallball_check, EllipsoidSpec,
};
use crate::error::Error;
use crate::gaussian::{
    concentration_check, estimate_modulus_grid, simulate_supremum, sudakov_bound, theorem0_report,
    GaussianModel,
};
use crate::instance::{Instance, MeasureSpec, MetricKind, MetricSpec};
use crate::measure::{IntegrandMode, NeighborIndex, ProbabilityMeasure, YoungFunction};
use crate::metric::FiniteMetricSpace;
use crate::partition::{
    audit_all, build_partition, chained_functional, lower_bound_report, verify_lemma2, McSupremum,
    PartitionConfig,
};
use crate::search::{balanced_measure, duality_report, BalanceConfig, McConfig, SearchConfig};

pub const SCHEMA_VERSION: &str = "1";
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

/// Largest number of radii listed in the covering table.
const COVER_TABLE_ROWS: usize = 64;
/// Samples used to build the ellipsoid empirical measure.
const NET_SAMPLES_MAX: usize = 20_000;

#[derive(Parser, Debug, Clone)]
#[command(name = "chainscope", version, about = "Majorizing-measure functionals and Gaussian supremum estimates on finite metric spaces")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Instance JSON file
    #[arg(long, global = true)]
    pub instance: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo sample count
    #[arg(long, global = true, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::GaussianLog)]
    pub mode: ModeArg,
    /// Exponent q of the Young function 2^(x^q) - 1
    #[arg(long, global = true, default_value_t = 2.0)]
    pub young: f64,
    /// Output directory
    #[arg(long, global = true, default_value = "chainscope-out")]
    pub out: PathBuf,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true, env = "CHAINSCOPE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    GaussianLog,
    YoungInverse,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Diameter, covering numbers, entropy integral and functionals of a measure
    Analyze,
    /// Supremum estimate, argmax law, Sudakov and entropy bounds, modulus sandwich
    Bounds {
        #[arg(long, value_delimiter = ',')]
        delta_grid: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
    },
    /// Greedy partition tree with per-cell audits
    Partition {
        #[arg(long, default_value_t = 4.0)]
        r: f64,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
    },
    /// The three extremal functionals and the balanced measure
    Duality {
        #[arg(long, default_value_t = 16)]
        restarts: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
    },
    /// Truncated ellipsoid study
    Ellipsoid {
        /// Semi-axes, nonincreasing
        #[arg(long, value_delimiter = ',', required = true)]
        axes: Vec<f64>,
        /// Net resolution (default 0.05 times the first semi-axis)
        #[arg(long)]
        net: Option<f64>,
    },
    /// Increment modulus S(delta) and the entropy diagnostic
    Modulus {
        #[arg(long, value_delimiter = ',')]
        delta_grid: Vec<f64>,
    },
    /// Re-run a manifest and compare the report bytes
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Bounds { .. } => "bounds",
            Command::Partition { .. } => "partition",
            Command::Duality { .. } => "duality",
            Command::Ellipsoid { .. } => "ellipsoid",
            Command::Modulus { .. } => "modulus",
            Command::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_input() { EXIT_INPUT } else { EXIT_NUMERIC };
        CliError { code, message: e.to_string() }
    }
}

fn input_error(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_INPUT, message: message.into() }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError { code: EXIT_INPUT, message: format!("{}: {e}", path.display()) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub schema_version: String,
    pub command: String,
    pub instance: Option<String>,
    pub status: String,
    pub payload: Value,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// arguments after the program name
    pub argv: Vec<String>,
    pub seed: u64,
    pub instance_path: Option<String>,
    pub instance_sha256: Option<String>,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
    pub report_sha256: String,
}

#[derive(Default)]
struct Outcome {
    instance: Option<String>,
    payload: Value,
    warnings: Vec<String>,
    tables: Vec<(String, String)>,
    extra_files: Vec<(String, String)>,
    partial: bool,
}

struct Loaded {
    instance: Instance,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_instance(global: &GlobalArgs) -> Result<Loaded, CliError> {
    let path = global.instance.clone().ok_or_else(|| input_error("--instance is required for this command"))?;
    let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let instance = Instance::parse(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok(Loaded { instance })
}

fn mode_of(global: &GlobalArgs) -> Result<IntegrandMode, CliError> {
    match global.mode {
        ModeArg::GaussianLog => Ok(IntegrandMode::GaussianLog),
        ModeArg::YoungInverse => Ok(IntegrandMode::YoungInverse(YoungFunction::new(global.young)?)),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn csv_table<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError { code: EXIT_NUMERIC, message: e.to_string() })?;
    }
    let bytes = w.into_inner().map_err(|e| CliError { code: EXIT_NUMERIC, message: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
}

fn default_grid(diam: f64, given: &[f64]) -> Vec<f64> {
    if !given.is_empty() {
        return given.to_vec();
    }
    if diam > 0.0 {
        [1.0 / 16.0, 1.0 / 8.0, 0.25, 0.5, 1.0].iter().map(|f| f * diam).collect()
    } else {
        Vec::new()
    }
}

fn measure_or_uniform(inst: &Instance, n: usize, warnings: &mut Vec<String>) -> Result<ProbabilityMeasure, CliError> {
    match inst.measure(n)? {
        Some(m) => Ok(m),
        None => {
            warnings.push("no measure in the instance; using the uniform measure".into());
            Ok(ProbabilityMeasure::uniform(n))
        }
    }
}

#[derive(Serialize)]
struct CoverRow {
    radius: f64,
    greedy_cover_size: usize,
    packing_size: usize,
    certified_lower: usize,
    certified_upper: usize,
    exact: Option<usize>,
}

#[derive(Serialize)]
struct SigmaRow {
    point: usize,
    label: String,
    sigma: f64,
}

fn cmd_analyze(global: &GlobalArgs) -> Result<Outcome, CliError> {
    let loaded = load_instance(global)?;
    let inst = &loaded.instance;
    let space = inst.space()?;
    let mode = mode_of(global)?;
    let n = space.n();
    let mut warnings = Vec::new();
    if n == 1 {
        warnings.push("degenerate instance: a single point, all functionals vanish".into());
    }
    let mu = measure_or_uniform(inst, n, &mut warnings)?;
    let fpo = space.farthest_point_order();
    let mut breakpoints: Vec<f64> = fpo.radii.iter().copied().filter(|r| *r > 0.0).collect();
    breakpoints.sort_by(|a, b| a.total_cmp(b));
    breakpoints.dedup();
    let stride = breakpoints.len().div_ceil(COVER_TABLE_ROWS).max(1);
    let cover_rows = breakpoints
        .iter()
        .step_by(stride)
        .map(|&r| {
            let c = space.covering_number(r)?;
            Ok(CoverRow {
                radius: r,
                greedy_cover_size: c.greedy_cover_size,
                packing_size: c.packing_size,
                certified_lower: c.certified_bounds.0,
                certified_upper: c.certified_bounds.1,
                exact: c.exact,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let dudley = space.entropy_integral(f64::INFINITY)?;
    let idx = NeighborIndex::new(&space);
    let w = mu.weights();
    let sigmas = idx.sigmas(w, f64::INFINITY, &mode);
    let functional = idx.functional(w, w, f64::INFINITY, &mode);
    let sigma_rows: Vec<SigmaRow> = sigmas
        .iter()
        .enumerate()
        .map(|(point, &sigma)| SigmaRow { point, label: space.labels()[point].clone(), sigma })
        .collect();
    let young = match mode {
        IntegrandMode::YoungInverse(phi) => {
            if phi.doubling_constant().is_none() {
                warnings.push(format!("Young function {} has no doubling constant above 1", phi.name()));
            }
            json!({"q": phi.exponent(), "name": phi.name(), "doubling_constant": phi.doubling_constant(),
                   "doubling_range": phi.doubling_range()})
        }
        IntegrandMode::GaussianLog => Value::Null,
    };
    let payload = json!({
        "n": n,
        "labels": space.labels(),
        "diam": space.diam(),
        "min_positive_distance": space.min_positive_distance(),
        "mode": mode.name(),
        "young": young,
        "measure": w,
        "dudley": dudley.value,
        "entropy_pieces": dudley.pieces,
        "covering": to_value(&cover_rows),
        "sigma": sigmas,
        "functional_self": functional,
        "modulus_entropy": space.modulus_entropy_diagnostic(),
    });
    Ok(Outcome {
        instance: Some(inst.name.clone()),
        payload,
        warnings,
        tables: vec![
            ("covering".into(), csv_table(&cover_rows)?),
            ("sigma".into(), csv_table(&sigma_rows)?),
            ("entropy_pieces".into(), csv_table(&dudley.pieces)?),
        ],
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct DeltaRow {
    delta: f64,
    modulus: f64,
    modulus_stderr: f64,
    cover_size: usize,
    entropy_term: f64,
    upper_proxy: f64,
    lower_expression: f64,
    lower_witness_c: f64,
}

fn cmd_bounds(global: &GlobalArgs, delta_grid: &[f64], restarts: usize) -> Result<Outcome, CliError> {
    let loaded = load_instance(global)?;
    let model = loaded.instance.model()?;
    let space = model.space().clone();
    let mut warnings = Vec::new();
    let mut partial = false;
    let grid = default_grid(space.diam(), delta_grid);
    let search = SearchConfig { restarts, seed: global.seed, ..SearchConfig::default() };
    let t0 = theorem0_report(&model, global.samples, global.seed, &grid, &search)?;
    warnings.extend(t0.warnings.iter().cloned());
    let sudakov = if space.n() >= 2 { Some(sudakov_bound(&space)?) } else { None };
    let dudley = space.entropy_integral(f64::INFINITY)?.value;
    let sigma = space.diam();
    let u_grid: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0].iter().map(|k| k * sigma).collect();
    let concentration = match concentration_check(&model, &u_grid, global.samples, global.seed) {
        Ok(c) => {
            warnings.extend(c.warnings.iter().cloned());
            Some(c)
        }
        Err(e) if !e.is_input() => {
            partial = true;
            warnings.push(format!("concentration check failed: {e}"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let ratio = |den: f64| (den > 0.0 && den.is_finite()).then(|| t0.esup.mean / den);
    let rows: Vec<DeltaRow> = t0
        .rows
        .iter()
        .map(|r| DeltaRow {
            delta: r.delta,
            modulus: r.modulus.value,
            modulus_stderr: r.modulus.stderr,
            cover_size: r.cover_size,
            entropy_term: r.entropy_term,
            upper_proxy: r.upper_proxy,
            lower_expression: r.lower_expression,
            lower_witness_c: r.lower_witness_c,
        })
        .collect();
    let payload = json!({
        "n": space.n(),
        "diam": space.diam(),
        "samples": global.samples,
        "seed": global.seed,
        "esup": t0.esup.mean,
        "stderr": t0.esup.stderr,
        "mu_F": t0.mu_f.measure.weights(),
        "tie_count": t0.mu_f.tie_count,
        "functional_mu_F": t0.functional_mu_f,
        "sudakov": sudakov,
        "dudley": dudley,
        "ratios": {
            "esup/functional_mu_F": t0.ratio,
            "esup/dudley": ratio(dudley),
            "esup/sudakov": sudakov.and_then(|s| ratio(s.value)),
        },
        "degenerate": t0.degenerate,
        "modulus": to_value(&rows),
        "concentration": concentration,
        "jitter": model.jitter(),
    });
    let mut tables = vec![("delta".to_string(), csv_table(&rows)?)];
    if let Some(c) = &concentration {
        tables.push(("concentration".into(), csv_table(&c.rows)?));
    }
    Ok(Outcome { instance: Some(loaded.instance.name.clone()), payload, warnings, tables, partial, ..Outcome::default() })
}

#[derive(Serialize)]
struct AuditRow {
    cell: usize,
    level: usize,
    children: usize,
    l0: usize,
    lhs: f64,
    chain_term: f64,
    grandchild_term: f64,
    rhs_core: f64,
    empirical_l: f64,
    carve_order_ok: bool,
    low_confidence: bool,
}

fn cmd_partition(global: &GlobalArgs, r: f64, eps: f64) -> Result<Outcome, CliError> {
    let loaded = load_instance(global)?;
    let inst = &loaded.instance;
    let model = inst.model()?;
    let space = model.space().clone();
    let mut warnings = Vec::new();
    let mu = measure_or_uniform(inst, space.n(), &mut warnings)?;
    let oracle = McSupremum::new(&model, global.samples, global.seed)?;
    let tree = build_partition(&space, &oracle, &PartitionConfig { r, eps_slack: eps })?;
    if r < 2.0 {
        warnings.push("r < 2: the summed induction assumes r >= 2".into());
    }
    let audits = audit_all(&tree, &mu)?;
    let lower = lower_bound_report(&tree, &mu, tree.cells[0].f_estimate)?;
    let mut bound_ok = 0;
    let mut worst_margin = f64::INFINITY;
    for t in 0..space.n() {
        let c = verify_lemma2(&tree, &space, &mu, t, f64::INFINITY)?;
        bound_ok += c.ok as usize;
        if c.rhs.is_finite() {
            worst_margin = worst_margin.min(c.rhs - c.lhs);
        }
    }
    let w = mu.weights();
    let functional = NeighborIndex::new(&space).functional(w, w, f64::INFINITY, &IntegrandMode::GaussianLog);
    let chained = chained_functional(&tree, &mu, &mu)?;
    if audits.iter().any(|a| a.low_confidence) {
        warnings.push("some audits are low-confidence: F stderr exceeds 10% of the level scale".into());
    }
    warnings.push("induction sum weights children by mu(A); parent_weighted_sum reports the mu(B) variant".into());
    let rows: Vec<AuditRow> = audits
        .iter()
        .map(|a| AuditRow {
            cell: a.cell,
            level: a.level,
            children: a.children,
            l0: a.l0,
            lhs: a.lhs,
            chain_term: a.chain_term,
            grandchild_term: a.grandchild_term,
            rhs_core: a.rhs_core,
            empirical_l: a.empirical_l,
            carve_order_ok: a.carve_order_ok,
            low_confidence: a.low_confidence,
        })
        .collect();
    let payload = json!({
        "r": r,
        "eps": eps,
        "depth": tree.depth(),
        "scale": tree.scale,
        "levels": tree.levels,
        "cells": tree.cells,
        "measure": w,
        "audits": audits,
        "lower_bound": lower,
        "chained_sigma_bound": {"checked": space.n(), "ok": bound_ok, "worst_margin": worst_margin},
        "functional_self": functional,
        "chained_functional": chained,
        "containment_violations": tree.containment_violations(&space),
    });
    Ok(Outcome {
        instance: Some(inst.name.clone()),
        payload,
        warnings,
        tables: vec![("audit".into(), csv_table(&rows)?)],
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct TraceRow {
    problem: String,
    index: usize,
    init: String,
    objective: f64,
    iterations: usize,
    converged: bool,
}

fn cmd_duality(global: &GlobalArgs, restarts: usize, tol: f64, max_iter: usize) -> Result<Outcome, CliError> {
    let loaded = load_instance(global)?;
    let inst = &loaded.instance;
    let space = inst.space()?;
    let mode = mode_of(global)?;
    let mut warnings = Vec::new();
    let model = match inst.model() {
        Ok(m) => Some(m),
        Err(e) if e.is_input() => {
            warnings.push(format!("no Gaussian model for this metric ({e}); supremum not estimated"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let cfg = SearchConfig { restarts, max_iter, tol, seed: global.seed, delta: f64::INFINITY };
    let report = duality_report(&space, model.as_ref(), &mode, &cfg, &McConfig { n_samples: global.samples, seed: global.seed })?;
    if report.degenerate {
        warnings.push("degenerate instance: all functionals vanish".into());
    }
    warnings.extend(report.violations.iter().cloned());
    let young = YoungFunction::new(global.young)?;
    let balanced = match balanced_measure(&space, &young, None, &BalanceConfig::default()) {
        Ok(b) => {
            if !b.converged {
                warnings.push(format!("balanced measure did not converge (spread {:e})", b.spread));
            }
            Some(b)
        }
        Err(e) if e.is_input() => {
            warnings.push(format!("balanced measure skipped: {e}"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let mut trace = Vec::new();
    for (problem, r) in
        [("sup_self", &report.sup_self_result), ("inf_sup", &report.inf_sup_result), ("sup_inf", &report.sup_inf_result)]
    {
        for t in &r.trace {
            trace.push(TraceRow {
                problem: problem.into(),
                index: t.index,
                init: t.init.clone(),
                objective: t.objective,
                iterations: t.iterations,
                converged: t.converged,
            });
        }
    }
    let payload = json!({
        "mode": mode.name(),
        "report": report,
        "balanced": balanced,
    });
    Ok(Outcome {
        instance: Some(inst.name.clone()),
        payload,
        warnings,
        tables: vec![("trace".into(), csv_table(&trace)?)],
        ..Outcome::default()
    })
}

fn cmd_ellipsoid(global: &GlobalArgs, axes: &[f64], net: Option<f64>) -> Result<Outcome, CliError> {
    let spec = EllipsoidSpec::new(axes.to_vec())?;
    let h = net.unwrap_or(0.05 * spec.axis(1));
    let mut warnings = vec!["ratio bands and the gap floor 0.1 are artifact envelopes, not sharp constants".to_string()];
    let esup = esup_check(&spec, global.samples, global.seed)?;
    let gaps = if spec.n() >= 2 { gap_table(&spec, global.samples, global.seed)? } else { Vec::new() };
    let net_samples = global.samples.min(NET_SAMPLES_MAX);
    if net_samples < global.samples {
        warnings.push(format!("empirical measure built from the first {net_samples} samples"));
    }
    let (report, emp) = ellipsoid_report(&spec, net_samples, global.seed, h)?;
    let anchor = argmax_samples(&spec, 1, global.seed).pop().map(|s| s.x);
    let smallball = match anchor {
        Some(x) => {
            let hi = x.iter().map(|v| v * v).sum::<f64>().sqrt() / 2f64.sqrt();
            let lo = x[1.min(x.len())..].iter().map(|v| v * v).sum::<f64>().sqrt() / 2f64.sqrt();
            let grid: Vec<f64> = (0..5).map(|k| lo + (hi - lo) * k as f64 / 4.0).filter(|e| *e > 0.0).collect();
            match smallball_check(&spec, &x, 1, &grid, global.samples, global.seed.wrapping_add(1)) {
                Ok(r) => Some(r),
                Err(e) => {
                    warnings.push(format!("small-ball table skipped: {e}"));
                    None
                }
            }
        }
        None => None,
    };
    let emp_instance = Instance {
        name: "ellipsoid_empirical".into(),
        metric: MetricSpec { kind: MetricKind::Points, data: emp.support.clone() },
        labels: None,
        measure: Some(MeasureSpec { weights: emp.measure.weights().to_vec() }),
    };
    let payload = json!({
        "spec": {"axes": spec.axes(), "n": spec.n(), "norm_t": spec.norm(),
                 "tail_norms": (1..=spec.n()).map(|i| spec.tail_norm(i)).collect::<Vec<_>>(),
                 "tail_sq_norms": (1..=spec.n()).map(|i| spec.tail_sq_norm(i)).collect::<Vec<_>>()},
        "esup": esup,
        "gaps": gaps,
        "report": report,
        "smallball": smallball,
    });
    Ok(Outcome {
        instance: None,
        payload,
        warnings,
        tables: vec![("gaps".into(), csv_table(&gaps)?)],
        extra_files: vec![("ellipsoid_instance.json".into(), emp_instance.to_json())],
        partial: false,
    })
}

#[derive(Serialize)]
struct ModulusRow {
    delta: f64,
    value: f64,
    stderr: f64,
}

fn cmd_modulus(global: &GlobalArgs, delta_grid: &[f64]) -> Result<Outcome, CliError> {
    let loaded = load_instance(global)?;
    let model: GaussianModel = loaded.instance.model()?;
    let space: &FiniteMetricSpace = model.space();
    let grid = default_grid(space.diam(), delta_grid);
    let (estimates, warnings) = if grid.is_empty() {
        (Vec::new(), vec!["zero diameter: modulus vanishes".to_string()])
    } else {
        estimate_modulus_grid(&model, &grid, global.samples, global.seed)?
    };
    let rows: Vec<ModulusRow> =
        estimates.iter().map(|e| ModulusRow { delta: e.delta, value: e.value, stderr: e.stderr }).collect();
    let esup = if space.n() >= 1 && global.samples >= 100 {
        Some(simulate_supremum(&model, global.samples, global.seed)?.0)
    } else {
        None
    };
    let payload = json!({
        "diam": space.diam(),
        "modulus": to_value(&rows),
        "esup": esup,
        "modulus_entropy": space.modulus_entropy_diagnostic(),
    });
    Ok(Outcome {
        instance: Some(loaded.instance.name.clone()),
        payload,
        warnings,
        tables: vec![("modulus".into(), csv_table(&rows)?)],
        ..Outcome::default()
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Analyze => cmd_analyze(g),
        Command::Bounds { delta_grid, restarts } => cmd_bounds(g, delta_grid, *restarts),
        Command::Partition { r, eps } => cmd_partition(g, *r, *eps),
        Command::Duality { restarts, tol, max_iter } => cmd_duality(g, *restarts, *tol, *max_iter),
        Command::Ellipsoid { axes, net } => cmd_ellipsoid(g, axes, *net),
        Command::Modulus { delta_grid } => cmd_modulus(g, delta_grid),
        Command::Replay { .. } => unreachable!("replay is handled before dispatch"),
    }
}

fn render_envelope(command: &str, outcome: &Outcome) -> String {
    let envelope = ReportEnvelope {
        schema_version: SCHEMA_VERSION.into(),
        command: command.into(),
        instance: outcome.instance.clone(),
        status: if outcome.partial { "partial".into() } else { "ok".into() },
        payload: outcome.payload.clone(),
        warnings: outcome.warnings.clone(),
    };
    let mut text = serde_json::to_string_pretty(&envelope).expect("envelope serializes");
    text.push('\n');
    text
}

/// Runs one non-replay command and writes its outputs. Returns the exit code
/// and the manifest.
fn execute(cli: &Cli, argv: &[String]) -> Result<(i32, RunManifest), CliError> {
    let start = Instant::now();
    let command = cli.command.name();
    let outcome = dispatch(cli)?;
    let out = &cli.global.out;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let report = render_envelope(command, &outcome);
    let report_name = format!("{command}.json");
    write_atomic(&out.join(&report_name), report.as_bytes())?;
    let mut outputs = vec![report_name];
    for (name, body) in &outcome.tables {
        let file = format!("{command}_{name}.csv");
        write_atomic(&out.join(&file), body.as_bytes())?;
        outputs.push(file);
    }
    for (file, body) in &outcome.extra_files {
        write_atomic(&out.join(file), body.as_bytes())?;
        outputs.push(file.clone());
    }
    let (instance_path, instance_sha256) = match &cli.global.instance {
        Some(p) if !matches!(cli.command, Command::Ellipsoid { .. }) => {
            let bytes = std::fs::read(p).map_err(|e| io_error(p, e))?;
            let abs = std::fs::canonicalize(p).unwrap_or_else(|_| p.clone());
            (Some(abs.display().to_string()), Some(sha256_hex(&bytes)))
        }
        _ => (None, None),
    };
    let manifest_name = format!("{command}.manifest.json");
    outputs.push(manifest_name.clone());
    let manifest = RunManifest {
        command: command.into(),
        argv: argv.to_vec(),
        seed: cli.global.seed,
        instance_path,
        instance_sha256,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs,
        report_sha256: sha256_hex(report.as_bytes()),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out.join(&manifest_name), text.as_bytes())?;
    let code = if outcome.partial { EXIT_PARTIAL } else { EXIT_OK };
    Ok((code, manifest))
}

/// Replaces (or appends) `--flag value` in an argument list.
fn set_flag(argv: &mut Vec<String>, flag: &str, value: &str) {
    let eq = format!("{flag}=");
    argv.retain(|a| !a.starts_with(&eq));
    if let Some(pos) = argv.iter().position(|a| a == flag) {
        if pos + 1 < argv.len() {
            argv[pos + 1] = value.into();
            return;
        }
        argv.truncate(pos);
    }
    argv.push(flag.into());
    argv.push(value.into());
}

fn replay(cli: &Cli, manifest_path: &Path) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| io_error(manifest_path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", manifest_path.display())))?;
    let mut argv = manifest.argv.clone();
    if let (Some(path), Some(hash)) = (&manifest.instance_path, &manifest.instance_sha256) {
        let bytes = std::fs::read(path).map_err(|e| io_error(Path::new(path), e))?;
        if &sha256_hex(&bytes) != hash {
            return Err(input_error(format!("{path}: instance changed since the manifest was written")));
        }
        set_flag(&mut argv, "--instance", path);
    }
    set_flag(&mut argv, "--out", &cli.global.out.display().to_string());
    if let Some(t) = cli.global.threads {
        set_flag(&mut argv, "--threads", &t.to_string());
    }
    let mut full = vec!["chainscope".to_string()];
    full.extend(argv.iter().cloned());
    let inner = Cli::try_parse_from(&full).map_err(|e| input_error(e.to_string()))?;
    if matches!(inner.command, Command::Replay { .. }) {
        return Err(input_error("a manifest cannot replay another replay"));
    }
    let (code, fresh) = run_in_pool(&inner, || execute(&inner, &argv))??;
    let identical = fresh.report_sha256 == manifest.report_sha256;
    let summary = json!({
        "manifest": manifest_path.display().to_string(),
        "command": manifest.command,
        "identical": identical,
        "recorded_sha256": manifest.report_sha256,
        "replayed_sha256": fresh.report_sha256,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(if identical { code } else { EXIT_NUMERIC })
}

fn run_in_pool<T: Send>(cli: &Cli, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(input_error("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError { code: EXIT_NUMERIC, message: e.to_string() })?;
    Ok(pool.install(f))
}

/// Entry point; `args` includes the program name.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = args.iter().skip(1).cloned().collect();
    let result = match &cli.command {
        Command::Replay { manifest } => replay(&cli, manifest),
        _ => run_in_pool(&cli, || execute(&cli, &argv)).and_then(|r| {
            r.map(|(code, m)| {
                println!("{}", cli.global.out.join(&m.outputs[0]).display());
                code
            })
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
