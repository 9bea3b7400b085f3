//! Experiment runner: a flat `key = value` configuration, CSV convergence
//! tables, VTK snapshots and a summary of fitted convergence rates.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::adapt::{adaptive_solve, adaptive_solve_with, fill_q, AdaptiveRunConfig, DecayMode, LevelView, RunRecord};
use crate::error::{Error, Result};
use crate::fem::triangle_quadrature;
use crate::iterate::StoppingRule;
use crate::mesh::write_vtk;
use crate::problem::{builtin, exact_energy};

/// Number of trailing records used for the fitted rates.
pub const SLOPE_WINDOW: usize = 5;
/// Gauss-Legendre points per direction for exact-solution energies.
const EXACT_ENERGY_POINTS: usize = 40;

pub const CSV_HEADER: &str = "N,dof,nstar,energy,residual,error,q,walltime";

/// Generations for which `solution_<N>.vtk` is written.
#[derive(Clone, Debug, PartialEq)]
pub enum VtkSelection {
    None,
    Last,
    All,
    Generations(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub solver: AdaptiveRunConfig,
    pub vtk: VtkSelection,
    /// Reference energy given directly.
    pub reference_energy: Option<f64>,
    /// Reference energy from a finer adaptive run to this many dofs.
    pub reference_dof: Option<usize>,
    /// Record wall times. Off by default so that outputs are reproducible.
    pub timing: bool,
    /// Cache for reference energies; `<out>/reference_cache` when `None`.
    pub cache_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(solver: AdaptiveRunConfig) -> Self {
        RunOptions {
            solver,
            vtk: VtkSelection::Last,
            reference_energy: None,
            reference_dof: None,
            timing: false,
            cache_dir: None,
        }
    }
}

/// One `key = value` line of a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigEntry {
    /// 1-based line number, `None` for entries given outside a file.
    pub line: Option<usize>,
    pub key: String,
    pub value: String,
}

fn entry_error(line: Option<usize>, key: &str, msg: impl std::fmt::Display) -> Error {
    match line {
        Some(l) => Error::Config(format!("line {l}, key '{key}': {msg}")),
        None => Error::Config(format!("key '{key}': {msg}")),
    }
}

/// Splits `key = value`; `#` starts a comment.
pub fn parse_entry(text: &str, line: Option<usize>) -> Result<Option<ConfigEntry>> {
    let body = text.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let Some((key, value)) = body.split_once('=') else {
        let msg = format!("expected 'key = value', found '{body}'");
        return Err(match line {
            Some(l) => Error::Config(format!("line {l}: {msg}")),
            None => Error::Config(msg),
        });
    };
    let (key, value) = (key.trim(), value.trim());
    if key.is_empty() {
        return Err(match line {
            Some(l) => Error::Config(format!("line {l}: empty key")),
            None => Error::Config("empty key".into()),
        });
    }
    Ok(Some(ConfigEntry {
        line,
        key: key.to_string(),
        value: value.to_string(),
    }))
}

/// Parses every line; duplicate keys are rejected.
pub fn parse_entries(text: &str) -> Result<Vec<ConfigEntry>> {
    let mut entries: Vec<ConfigEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let Some(entry) = parse_entry(raw, Some(i + 1))? else { continue };
        if let Some(first) = entries.iter().find(|e| e.key == entry.key) {
            let msg = format!("duplicate key (first set on line {})", first.line.unwrap_or(0));
            return Err(entry_error(entry.line, &entry.key, msg));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Replaces or appends `entry` by key.
pub fn apply_override(entries: &mut Vec<ConfigEntry>, entry: ConfigEntry) {
    match entries.iter_mut().find(|e| e.key == entry.key) {
        Some(e) => *e = entry,
        None => entries.push(entry),
    }
}

fn parse_f64(e: &ConfigEntry) -> Result<f64> {
    match e.value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(entry_error(e.line, &e.key, format!("expected a finite number, found '{}'", e.value))),
    }
}

/// Accepts plain integers and integral floats such as `1e5`.
fn parse_count(e: &ConfigEntry) -> Result<usize> {
    if let Ok(v) = e.value.parse::<usize>() {
        return Ok(v);
    }
    match e.value.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 => Ok(v as usize),
        _ => Err(entry_error(e.line, &e.key, format!("expected a non-negative integer, found '{}'", e.value))),
    }
}

fn parse_bool(e: &ConfigEntry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(entry_error(e.line, &e.key, format!("expected true or false, found '{other}'"))),
    }
}

fn parse_vtk(e: &ConfigEntry) -> Result<VtkSelection> {
    match e.value.as_str() {
        "none" | "" => Ok(VtkSelection::None),
        "last" => Ok(VtkSelection::Last),
        "all" => Ok(VtkSelection::All),
        list => list
            .split(',')
            .map(|g| {
                g.trim().parse::<u64>().map_err(|_| {
                    entry_error(e.line, &e.key, format!("expected none, last, all or a list of generations, found '{list}'"))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(VtkSelection::Generations),
    }
}

fn in_open_unit(e: &ConfigEntry) -> Result<f64> {
    let v = parse_f64(e)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(entry_error(e.line, &e.key, format!("must lie in (0, 1), got {v}")))
    }
}

fn positive(e: &ConfigEntry) -> Result<f64> {
    let v = parse_f64(e)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(entry_error(e.line, &e.key, format!("must be positive, got {v}")))
    }
}

fn at_least_one(e: &ConfigEntry) -> Result<usize> {
    let v = parse_count(e)?;
    if v >= 1 {
        Ok(v)
    } else {
        Err(entry_error(e.line, &e.key, "must be at least 1"))
    }
}

/// Builds validated run options from parsed entries.
pub fn options_from_entries(entries: &[ConfigEntry]) -> Result<RunOptions> {
    let Some(exp) = entries.iter().find(|e| e.key == "experiment") else {
        return Err(Error::Config("missing key 'experiment'".into()));
    };
    let mut opts = RunOptions::new(AdaptiveRunConfig::new(&exp.value));
    let s = &mut opts.solver;
    for e in entries {
        match e.key.as_str() {
            "experiment" => {}
            "alpha" => s.alpha = in_open_unit(e)?,
            "theta" => s.theta = in_open_unit(e)?,
            "dt" => s.dt = Some(positive(e)?),
            "epsilon" => s.epsilon = Some(positive(e)?),
            "max_dof" => s.max_dof = parse_count(e)?,
            "initial_n" => s.initial_n = Some(at_least_one(e)?),
            "quad_order" => {
                let q = parse_count(e)?;
                triangle_quadrature(q).map_err(|err| entry_error(e.line, &e.key, err))?;
                s.quad_order = q;
            }
            "decay_mode" => s.decay_mode = DecayMode::from_tag(&e.value).map_err(|err| entry_error(e.line, &e.key, err))?,
            "stopping" => s.stopping = StoppingRule::from_tag(&e.value).map_err(|err| entry_error(e.line, &e.key, err))?,
            "max_inner" => s.max_inner = at_least_one(e)?,
            "max_levels" => s.max_levels = at_least_one(e)?,
            "linear_shortcut" => s.linear_shortcut = Some(parse_bool(e)?),
            "vtk_generations" => opts.vtk = parse_vtk(e)?,
            "reference_energy" => opts.reference_energy = Some(parse_f64(e)?),
            "reference_dof" => opts.reference_dof = Some(parse_count(e)?),
            "timing" => opts.timing = parse_bool(e)?,
            "cache_dir" => opts.cache_dir = Some(PathBuf::from(&e.value)),
            _ => return Err(entry_error(e.line, &e.key, "unknown key")),
        }
    }
    let s = &opts.solver;
    if let Err(err) = builtin(&s.experiment, s.epsilon) {
        let key = if s.epsilon.is_some() && !matches!(err, Error::UnknownExperiment(_)) { "epsilon" } else { "experiment" };
        let line = entries.iter().find(|e| e.key == key).and_then(|e| e.line);
        return Err(entry_error(line, key, err));
    }
    if let Some(r) = opts.reference_dof {
        if r < s.max_dof {
            let line = entries.iter().find(|e| e.key == "reference_dof").and_then(|e| e.line);
            return Err(entry_error(line, "reference_dof", format!("must be at least max_dof = {}", s.max_dof)));
        }
    }
    s.validate().map_err(|err| Error::Config(err.to_string()))?;
    Ok(opts)
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<RunOptions> {
    options_from_entries(&parse_entries(text)?)
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub converged: bool,
    pub reference_energy: Option<f64>,
    pub error_slope: Option<f64>,
    pub energy_error_slope: Option<f64>,
}

/// Least-squares slope of `log y` against `log x`; pairs with a
/// non-positive entry are skipped.
pub fn fitted_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn window(records: &[RunRecord]) -> &[RunRecord] {
    &records[records.len().saturating_sub(SLOPE_WINDOW)..]
}

/// Fitted rate of the gradient error over the last records.
pub fn error_slope(records: &[RunRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = window(records)
        .iter()
        .filter_map(|r| r.error.map(|e| (r.dof as f64, e)))
        .collect();
    fitted_slope(&pts)
}

/// Fitted rate of `E_N - e_ref` over the last records.
pub fn energy_error_slope(records: &[RunRecord], e_ref: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = window(records).iter().map(|r| (r.dof as f64, r.energy - e_ref)).collect();
    fitted_slope(&pts)
}

fn cache_key(cfg: &AdaptiveRunConfig, target_dof: usize) -> String {
    let opt = |v: Option<f64>| v.map_or("default".to_string(), |x| format!("{x:e}"));
    let raw = format!(
        "{}_eps{}_a{:e}_t{:e}_dt{}_n{}_q{}_{}_{}_mi{}_ml{}_ls{}_dof{}",
        cfg.experiment,
        opt(cfg.epsilon),
        cfg.alpha,
        cfg.theta,
        opt(cfg.dt),
        cfg.initial_n.map_or("default".to_string(), |n| n.to_string()),
        cfg.quad_order,
        cfg.decay_mode.tag(),
        cfg.stopping.tag(),
        cfg.max_inner,
        cfg.max_levels,
        cfg.linear_shortcut.map_or("default", |b| if b { "on" } else { "off" }),
        target_dof,
    );
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

/// Final energy of an adaptive run with `cfg` continued to `target_dof`.
/// With a cache directory the value is stored under a key built from all
/// parameters that influence it, and later calls read it back.
pub fn reference_energy(cfg: &AdaptiveRunConfig, target_dof: usize, cache_dir: Option<&Path>) -> Result<f64> {
    if target_dof < cfg.max_dof {
        return Err(Error::InvalidParameter(format!(
            "reference target {target_dof} is below max_dof {}",
            cfg.max_dof
        )));
    }
    let path = cache_dir.map(|d| d.join(format!("{}.txt", cache_key(cfg, target_dof))));
    if let Some(path) = &path {
        if let Ok(text) = fs::read_to_string(path) {
            if let Ok(v) = text.trim().parse::<f64>() {
                return Ok(v);
            }
        }
    }
    let mut fine = cfg.clone();
    fine.max_dof = target_dof;
    let run = adaptive_solve(&fine)?;
    let e = run.records.last().map(|r| r.energy).ok_or(Error::EmptyMesh)?;
    if let (Some(dir), Some(path)) = (cache_dir, &path) {
        fs::create_dir_all(dir)?;
        fs::write(path, format!("{e}\n"))?;
    }
    Ok(e)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

/// Writes the convergence table. Floats use the shortest decimal that
/// parses back to the same value; absent values are empty cells.
pub fn write_records_csv<W: Write>(out: &mut W, records: &[RunRecord], timing: bool) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.generation,
            r.dof,
            r.n_star,
            r.energy,
            r.residual,
            fmt_opt(r.error),
            fmt_opt(r.q),
            if timing { format!("{}", r.walltime) } else { String::new() },
        )?;
    }
    Ok(())
}

fn write_summary<W: Write>(out: &mut W, opts: &RunOptions, s: &RunSummary) -> std::io::Result<()> {
    let last = s.records.last();
    writeln!(out, "experiment = {}", opts.solver.experiment)?;
    writeln!(out, "stopping = {}", opts.solver.stopping.tag())?;
    writeln!(out, "levels = {}", s.records.len())?;
    writeln!(out, "converged = {}", s.converged)?;
    writeln!(out, "final_dof = {}", last.map_or(0, |r| r.dof))?;
    writeln!(out, "final_energy = {}", fmt_opt(last.map(|r| r.energy)))?;
    writeln!(out, "max_nstar = {}", s.records.iter().map(|r| r.n_star).max().unwrap_or(0))?;
    writeln!(out, "reference_energy = {}", fmt_opt(s.reference_energy))?;
    writeln!(out, "error_slope = {}", fmt_opt(s.error_slope))?;
    writeln!(out, "energy_error_slope = {}", fmt_opt(s.energy_error_slope))?;
    if opts.timing {
        writeln!(out, "total_walltime = {}", s.records.iter().map(|r| r.walltime).sum::<f64>())?;
    }
    Ok(())
}

fn wants_vtk(sel: &VtkSelection, view: &LevelView<'_>) -> bool {
    match sel {
        VtkSelection::None => false,
        VtkSelection::All => true,
        VtkSelection::Last => view.decays.is_none() || view.marked.is_empty(),
        VtkSelection::Generations(g) => g.contains(&view.record.generation),
    }
}

/// Runs the configured experiment and writes `records.csv`, the selected
/// `solution_<N>.vtk` files and `summary.txt` into `outdir`.
pub fn run(opts: &RunOptions, outdir: &Path) -> Result<RunSummary> {
    run_with_progress(opts, outdir, |_| {})
}

/// Like [`run`], calling `progress` after each level.
pub fn run_with_progress(opts: &RunOptions, outdir: &Path, mut progress: impl FnMut(&RunRecord)) -> Result<RunSummary> {
    fs::create_dir_all(outdir)?;
    let p = opts.solver.problem()?;
    let run = adaptive_solve_with(&p, &opts.solver, |view| {
        progress(view.record);
        if wants_vtk(&opts.vtk, view) {
            let values: Vec<f64> = view
                .space
                .vertex_values(view.u)
                .iter()
                .map(|v| v + p.dirichlet_lift)
                .collect();
            let path = outdir.join(format!("solution_{}.vtk", view.record.generation));
            let mut w = BufWriter::new(fs::File::create(path)?);
            let title = format!("{} generation {}", p.name, view.record.generation);
            write_vtk(&mut w, &view.space.mesh, &title, &[("u", &values)])?;
            w.flush()?;
        }
        Ok(())
    })?;

    let e_ref = match (opts.reference_energy, opts.reference_dof) {
        (Some(e), _) => Some(e),
        (None, Some(target)) => {
            let cache = opts.cache_dir.clone().unwrap_or_else(|| outdir.join("reference_cache"));
            Some(reference_energy(&opts.solver, target, Some(&cache))?)
        }
        (None, None) => exact_energy(&p, EXACT_ENERGY_POINTS),
    };
    let mut records = run.records;
    if let Some(e) = e_ref {
        fill_q(&mut records, e);
    }
    let summary = RunSummary {
        error_slope: error_slope(&records),
        energy_error_slope: e_ref.and_then(|e| energy_error_slope(&records, e)),
        reference_energy: e_ref,
        converged: run.converged,
        records,
    };

    let mut csv = BufWriter::new(fs::File::create(outdir.join("records.csv"))?);
    write_records_csv(&mut csv, &summary.records, opts.timing)?;
    csv.flush()?;
    let mut sum = BufWriter::new(fs::File::create(outdir.join("summary.txt"))?);
    write_summary(&mut sum, opts, &summary)?;
    sum.flush()?;
    Ok(summary)
}

/// Process exit code for a failure: 2 configuration, 3 solver, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        crate::ErrorCategory::Config => 2,
        crate::ErrorCategory::Solver => 3,
        crate::ErrorCategory::Io => 4,
    }
}
