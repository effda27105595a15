//! Benchmark configuration, run orchestration, and artifact emission:
//! TOML configs with dotted-path overrides, PGM/CSV density output,
//! per-iteration logs, run summaries, and mesh-refinement sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_filter, assemble_operators, AssembledOperators, FilterOperator};
use crate::error::{Error, Result};
use crate::grid::{inverter_problem, mbb_problem};
use crate::model::{discreteness, HessianKind, ProblemKind};
use crate::optim::{run, Algorithm, LambdaSchedule, OptimizerConfig, RunResult};

/// Exit code for a fully converged run.
pub const EXIT_CONVERGED: i32 = 0;
/// Exit code when the iteration cap is reached without convergence.
pub const EXIT_ITERATION_CAP: i32 = 2;
/// Exit code for a numerical or configuration failure.
pub const EXIT_FAILURE: i32 = 3;

/// Which benchmark geometry to set up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemChoice {
    Mbb,
    Inverter,
}

/// How the volume-penalty weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// λ = value (taken literally).
    Fixed,
    /// λ = value / |Ω| with |Ω| the meshed domain area.
    OverArea,
}

/// Volume-penalty section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaConfig {
    pub rule: LambdaRule,
    pub value: f64,
    /// Optional second-phase value applied at the first iterate with J < 0.
    pub continued: Option<f64>,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig {
            rule: LambdaRule::OverArea,
            value: 200.0,
            continued: None,
        }
    }
}

/// Optimizer section of the config file (defaults match the solver's).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub algorithm: AlgorithmChoice,
    pub hessian: HessianChoice,
    pub tau0: f64,
    pub sigma: f64,
    pub nu: f64,
    pub move_limit: f64,
    pub eps_active: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub backtracking: bool,
}

/// Algorithm names as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmChoice {
    Fbs,
    Tmp,
    Gp,
    Oc,
    SensFilter,
}

impl From<AlgorithmChoice> for Algorithm {
    fn from(c: AlgorithmChoice) -> Algorithm {
        match c {
            AlgorithmChoice::Fbs => Algorithm::Fbs,
            AlgorithmChoice::Tmp => Algorithm::Tmp,
            AlgorithmChoice::Gp => Algorithm::Gp,
            AlgorithmChoice::Oc => Algorithm::Oc,
            AlgorithmChoice::SensFilter => Algorithm::SensFilter,
        }
    }
}

/// Hessian-model names as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianChoice {
    Identity,
    Reciprocal,
    ReciprocalAbs,
}

impl From<HessianChoice> for HessianKind {
    fn from(c: HessianChoice) -> HessianKind {
        match c {
            HessianChoice::Identity => HessianKind::IdentityScaled,
            HessianChoice::Reciprocal => HessianKind::Reciprocal,
            HessianChoice::ReciprocalAbs => HessianKind::ReciprocalAbs,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSection {
            algorithm: AlgorithmChoice::Fbs,
            hessian: HessianChoice::Reciprocal,
            tau0: d.tau0,
            sigma: d.sigma,
            nu: d.nu,
            move_limit: d.move_limit,
            eps_active: d.eps_active,
            eps1: d.eps1,
            eps2: d.eps2,
            max_iter: d.max_iter,
            max_backtracks: d.max_backtracks,
            backtracking: d.backtracking,
        }
    }
}

/// A full benchmark case description, parsed from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemChoice,
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_ny")]
    pub ny: usize,
    /// Tikhonov regularization weight β.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// SIMP penalty exponent.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Void density floor δ_ρ.
    #[serde(default = "default_delta_rho")]
    pub delta_rho: f64,
    /// Multiplier applied to the assembled load vector.
    #[serde(default = "default_load_scale")]
    pub load_scale: f64,
    /// Input spring stiffness (inverter only).
    #[serde(default = "default_spring")]
    pub k_in: f64,
    /// Output spring stiffness (inverter only).
    #[serde(default = "default_spring")]
    pub k_out: f64,
    /// Helmholtz filter radius in units of the element size `a`
    /// (only used by the sensitivity-filter algorithm).
    #[serde(default = "default_filter_radius")]
    pub filter_radius: f64,
    /// Output directory for artifacts.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub lambda: LambdaConfig,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

fn default_nx() -> usize {
    60
}
fn default_ny() -> usize {
    20
}
fn default_beta() -> f64 {
    0.06
}
fn default_p() -> f64 {
    3.0
}
fn default_delta_rho() -> f64 {
    1e-3
}
fn default_load_scale() -> f64 {
    1.0
}
fn default_spring() -> f64 {
    0.1
}
fn default_filter_radius() -> f64 {
    2.0
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.nx > 0 && self.ny > 0, "nx and ny must be positive")?;
        check(self.beta >= 0.0, "beta must be non-negative")?;
        check(self.p >= 1.0, "p must be at least 1")?;
        check(
            self.delta_rho > 0.0 && self.delta_rho < 1.0,
            "delta_rho must lie in (0, 1)",
        )?;
        check(self.load_scale != 0.0, "load_scale must be non-zero")?;
        check(
            self.k_in > 0.0 && self.k_out > 0.0,
            "spring stiffnesses must be positive",
        )?;
        check(self.filter_radius >= 0.0, "filter_radius must be non-negative")?;
        check(self.lambda.value > 0.0, "lambda.value must be positive")?;
        if let Some(c) = self.lambda.continued {
            check(c > 0.0, "lambda.continued must be positive")?;
        }
        self.optimizer_config(1.0).validate()
    }

    /// Resolved volume-penalty weight for a mesh of area `area`.
    pub fn lambda_value(&self, area: f64) -> f64 {
        match self.lambda.rule {
            LambdaRule::Fixed => self.lambda.value,
            LambdaRule::OverArea => self.lambda.value / area,
        }
    }

    /// Solver-level configuration with λ resolved against the mesh area.
    pub fn optimizer_config(&self, area: f64) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            algorithm: o.algorithm.into(),
            hessian: o.hessian.into(),
            tau0: o.tau0,
            sigma: o.sigma,
            nu: o.nu,
            move_limit: o.move_limit,
            eps_active: o.eps_active,
            eps1: o.eps1,
            eps2: o.eps2,
            max_iter: o.max_iter,
            max_backtracks: o.max_backtracks,
            backtracking: o.backtracking,
            lambda: LambdaSchedule {
                initial: self.lambda_value(area),
                continued: self.lambda.continued,
            },
            p: self.p,
            delta_rho: self.delta_rho,
        }
    }

    /// A copy of this config refined by an integer mesh factor.
    pub fn refined(&self, factor: usize) -> RunConfig {
        let mut c = self.clone();
        c.nx = self.nx * factor;
        c.ny = self.ny * factor;
        c
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses a config file, applying `key=value` overrides (dotted paths)
/// before deserialization.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let config: RunConfig = value
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Applies one `a.b.c=value` override to a parsed TOML document.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override '{spec}' has an empty key segment")));
    }
    let mut node = doc;
    for seg in &segments[..segments.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{spec}': '{seg}' is not a table")))?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let leaf = raw.trim();
    // Interpret the value as TOML if possible, else as a bare string.
    let parsed: toml::Value = format!("v = {leaf}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|mut t| t.as_table_mut().and_then(|t| t.remove("v")))
        .unwrap_or_else(|| toml::Value::String(leaf.to_string()));
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override '{spec}': target is not a table")))?;
    table.insert(segments[segments.len() - 1].to_string(), parsed);
    Ok(())
}

/// Assembled problem plus everything needed to run and report it.
pub struct PreparedCase {
    pub ops: AssembledOperators,
    pub kind: ProblemKind,
    pub config: OptimizerConfig,
    pub filter: Option<FilterOperator>,
}

/// Builds mesh, operators, and solver configuration from a run config.
pub fn prepare_case(config: &RunConfig) -> Result<PreparedCase> {
    config.validate()?;
    let (mesh, bc) = match config.problem {
        ProblemChoice::Mbb => mbb_problem(config.nx, config.ny)?,
        ProblemChoice::Inverter => {
            inverter_problem(config.nx, config.ny, config.k_in, config.k_out)?
        }
    };
    let kind = if bc.is_mechanism() {
        ProblemKind::Mechanism
    } else {
        ProblemKind::Compliance
    };
    let mut ops = assemble_operators(&mesh, &bc, config.beta)?;
    ops.force *= config.load_scale;
    let filter = if config.optimizer.algorithm == AlgorithmChoice::SensFilter {
        let r = config.filter_radius * ops.mesh.element_size;
        Some(assemble_filter(&ops.mesh, r)?)
    } else {
        None
    };
    let solver_config = config.optimizer_config(ops.mesh.area());
    Ok(PreparedCase {
        ops,
        kind,
        config: solver_config,
        filter,
    })
}

/// Elemental densities `[Pz]_e` of a nodal density field.
pub fn elemental_densities(ops: &AssembledOperators, z: &DVector<f64>) -> DVector<f64> {
    ops.apply_p(z)
}

/// ASCII PGM (P2) rendering: one pixel per element, solid material black.
pub fn density_pgm(nx: usize, ny: usize, rho: &DVector<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "P2");
    let _ = writeln!(out, "{nx} {ny}");
    let _ = writeln!(out, "255");
    // Raster order is top row first; element (i, j) lives at index j*nx + i.
    for j in (0..ny).rev() {
        let row: Vec<String> = (0..nx)
            .map(|i| {
                let v = rho[j * nx + i].clamp(0.0, 1.0);
                format!("{}", (255.0 * (1.0 - v)).round() as u32)
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// CSV of elemental densities, one grid row per line, bottom row first.
pub fn density_csv(nx: usize, ny: usize, rho: &DVector<f64>) -> String {
    let mut out = String::new();
    for j in 0..ny {
        let row: Vec<String> = (0..nx).map(|i| format!("{:.12e}", rho[j * nx + i])).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Per-iteration log in CSV form.
pub fn iterations_csv(result: &RunResult) -> String {
    let mut out = String::from("n,tau,backtracks,J,R,V,Jtilde,E1,E2\n");
    for r in &result.records {
        let _ = writeln!(
            out,
            "{},{:.6e},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.6e},{:.6e}",
            r.n, r.tau, r.backtracks, r.j, r.r, r.volume_fraction, r.j_tilde, r.e1, r.e2
        );
    }
    out
}

/// Human-readable run summary (key = value lines).
pub fn summary_text(config: &RunConfig, prepared: &PreparedCase, result: &RunResult) -> String {
    let last = result.records.last();
    let total_backtracks: usize = result.records.iter().map(|r| r.backtracks).sum();
    let m = discreteness(&result.z, &prepared.ops);
    let area = prepared.ops.mesh.area();
    let volume_term =
        result.final_lambda * result.final_eval.volume_fraction * area;
    let load_work = result.final_eval.j - volume_term;
    let mut out = String::new();
    let _ = writeln!(out, "problem = \"{}\"", format!("{:?}", config.problem).to_lowercase());
    let _ = writeln!(out, "grid = \"{}x{}\"", config.nx, config.ny);
    let _ = writeln!(out, "converged = {}", result.converged);
    let _ = writeln!(out, "iterations = {}", result.records.len());
    let _ = writeln!(out, "backtracks = {total_backtracks}");
    let _ = writeln!(out, "lambda = {:.10e}", result.final_lambda);
    let _ = writeln!(out, "load_work = {load_work:.10e}");
    let _ = writeln!(out, "objective = {:.10e}", result.final_eval.j);
    let _ = writeln!(out, "regularization = {:.10e}", result.final_eval.r);
    let _ = writeln!(out, "volume_fraction = {:.10e}", result.final_eval.volume_fraction);
    let _ = writeln!(out, "objective_total = {:.10e}", result.final_eval.j_tilde);
    let _ = writeln!(out, "discreteness = {m:.6e}");
    if let Some(r) = last {
        let _ = writeln!(out, "e1 = {:.6e}", r.e1);
        let _ = writeln!(out, "e2 = {:.6e}", r.e2);
    }
    out
}

/// Outcome of one orchestrated case.
pub struct CaseOutcome {
    pub exit_code: i32,
    pub result: RunResult,
}

/// Runs one case and writes density.pgm, density.csv, iterations.csv, and
/// summary.txt into the configured output directory.
pub fn run_case(config: &RunConfig) -> Result<CaseOutcome> {
    let prepared = prepare_case(config)?;
    let result = run(&prepared.ops, prepared.kind, &prepared.config, prepared.filter.as_ref())?;
    let dir = &config.output;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rho = elemental_densities(&prepared.ops, &result.z.as_vector());
    let write = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(())
    };
    write("density.pgm", density_pgm(config.nx, config.ny, &rho))?;
    write("density.csv", density_csv(config.nx, config.ny, &rho))?;
    write("iterations.csv", iterations_csv(&result))?;
    write("summary.txt", summary_text(config, &prepared, &result))?;
    let exit_code = if result.converged {
        EXIT_CONVERGED
    } else {
        EXIT_ITERATION_CAP
    };
    Ok(CaseOutcome { exit_code, result })
}

/// Per-level outcome of a refinement sweep.
pub struct LevelReport {
    pub factor: usize,
    pub nx: usize,
    pub ny: usize,
    pub outcome: Result<LevelData>,
}

/// Data retained from a successful refinement level.
pub struct LevelData {
    pub converged: bool,
    pub iterations: usize,
    pub volume_fraction: f64,
    pub j_tilde: f64,
    pub rho: DVector<f64>,
}

/// Refinement-sweep report: per-level data plus thresholded-density overlap
/// between consecutive successful levels.
pub struct RefineReport {
    pub levels: Vec<LevelReport>,
    pub overlaps: Vec<Option<f64>>,
}

/// Nearest-neighbor resampling of a coarse elemental field onto a finer grid.
pub fn resample_nearest(
    rho: &DVector<f64>,
    nx: usize,
    ny: usize,
    nx_to: usize,
    ny_to: usize,
) -> DVector<f64> {
    let mut out = DVector::zeros(nx_to * ny_to);
    for j in 0..ny_to {
        let jc = (j * ny) / ny_to;
        for i in 0..nx_to {
            let ic = (i * nx) / nx_to;
            out[j * nx_to + i] = rho[jc * nx + ic];
        }
    }
    out
}

/// Fraction of elements whose thresholded (at 0.5) material indicator agrees.
pub fn thresholded_overlap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    let agree = a
        .iter()
        .zip(b.iter())
        .filter(|(&x, &y)| (x >= 0.5) == (y >= 0.5))
        .count();
    agree as f64 / a.len() as f64
}

/// Runs the same physical problem at each refinement factor. Per-level
/// failures are isolated; overlaps are reported between consecutive
/// successful levels after nearest resampling onto the finer grid.
pub fn refine_sweep(config: &RunConfig, factors: &[usize]) -> Result<RefineReport> {
    if factors.is_empty() || factors.iter().any(|&f| f == 0) {
        return Err(Error::Config(
            "refinement factors must be a non-empty list of positive integers".to_string(),
        ));
    }
    let mut levels = Vec::new();
    for &factor in factors {
        let level_config = {
            let mut c = config.refined(factor);
            c.output = config.output.join(format!("level{factor}"));
            c
        };
        let outcome = run_case(&level_config).map(|o| {
            let prepared = prepare_case(&level_config).expect("validated config");
            let rho = elemental_densities(&prepared.ops, &o.result.z.as_vector());
            LevelData {
                converged: o.result.converged,
                iterations: o.result.records.len(),
                volume_fraction: o.result.final_eval.volume_fraction,
                j_tilde: o.result.final_eval.j_tilde,
                rho,
            }
        });
        levels.push(LevelReport {
            factor,
            nx: level_config.nx,
            ny: level_config.ny,
            outcome,
        });
    }
    let mut overlaps = Vec::new();
    for pair in levels.windows(2) {
        let overlap = match (&pair[0].outcome, &pair[1].outcome) {
            (Ok(a), Ok(b)) => {
                let fine = resample_nearest(&a.rho, pair[0].nx, pair[0].ny, pair[1].nx, pair[1].ny);
                Some(thresholded_overlap(&fine, &b.rho))
            }
            _ => None,
        };
        overlaps.push(overlap);
    }
    Ok(RefineReport { levels, overlaps })
}

/// Renders a refinement report as text.
pub fn refine_report_text(report: &RefineReport) -> String {
    let mut out = String::new();
    for level in &report.levels {
        match &level.outcome {
            Ok(d) => {
                let _ = writeln!(
                    out,
                    "level x{} ({}x{}): converged={} iterations={} V={:.6} Jtilde={:.6}",
                    level.factor, level.nx, level.ny, d.converged, d.iterations,
                    d.volume_fraction, d.j_tilde
                );
            }
            Err(e) => {
                let _ = writeln!(
                    out,
                    "level x{} ({}x{}): FAILED: {e}",
                    level.factor, level.nx, level.ny
                );
            }
        }
    }
    for (pair, overlap) in report.levels.windows(2).zip(&report.overlaps) {
        match overlap {
            Some(v) => {
                let _ = writeln!(
                    out,
                    "overlap x{} -> x{}: {:.4}",
                    pair[0].factor, pair[1].factor, v
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "overlap x{} -> x{}: unavailable (level failed)",
                    pair[0].factor, pair[1].factor
                );
            }
        }
    }
    out
}
