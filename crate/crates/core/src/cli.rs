//! Command-line surface: flat key=value configuration, subcommand dispatch
//! and plot-ready file emission.
//!
//! Configuration sources in increasing precedence: built-in defaults, a
//! `--config <file>` of `key=value` lines, then `--key value` flags. Unknown
//! keys are rejected. Identical configuration and seed reproduce byte
//! identical data outputs; `run.json` additionally carries the wall time,
//! which is the only field that varies between reruns.
//!
//! Exit codes: 0 success, 1 assertion failure, 2 configuration error,
//! 3 numerical non-convergence.

use crate::error::{Error, Result};
use crate::free_boundary::{self, DIAGNOSTIC_MARGIN};
use crate::grid::{classify_nodes, export_field_csv, DomainDescriptor, Grid, MAX_DIM};
use crate::radial::{self, oracle_to_json, RadialSolution};
use crate::solver::{
    dpp_value_iteration, regularized_solve, residual_regularized, sweep_solve, BoundaryData,
    DppConfig, Initialization, ProblemSpec, Relaxation, SolveResult, SolverConfig, UpdateMode,
};
use crate::validation::{
    comparison_battery, convergence_study, epsilon_study, growth_study, lipschitz_study,
    sup_error_vs_radial, thresholds, Fixture, StudyReport,
};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const USAGE: &str = "\
hjb <command> [--config FILE] [--key value ...]

Commands:
  solve         sweep solve; writes solution.csv, residuals.csv, run.json
  regularized   companion-equation solve (needs eps=)
  dpp           dynamic-programming value iteration
  oracle        radial reference solution; writes oracle.json
  compare       sweep solve vs oracle error table (needs fixture=)
  freeboundary  solve plus region/interface/gradient diagnostics
  validate      study runner; first positional or study= picks
                convergence | epsilon | comparison | growth | lipschitz
  selfcheck     assert CLI defaults match the library defaults

Keys (flags override config-file entries):
  domain=ball|annulus|interval|box   geometry (or fixture=NAME)
  radius=R      r_in=R     widths=w1,w2[,w3]
  fixture=interval|eikonal_ball|ball|annulus_2piece|annulus_3piece|ridge_annulus
  n=2           dimension            r=1          Brownian rate
  h=            grid spacing (required for grid commands; fractions allowed)
  g=0           constant Dirichlet data
  eps=          regularization parameter
  delta=0.05    region-classification threshold
  dt=           DPP time step (default h^2/(2n))   dirs=16   directions
  allow_dt=false  accept dt that mismatches the axis stencil
  tol=1e-10     residual tolerance   max_sweeps=10000
  init=from_above|from_boundary      update=gauss_seidel|jacobi
  relax=auto|<w in (0,2)>            over-relaxation
  h_list=, eps_list=, r_list=        comma-separated study parameters
  trials=25     comparison trials    seed=0
  nodes_per_radius=64                growth-study grid policy
  out=DIR       output directory (or env HJB_OUTPUT_DIR, default hjb_out)
";

const KNOWN_KEYS: &[&str] = &[
    "domain", "radius", "r_in", "widths", "fixture", "n", "r", "h", "g", "eps", "delta", "dt",
    "dirs", "allow_dt", "tol", "max_sweeps", "init", "update", "relax", "h_list", "eps_list",
    "r_list", "trials", "seed", "nodes_per_radius", "out", "study",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Regularized,
    Dpp,
    Oracle,
    Compare,
    FreeBoundary,
    Validate,
    SelfCheck,
}

impl Command {
    fn from_name(name: &str) -> Result<Command> {
        Ok(match name {
            "solve" => Command::Solve,
            "regularized" => Command::Regularized,
            "dpp" => Command::Dpp,
            "oracle" => Command::Oracle,
            "compare" => Command::Compare,
            "freeboundary" => Command::FreeBoundary,
            "validate" => Command::Validate,
            "selfcheck" => Command::SelfCheck,
            other => {
                return Err(Error::validation("command", format!("unknown command `{other}`")))
            }
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Regularized => "regularized",
            Command::Dpp => "dpp",
            Command::Oracle => "oracle",
            Command::Compare => "compare",
            Command::FreeBoundary => "freeboundary",
            Command::Validate => "validate",
            Command::SelfCheck => "selfcheck",
        }
    }
}

/// Fully resolved run configuration; `echo` preserves the resolved key=value
/// pairs for the metadata file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub domain: Option<String>,
    pub radius: f64,
    pub r_in: f64,
    pub widths: Vec<f64>,
    pub fixture: Option<Fixture>,
    pub dim: usize,
    pub rhs: f64,
    pub h: Option<f64>,
    pub g: f64,
    pub eps: Option<f64>,
    pub delta: f64,
    pub dt: Option<f64>,
    pub dirs: Option<usize>,
    pub allow_dt: bool,
    pub solver: SolverConfig,
    pub h_list: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub r_list: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub nodes_per_radius: usize,
    pub out: PathBuf,
    pub study: Option<String>,
    pub echo: BTreeMap<String, String>,
}

fn parse_f64(field: &str, value: &str) -> Result<f64> {
    // Fractions like 1/128 are accepted for grid spacings.
    if let Some((num, den)) = value.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| bad_value(field, value))?;
        let d: f64 = den.trim().parse().map_err(|_| bad_value(field, value))?;
        if d == 0.0 {
            return Err(bad_value(field, value));
        }
        return Ok(n / d);
    }
    value.trim().parse().map_err(|_| bad_value(field, value))
}

fn parse_list(field: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_f64(field, s))
        .collect()
}

fn bad_value(field: &str, value: &str) -> Error {
    Error::validation(field, format!("cannot parse `{value}`"))
}

/// Parse a config file plus flag overrides into a validated `RunConfig`.
/// `args` is everything after the program name.
pub fn parse_config(args: &[String]) -> Result<RunConfig> {
    if args.is_empty() {
        return Err(Error::validation("command", "missing command; try --help"));
    }
    let command = Command::from_name(&args[0])?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut idx = 1;
    // `validate <study>` takes one positional argument.
    if command == Command::Validate && idx < args.len() && !args[idx].starts_with("--") {
        pairs.push(("study".to_string(), args[idx].clone()));
        idx += 1;
    }
    let mut flag_pairs: Vec<(String, String)> = Vec::new();
    while idx < args.len() {
        let arg = &args[idx];
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::validation("args", format!("expected --key, got `{arg}`")))?;
        let value = args
            .get(idx + 1)
            .ok_or_else(|| Error::validation(key, "missing value"))?;
        idx += 2;
        if key == "config" {
            for (line_no, line) in std::fs::read_to_string(value)
                .map_err(|e| Error::ConfigParse { line: 0, message: format!("{value}: {e}") })?
                .lines()
                .enumerate()
            {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let (k, v) = trimmed.split_once('=').ok_or_else(|| Error::ConfigParse {
                    line: line_no + 1,
                    message: format!("expected key=value, got `{trimmed}`"),
                })?;
                pairs.push((k.trim().to_string(), v.trim().to_string()));
            }
        } else {
            flag_pairs.push((key.to_string(), value.clone()));
        }
    }
    // Flags override file values.
    pairs.extend(flag_pairs);
    build_config(command, pairs)
}

fn build_config(command: Command, pairs: Vec<(String, String)>) -> Result<RunConfig> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (k, v) in pairs {
        if !KNOWN_KEYS.contains(&k.as_str()) {
            return Err(Error::validation(&k, "unknown key"));
        }
        map.insert(k, v);
    }
    let get = |k: &str| map.get(k).map(|s| s.as_str());

    let fixture = match get("fixture") {
        Some(name) => Some(Fixture::from_name(name)?),
        None => None,
    };
    let dim = match get("n") {
        Some(v) => {
            let n: usize = v.parse().map_err(|_| bad_value("n", v))?;
            if !(1..=MAX_DIM).contains(&n) {
                return Err(Error::validation("n", format!("must be 1, 2 or 3, got {n}")));
            }
            n
        }
        None => fixture.map_or(2, |f| f.dim()),
    };
    let rhs = match get("r") {
        Some(v) => {
            let r = parse_f64("r", v)?;
            if !(r >= 0.0) {
                return Err(Error::validation("r", format!("must be >= 0, got {r}")));
            }
            r
        }
        None => fixture.map_or(1.0, |f| f.rhs()),
    };
    let h = get("h").map(|v| parse_f64("h", v)).transpose()?;
    if let Some(h) = h {
        if !(h > 0.0) {
            return Err(Error::validation("h", "must be positive"));
        }
    }
    let radius = get("radius").map_or(Ok(1.0), |v| parse_f64("radius", v))?;
    let r_in = get("r_in").map_or(Ok(0.0), |v| parse_f64("r_in", v))?;
    let widths = get("widths").map_or(Ok(Vec::new()), |v| parse_list("widths", v))?;
    let g = get("g").map_or(Ok(0.0), |v| parse_f64("g", v))?;
    let eps = get("eps").map(|v| parse_f64("eps", v)).transpose()?;
    if let Some(e) = eps {
        if !(e > 0.0) {
            return Err(Error::validation("eps", "must be positive"));
        }
    }
    let delta = get("delta").map_or(Ok(0.05), |v| parse_f64("delta", v))?;
    if !(0.0 < delta && delta < 0.5) {
        return Err(Error::validation("delta", "must lie in (0, 0.5)"));
    }
    let dt = get("dt").map(|v| parse_f64("dt", v)).transpose()?;
    let dirs = match get("dirs") {
        Some(v) => Some(v.parse::<usize>().map_err(|_| bad_value("dirs", v))?),
        None => None,
    };
    let allow_dt = match get("allow_dt") {
        Some("true") => true,
        Some("false") | None => false,
        Some(v) => return Err(bad_value("allow_dt", v)),
    };
    let tolerance = get("tol").map_or(Ok(1e-10), |v| parse_f64("tol", v))?;
    let max_sweeps = match get("max_sweeps") {
        Some(v) => v.parse::<usize>().map_err(|_| bad_value("max_sweeps", v))?,
        None => 10_000,
    };
    let init = match get("init") {
        Some("from_above") | None => Initialization::FromAbove,
        Some("from_boundary") => Initialization::FromBoundaryData,
        Some(v) => return Err(bad_value("init", v)),
    };
    let update = match get("update") {
        Some("gauss_seidel") | None => UpdateMode::GaussSeidel,
        Some("jacobi") => UpdateMode::Jacobi,
        Some(v) => return Err(bad_value("update", v)),
    };
    let relaxation = match get("relax") {
        Some("auto") | None => Relaxation::Auto,
        Some(v) => Relaxation::Fixed(parse_f64("relax", v)?),
    };
    let solver = SolverConfig { tolerance, max_sweeps, init, update, relaxation };
    solver.validate()?;
    let h_list = get("h_list").map_or(Ok(Vec::new()), |v| parse_list("h_list", v))?;
    let eps_list = get("eps_list").map_or(Ok(Vec::new()), |v| parse_list("eps_list", v))?;
    let r_list = get("r_list").map_or(Ok(Vec::new()), |v| parse_list("r_list", v))?;
    let trials = match get("trials") {
        Some(v) => v.parse::<usize>().map_err(|_| bad_value("trials", v))?,
        None => 25,
    };
    let seed = match get("seed") {
        Some(v) => v.parse::<u64>().map_err(|_| bad_value("seed", v))?,
        None => 0,
    };
    let nodes_per_radius = match get("nodes_per_radius") {
        Some(v) => v.parse::<usize>().map_err(|_| bad_value("nodes_per_radius", v))?,
        None => 64,
    };
    let out = match get("out") {
        Some(v) => PathBuf::from(v),
        None => std::env::var("HJB_OUTPUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|_| PathBuf::from("hjb_out")),
    };
    let study = get("study").map(|s| s.to_string());

    let mut echo = map.clone();
    // The output directory is a delivery location, not numerical
    // configuration; leaving it out keeps run.json identical across reruns
    // into different directories.
    echo.remove("out");
    echo.insert("command".to_string(), command.name().to_string());
    Ok(RunConfig {
        command,
        domain: get("domain").map(|s| s.to_string()),
        radius,
        r_in,
        widths,
        fixture,
        dim,
        rhs,
        h,
        g,
        eps,
        delta,
        dt,
        dirs,
        allow_dt,
        solver,
        h_list,
        eps_list,
        r_list,
        trials,
        seed,
        nodes_per_radius,
        out,
        study,
        echo,
    })
}

impl RunConfig {
    fn descriptor(&self) -> Result<DomainDescriptor> {
        if let Some(fixture) = self.fixture {
            return Ok(fixture.descriptor());
        }
        let name = self
            .domain
            .as_deref()
            .ok_or_else(|| Error::validation("domain", "missing domain (or fixture)"))?;
        let desc = match name {
            "interval" => DomainDescriptor::Interval { radius: self.radius },
            "ball" => DomainDescriptor::Ball { radius: self.radius },
            "annulus" => DomainDescriptor::Annulus { inner: self.r_in, outer: self.radius },
            "box" => {
                let mut widths = [0.0; MAX_DIM];
                if self.widths.len() != self.dim {
                    return Err(Error::validation("widths", "need one width per axis"));
                }
                widths[..self.dim].copy_from_slice(&self.widths);
                DomainDescriptor::Box { widths }
            }
            other => return Err(Error::validation("domain", format!("unknown domain `{other}`"))),
        };
        desc.validate(self.dim)?;
        Ok(desc)
    }

    fn problem(&self) -> Result<(ProblemSpec, Grid, crate::grid::DomainMask)> {
        let dim = self.fixture.map_or(self.dim, |f| f.dim());
        let rhs = if self.echo.contains_key("r") {
            self.rhs
        } else {
            self.fixture.map_or(self.rhs, |f| f.rhs())
        };
        let desc = self.descriptor()?;
        let h = self
            .h
            .ok_or_else(|| Error::validation("h", "grid spacing is required"))?;
        let grid = Grid::enclosing(dim, &desc, h, 2)?;
        let mask = classify_nodes(&grid, &desc)?;
        let spec = ProblemSpec::new(desc, dim, rhs).with_boundary(BoundaryData::Constant(self.g));
        Ok((spec, grid, mask))
    }

    fn oracle(&self) -> Result<RadialSolution> {
        if let Some(fixture) = self.fixture {
            return fixture.oracle();
        }
        let name = self
            .domain
            .as_deref()
            .ok_or_else(|| Error::validation("domain", "missing domain (or fixture)"))?;
        match name {
            "interval" => radial::oracle_interval(self.radius),
            "ball" => {
                if self.radius * self.rhs <= 1.0 / (self.dim as f64 - 1.0) {
                    radial::oracle_eikonal_ball(self.dim, self.radius)
                } else {
                    radial::oracle_ball(self.dim, self.radius, self.rhs)
                }
            }
            "annulus" => radial::oracle_annulus(self.dim, self.r_in, self.radius, self.rhs),
            other => Err(Error::validation(
                "domain",
                format!("no radial oracle for domain `{other}`"),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact writers

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join(name))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn solution_csv(result: &SolveResult, grid: &Grid, mask: &crate::grid::DomainMask) -> String {
    let mut buf = Vec::new();
    export_field_csv(&result.solution, grid, mask, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn residuals_csv(result: &SolveResult) -> String {
    let mut out = String::from("sweep,residual\n");
    for &(sweep, res) in &result.residual_history {
        out.push_str(&format!("{sweep},{res:.14e}\n"));
    }
    out
}

fn run_json(config: &RunConfig, extra: serde_json::Value, wall_time_s: f64) -> String {
    let echo: serde_json::Map<String, serde_json::Value> = config
        .echo
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
        .collect();
    let doc = serde_json::json!({
        "version": VERSION,
        "command": config.command.name(),
        "config": echo,
        "wall_time_s": wall_time_s,
        "details": extra,
    });
    serde_json::to_string_pretty(&doc).expect("run metadata serialization") + "\n"
}

fn solve_details(result: &SolveResult) -> serde_json::Value {
    serde_json::json!({
        "sweeps": result.sweeps_used,
        "final_residual": result.final_residual,
    })
}

// ---------------------------------------------------------------------------
// Command execution

/// Execute a parsed run. Returns the process exit code; artifacts land in
/// `config.out`.
pub fn run(config: &RunConfig) -> Result<i32> {
    match config.command {
        Command::Solve => {
            let (spec, grid, mask) = config.problem()?;
            let started = std::time::Instant::now();
            let result = sweep_solve(&spec, &grid, &mask, &config.solver)?;
            write_file(&config.out, "solution.csv", &solution_csv(&result, &grid, &mask))?;
            write_file(&config.out, "residuals.csv", &residuals_csv(&result))?;
            write_file(
                &config.out,
                "run.json",
                &run_json(config, solve_details(&result), started.elapsed().as_secs_f64()),
            )?;
            Ok(0)
        }
        Command::Regularized => {
            let eps = config
                .eps
                .ok_or_else(|| Error::validation("eps", "required for regularized solves"))?;
            let (spec, grid, mask) = config.problem()?;
            let started = std::time::Instant::now();
            let result = regularized_solve(&spec, &grid, &mask, eps, &config.solver)?;
            let reg_residual = residual_regularized(&result.solution, &spec, &grid, &mask, eps);
            write_file(&config.out, "solution.csv", &solution_csv(&result, &grid, &mask))?;
            write_file(&config.out, "residuals.csv", &residuals_csv(&result))?;
            let mut details = solve_details(&result);
            details["eps"] = serde_json::json!(eps);
            details["regularized_residual"] = serde_json::json!(reg_residual);
            write_file(
                &config.out,
                "run.json",
                &run_json(config, details, started.elapsed().as_secs_f64()),
            )?;
            Ok(0)
        }
        Command::Dpp => {
            let (spec, grid, mask) = config.problem()?;
            let mut dpp = DppConfig::for_dim(grid.dim());
            dpp.dt = config.dt;
            if let Some(dirs) = config.dirs {
                dpp.directions = dirs;
            }
            dpp.allow_incompatible_dt = config.allow_dt;
            let started = std::time::Instant::now();
            let result = dpp_value_iteration(&spec, &grid, &mask, &dpp, &config.solver)?;
            write_file(&config.out, "solution.csv", &solution_csv(&result, &grid, &mask))?;
            write_file(&config.out, "residuals.csv", &residuals_csv(&result))?;
            let mut details = solve_details(&result);
            details["directions"] = serde_json::json!(dpp.directions);
            write_file(
                &config.out,
                "run.json",
                &run_json(config, details, started.elapsed().as_secs_f64()),
            )?;
            Ok(0)
        }
        Command::Oracle => {
            let started = std::time::Instant::now();
            let oracle = config.oracle()?;
            oracle.validate()?;
            write_file(&config.out, "oracle.json", &oracle_to_json(&oracle))?;
            write_file(
                &config.out,
                "run.json",
                &run_json(
                    config,
                    serde_json::json!({"pieces": oracle.pieces.len()}),
                    started.elapsed().as_secs_f64(),
                ),
            )?;
            Ok(0)
        }
        Command::Compare => {
            let fixture = config
                .fixture
                .ok_or_else(|| Error::validation("fixture", "required for compare"))?;
            let h = config.h.ok_or_else(|| Error::validation("h", "required for compare"))?;
            let started = std::time::Instant::now();
            let (grid, mask) = fixture.grid(h)?;
            let spec = fixture.problem();
            let result = sweep_solve(&spec, &grid, &mask, &config.solver)?;
            let oracle = fixture.oracle()?;
            let error = sup_error_vs_radial(&result.solution, &grid, &mask, &oracle);
            let factor = if fixture.dim() == 1 {
                thresholds::SUP_ERROR_FACTOR_1D
            } else {
                thresholds::SUP_ERROR_FACTOR_2D
            };
            let budget = factor * h;
            let pass = error < budget;
            let mut csv = String::from("h,sup_error,budget,pass\n");
            csv.push_str(&format!("{h:.14e},{error:.14e},{budget:.14e},{pass}\n"));
            write_file(&config.out, "compare.csv", &csv)?;
            write_file(
                &config.out,
                "run.json",
                &run_json(
                    config,
                    serde_json::json!({
                        "fixture": fixture.name(),
                        "sup_error": error,
                        "budget": budget,
                        "pass": pass,
                    }),
                    started.elapsed().as_secs_f64(),
                ),
            )?;
            Ok(if pass { 0 } else { 1 })
        }
        Command::FreeBoundary => {
            let (spec, grid, mask) = config.problem()?;
            let started = std::time::Instant::now();
            let result = sweep_solve(&spec, &grid, &mask, &config.solver)?;
            let labeling = free_boundary::classify_regions(&result.solution, &grid, &mask, config.delta)?;
            let mut regions = Vec::new();
            free_boundary::export_regions_csv(&labeling, &grid, &mask, &mut regions)?;
            write_file(&config.out, "regions.csv", &String::from_utf8(regions).unwrap())?;
            let interface = match free_boundary::extract_interface(&labeling, &grid, &mask) {
                Ok(estimate) => {
                    let mut cells = Vec::new();
                    free_boundary::export_interface_csv(&estimate, grid.dim(), &mut cells)?;
                    write_file(&config.out, "interface.csv", &String::from_utf8(cells).unwrap())?;
                    let radial: Vec<serde_json::Value> = estimate
                        .radial
                        .iter()
                        .map(|r| {
                            serde_json::json!({
                                "rho_hat": r.rho_hat,
                                "spread": r.spread,
                                "cells": r.cell_count,
                            })
                        })
                        .collect();
                    let mut doc = serde_json::json!({ "interfaces": radial });
                    if let Some(dominant) = estimate.dominant_radial() {
                        doc["rho_hat"] = serde_json::json!(dominant.rho_hat);
                        doc["spread"] = serde_json::json!(dominant.spread);
                    }
                    doc
                }
                Err(Error::NoInterface(reason)) => {
                    serde_json::json!({ "interfaces": [], "empty": reason })
                }
                Err(e) => return Err(e),
            };
            write_file(
                &config.out,
                "interface.json",
                &(serde_json::to_string_pretty(&interface).unwrap() + "\n"),
            )?;
            let (jump_norm, jump_vec) =
                free_boundary::gradient_modulus_diagnostic(&result.solution, &grid, &mask)?;
            let small = free_boundary::small_gradient_measure(
                &result.solution,
                &grid,
                &mask,
                config.delta,
            )?;
            let diagnostics = serde_json::json!({
                "delta": config.delta,
                "margin": DIAGNOSTIC_MARGIN,
                "brownian_count": labeling.brownian_count,
                "eikonal_count": labeling.eikonal_count,
                "jump_gradnorm": jump_norm,
                "jump_gradvec": jump_vec,
                "small_gradient_fraction": small,
            });
            write_file(
                &config.out,
                "diagnostics.json",
                &(serde_json::to_string_pretty(&diagnostics).unwrap() + "\n"),
            )?;
            write_file(&config.out, "solution.csv", &solution_csv(&result, &grid, &mask))?;
            write_file(
                &config.out,
                "run.json",
                &run_json(config, solve_details(&result), started.elapsed().as_secs_f64()),
            )?;
            Ok(0)
        }
        Command::Validate => run_study(config),
        Command::SelfCheck => self_check(),
    }
}

fn run_study(config: &RunConfig) -> Result<i32> {
    let study = config
        .study
        .as_deref()
        .ok_or_else(|| Error::validation("study", "missing study name"))?;
    let started = std::time::Instant::now();
    let report: StudyReport = match study {
        "convergence" => {
            let fixture = config
                .fixture
                .ok_or_else(|| Error::validation("fixture", "required for convergence"))?;
            convergence_study(fixture, &config.h_list, &config.solver)?
        }
        "epsilon" => {
            let fixture = config
                .fixture
                .ok_or_else(|| Error::validation("fixture", "required for epsilon"))?;
            let h = config.h.ok_or_else(|| Error::validation("h", "required for epsilon"))?;
            epsilon_study(fixture, &config.eps_list, h, &config.solver)?
        }
        "comparison" => {
            let (spec, grid, mask) = config.problem()?;
            comparison_battery(&spec, &grid, &mask, config.trials, config.seed, &config.solver)?
        }
        "growth" => {
            if !(config.r_in > 0.0) {
                return Err(Error::validation("r_in", "required for growth"));
            }
            growth_study(
                config.dim,
                config.r_in,
                &config.r_list,
                config.rhs,
                config.nodes_per_radius,
                &config.solver,
            )?
        }
        "lipschitz" => {
            let fixture = config
                .fixture
                .ok_or_else(|| Error::validation("fixture", "required for lipschitz"))?;
            lipschitz_study(fixture, &config.h_list, &config.solver)?
        }
        other => return Err(Error::validation("study", format!("unknown study `{other}`"))),
    };
    write_file(&config.out, "report.json", &(report.to_json() + "\n"))?;
    write_file(&config.out, "report.csv", &report.to_csv())?;
    write_file(
        &config.out,
        "run.json",
        &run_json(
            config,
            serde_json::json!({"study": study, "pass": report.pass}),
            started.elapsed().as_secs_f64(),
        ),
    )?;
    Ok(if report.pass { 0 } else { 1 })
}

/// Assert that every CLI default equals the corresponding library default.
fn self_check() -> Result<i32> {
    let defaults = build_config(Command::SelfCheck, Vec::new())?;
    let lib = SolverConfig::default();
    let dpp = DppConfig::for_dim(2);
    let rows: Vec<(&str, String, String)> = vec![
        ("tol", format!("{:e}", defaults.solver.tolerance), format!("{:e}", lib.tolerance)),
        ("max_sweeps", defaults.solver.max_sweeps.to_string(), lib.max_sweeps.to_string()),
        (
            "init",
            format!("{:?}", defaults.solver.init),
            format!("{:?}", Initialization::FromAbove),
        ),
        (
            "update",
            format!("{:?}", defaults.solver.update),
            format!("{:?}", UpdateMode::GaussSeidel),
        ),
        (
            "relax",
            format!("{:?}", defaults.solver.relaxation),
            format!("{:?}", Relaxation::Auto),
        ),
        (
            "delta",
            format!("{}", defaults.delta),
            format!("{}", thresholds::CLASSIFY_DELTA),
        ),
        ("dirs", format!("{}", defaults.dirs.unwrap_or(dpp.directions)), format!("{}", dpp.directions)),
        ("r", format!("{}", defaults.rhs), "1".to_string()),
        ("n", format!("{}", defaults.dim), "2".to_string()),
        ("seed", format!("{}", defaults.seed), "0".to_string()),
        ("trials", format!("{}", defaults.trials), "25".to_string()),
        ("g", format!("{}", defaults.g), "0".to_string()),
    ];
    let mut ok = true;
    for (key, cli_value, lib_value) in rows {
        let agree = cli_value == lib_value;
        ok &= agree;
        println!("{key}: cli={cli_value} lib={lib_value} {}", if agree { "ok" } else { "MISMATCH" });
    }
    Ok(if ok { 0 } else { 1 })
}

/// Entry point used by the binary; maps errors to exit codes and prints a
/// machine-readable error report to stdout.
pub fn main_with_args(args: &[String]) -> i32 {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        println!("{USAGE}");
        return if args.is_empty() { 2 } else { 0 };
    }
    let config = match parse_config(args) {
        Ok(config) => config,
        Err(e) => return report_error(e),
    };
    match run(&config) {
        Ok(code) => code,
        Err(e) => report_error(e),
    }
}

fn report_error(e: Error) -> i32 {
    let doc = serde_json::json!({
        "error": {
            "kind": e.kind(),
            "message": e.to_string(),
        }
    });
    println!("{}", serde_json::to_string(&doc).expect("error serialization"));
    e.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn minimal_config_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "domain=ball\nradius=1\nn=2\nr=1\nh=0.01\n").unwrap();
        let config =
            parse_config(&args(&["solve", "--config", path.to_str().unwrap()])).unwrap();
        assert_eq!(config.dim, 2);
        assert_eq!(config.h, Some(0.01));
        assert_eq!(config.solver.tolerance, 1e-10);
        assert_eq!(config.solver.max_sweeps, 10_000);
        assert_eq!(config.delta, 0.05);
        assert_eq!(config.seed, 0);
    }

    #[test]
    fn negative_rate_is_rejected_by_name() {
        let err = parse_config(&args(&["solve", "--domain", "ball", "--h", "0.1", "--r", "-1"]))
            .unwrap_err();
        match err {
            Error::Validation { field, .. } => assert_eq!(field, "r"),
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "domain=ball\nradius=1\nh=0.01\n").unwrap();
        let config = parse_config(&args(&[
            "solve",
            "--config",
            path.to_str().unwrap(),
            "--h",
            "0.005",
        ]))
        .unwrap();
        assert_eq!(config.h, Some(0.005));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config(&args(&["solve", "--frobnicate", "1"])).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn malformed_config_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "domain=ball\nwhat even is this\n").unwrap();
        let err =
            parse_config(&args(&["solve", "--config", path.to_str().unwrap()])).unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected ConfigParse, got {other:?}"),
        }
    }

    #[test]
    fn fraction_spacing_is_accepted() {
        let config =
            parse_config(&args(&["solve", "--domain", "interval", "--n", "1", "--h", "1/128"]))
                .unwrap();
        assert_eq!(config.h, Some(1.0 / 128.0));
    }

    #[test]
    fn validate_takes_positional_study() {
        let config = parse_config(&args(&[
            "validate",
            "growth",
            "--r_in",
            "0.5",
            "--r_list",
            "2,4,8",
        ]))
        .unwrap();
        assert_eq!(config.study.as_deref(), Some("growth"));
        assert_eq!(config.r_list, vec![2.0, 4.0, 8.0]);
    }

    #[test]
    fn solve_writes_artifacts_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        for out in [&out1, &out2] {
            let config = parse_config(&args(&[
                "solve",
                "--domain",
                "interval",
                "--n",
                "1",
                "--h",
                "1/32",
                "--out",
                out.to_str().unwrap(),
            ]))
            .unwrap();
            assert_eq!(run(&config).unwrap(), 0);
        }
        for name in ["solution.csv", "residuals.csv"] {
            let a = std::fs::read(out1.join(name)).unwrap();
            let b = std::fs::read(out2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical reruns");
        }
        // run.json matches after dropping the wall-time field.
        let strip = |path: &Path| {
            let mut v: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_s");
            v
        };
        assert_eq!(strip(&out1.join("run.json")), strip(&out2.join("run.json")));
    }

    #[test]
    fn compare_exit_code_tracks_the_budget() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(&args(&[
            "compare",
            "--fixture",
            "interval",
            "--h",
            "1/64",
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(run(&config).unwrap(), 0);
        let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
        assert!(csv.lines().nth(1).unwrap().ends_with("true"));
    }

    #[test]
    fn selfcheck_passes() {
        assert_eq!(run(&build_config(Command::SelfCheck, Vec::new()).unwrap()).unwrap(), 0);
    }

    #[test]
    fn oracle_command_writes_json() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(&args(&[
            "oracle",
            "--fixture",
            "ball",
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(run(&config).unwrap(), 0);
        let text = std::fs::read_to_string(dir.path().join("oracle.json")).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["pieces"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn freeboundary_writes_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(&args(&[
            "freeboundary",
            "--domain",
            "ball",
            "--radius",
            "2",
            "--h",
            "1/16",
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(run(&config).unwrap(), 0);
        let doc: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("interface.json")).unwrap(),
        )
        .unwrap();
        assert!(doc["rho_hat"].as_f64().unwrap() > 0.5);
        assert!(dir.path().join("regions.csv").exists());
        assert!(dir.path().join("diagnostics.json").exists());
    }

    #[test]
    fn validate_comparison_runs_and_passes() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(&args(&[
            "validate",
            "comparison",
            "--domain",
            "ball",
            "--radius",
            "1",
            "--h",
            "1/8",
            "--trials",
            "3",
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(run(&config).unwrap(), 0);
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("report.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report["pass"], serde_json::json!(true));
    }
}
