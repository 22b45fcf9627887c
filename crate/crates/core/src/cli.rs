//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for configuration or input errors, 3 when a
//! solver fails, 1 when an output file cannot be written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector4;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::lti::LtiSystem;
use crate::patient::{
    assemble_system, bis, bis_inverse, equilibrium, lean_body_mass, schnider_parameters, BisParameters,
    EquilibriumState, PatientDemographics, PkPdParameters, Sex,
};
use crate::problem::{ControlSchedule, TimeOptimalProblem, REFERENCE_U_MAX};
use crate::shooting::{default_seed_grid, solve_shooting, ExtremalCertificate, ShootingOptions};
use crate::strategy::{schedule_endpoint, solve_time_optimal, StrategyOptions, TimeOptimalSolution};

pub const CSV_HEADER: &str = "t,x1,x2,x3,x4,u,bis";

#[derive(Debug, Parser)]
#[command(name = "induction", version, about = "Minimum-time propofol induction schedules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the patient model: rate constants, A, B, eigenvalues, equilibrium.
    Params {
        #[arg(long)]
        config: PathBuf,
        /// Also write params.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the minimum-time problem and write schedules and trajectories.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Trajectory sampling step, min.
        #[arg(long, default_value_t = 0.001)]
        step: f64,
    },
    /// Replay a schedule file and write its trajectory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.001)]
        step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Shooting,
    Strategy,
    Both,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn config_err(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Where the state starts: a named state or four explicit masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(String),
    Explicit([f64; 4]),
}

/// Patient and problem description read from the `--config` JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sex: Sex,
    pub age: f64,
    pub weight: f64,
    pub height: f64,
    #[serde(default = "default_bis_target")]
    pub bis_target: f64,
    /// Infusion bound, mg/min; 106.0907 when absent.
    #[serde(default)]
    pub u_max: Option<f64>,
    #[serde(default)]
    pub bis: Option<BisParameters>,
    /// `"rest"` (default), `"equilibrium"` or `[x1, x2, x3, x4]`.
    #[serde(default)]
    pub initial_state: Option<InitialState>,
}

fn default_bis_target() -> f64 {
    50.0
}

/// Everything derived from a validated config.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub config: RunConfig,
    pub demographics: PatientDemographics,
    pub lbm: f64,
    pub params: PkPdParameters,
    pub bis: BisParameters,
    pub sys: LtiSystem,
    pub effect_level: f64,
    pub equilibrium: EquilibriumState,
    pub u_max: f64,
    pub x0: Vector4<f64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self) -> Result<ResolvedModel, CliError> {
        let demographics =
            PatientDemographics::new(self.sex, self.age, self.weight, self.height).map_err(config_err)?;
        let lbm = lean_body_mass(self.sex, self.weight, self.height).map_err(config_err)?;
        let params = schnider_parameters(&demographics).map_err(config_err)?;
        let bis_params = self.bis.unwrap_or_default();
        bis_params.validate().map_err(config_err)?;
        let sys = assemble_system(&params).map_err(config_err)?;
        let effect_level = bis_inverse(self.bis_target, &bis_params).map_err(config_err)?;
        let eq = equilibrium(&params, effect_level);
        let u_max = self.u_max.unwrap_or(REFERENCE_U_MAX);
        if !(u_max.is_finite() && u_max > eq.u_e) {
            return Err(CliError::Config(format!(
                "u_max = {u_max} must exceed the equilibrium infusion u_e = {:.6}; the target is unreachable",
                eq.u_e
            )));
        }
        let x0 = match &self.initial_state {
            None => Vector4::zeros(),
            Some(InitialState::Named(name)) => match name.as_str() {
                "rest" => Vector4::zeros(),
                "equilibrium" => eq.x_e,
                other => {
                    return Err(CliError::Config(format!(
                        "initial_state: expected \"rest\", \"equilibrium\" or four numbers, got \"{other}\""
                    )))
                }
            },
            Some(InitialState::Explicit(v)) => {
                if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(CliError::Config("initial_state masses must be finite and >= 0".into()));
                }
                Vector4::from_column_slice(v)
            }
        };
        Ok(ResolvedModel {
            config: self.clone(),
            demographics,
            lbm,
            params,
            bis: bis_params,
            sys,
            effect_level,
            equilibrium: eq,
            u_max,
            x0,
        })
    }
}

impl ResolvedModel {
    pub fn problem(&self) -> Result<TimeOptimalProblem, CliError> {
        TimeOptimalProblem::new(self.sys.clone(), self.x0, self.equilibrium, self.u_max).map_err(config_err)
    }
}

/// Rounds to 10 significant digits.
pub fn sig10(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.9e}").parse().expect("formatted float parses")
}

fn sig10_all(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    v.into_iter().map(sig10).collect()
}

/// The schedule as it is written to disk.
pub fn rounded_schedule(s: &ControlSchedule) -> Result<ControlSchedule, CliError> {
    ControlSchedule::new(
        sig10_all(s.levels().iter().copied()),
        sig10_all(s.breakpoints().iter().copied()),
        sig10(s.t_f()),
    )
    .map_err(|e| CliError::Solver(format!("schedule does not survive rounding: {e}")))
}

/// `(t, x, u)` samples at `k·step` for `k·step < t_f`, plus one at `t_f`.
/// Each state is propagated exactly from the start of its segment.
pub fn sample_trajectory(
    sys: &LtiSystem,
    x0: &Vector4<f64>,
    schedule: &ControlSchedule,
    step: f64,
) -> crate::Result<Vec<(f64, Vector4<f64>, f64)>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    let t_f = schedule.t_f();
    let mut times: Vec<f64> = (0..)
        .map(|k| k as f64 * step)
        .take_while(|&t| t < t_f)
        .collect();
    times.push(t_f);

    let segments: Vec<(f64, f64, f64)> = schedule.segments().collect();
    let mut starts = Vec::with_capacity(segments.len());
    let mut x = *x0;
    for &(s, e, u) in &segments {
        starts.push(x);
        x = sys.propagate_constant(&x, u, e - s)?;
    }

    let mut rows = Vec::with_capacity(times.len());
    for t in times {
        let k = schedule.breakpoints().partition_point(|&b| b <= t);
        let (s, _, u) = segments[k];
        let xt = sys.propagate_constant(&starts[k], u, t - s)?;
        rows.push((t, xt, u));
    }
    Ok(rows)
}

pub fn trajectory_csv(rows: &[(f64, Vector4<f64>, f64)], bis_params: &BisParameters) -> crate::Result<String> {
    let mut out = String::with_capacity(rows.len() * 96);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (t, x, u) in rows {
        let b = bis(x[3].max(0.0), bis_params)?;
        let fields = [*t, x[0], x[1], x[2], x[3], *u, b];
        let line: Vec<String> = fields.iter().map(|v| sig10(*v).to_string()).collect();
        writeln!(out, "{}", line.join(",")).expect("writing to a String");
    }
    Ok(out)
}

fn vec4(v: &Vector4<f64>) -> Vec<f64> {
    sig10_all(v.iter().copied())
}

/// The `params` report.
pub fn params_report(m: &ResolvedModel) -> Value {
    let p = &m.params;
    let a = m.sys.a();
    let rows: Vec<Vec<f64>> = (0..4).map(|i| sig10_all((0..4).map(|j| a[(i, j)]))).collect();
    json!({
        "sex": m.demographics.sex,
        "age": m.demographics.age,
        "weight": m.demographics.weight,
        "height": m.demographics.height,
        "lbm": sig10(m.lbm),
        "a10": sig10(p.a10),
        "a12": sig10(p.a12),
        "a13": sig10(p.a13),
        "a21": sig10(p.a21),
        "a31": sig10(p.a31),
        "ae0": sig10(p.ae0),
        "v1": sig10(p.v1),
        "A": rows,
        "B": vec4(m.sys.b()),
        "eigenvalues": m.sys.eigenvalues().map(|e| sig10_all(e)),
        "bis_target": m.config.bis_target,
        "effect_level": sig10(m.effect_level),
        "x_e": vec4(&m.equilibrium.x_e),
        "u_e": sig10(m.equilibrium.u_e),
        "u_max": m.u_max,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    write_file(path, &(text + "\n"))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn check_step(step: f64) -> Result<(), CliError> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("--step must be positive, got {step}")))
    }
}

/// A solved schedule ready to be written out.
struct Emitted {
    schedule: ControlSchedule,
    endpoint: Vector4<f64>,
    extra: Value,
}

fn emit(
    m: &ResolvedModel,
    schedule: &ControlSchedule,
    extra: Value,
    name: &str,
    out: &Path,
    step: f64,
) -> Result<Emitted, CliError> {
    let rounded = rounded_schedule(schedule)?;
    let solver = |e: Error| CliError::Solver(e.to_string());
    let endpoint = schedule_endpoint(&m.sys, &m.x0, &rounded).map_err(solver)?;
    let bis_final = bis(endpoint[3].max(0.0), &m.bis).map_err(solver)?;
    let mut doc = serde_json::to_value(&rounded).expect("schedules serialize");
    let obj = doc.as_object_mut().expect("schedule is an object");
    obj.insert("method".into(), json!(name));
    obj.insert("endpoint".into(), json!(vec4(&endpoint)));
    obj.insert("bis_final".into(), json!(sig10(bis_final)));
    if let Value::Object(fields) = &extra {
        for (k, v) in fields {
            obj.insert(k.clone(), v.clone());
        }
    }
    write_json(&out.join(format!("schedule_{name}.json")), &doc)?;
    let rows = sample_trajectory(&m.sys, &m.x0, &rounded, step).map_err(solver)?;
    write_file(
        &out.join(format!("trajectory_{name}.csv")),
        &trajectory_csv(&rows, &m.bis).map_err(solver)?,
    )?;
    Ok(Emitted {
        schedule: rounded,
        endpoint,
        extra,
    })
}

fn shooting_extra(cert: &ExtremalCertificate) -> Value {
    json!({
        "psi0": vec4(&cert.psi0),
        "residual_norm": cert.residual_norm,
        "seed_index": cert.seed_index,
        "iterations": cert.iterations,
    })
}

fn strategy_extra(sol: &TimeOptimalSolution) -> Value {
    let candidates: Vec<Value> = sol
        .candidates
        .iter()
        .map(|c| {
            json!({
                "strategy": c.strategy,
                "feasible": c.feasible,
                "verdict": c.verdict,
                "residual": sig10_all(c.residual),
                "t_f": c.t_f().map(sig10),
            })
        })
        .collect();
    json!({ "strategy": sol.best.strategy, "candidates": candidates })
}

/// Summary of the shooting/strategy agreement.
pub fn comparison(shooting: &ControlSchedule, strategy: &ControlSchedule) -> Value {
    let same_structure = shooting.levels() == strategy.levels();
    let delta_t_c = same_structure.then(|| {
        shooting
            .breakpoints()
            .iter()
            .zip(strategy.breakpoints())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    json!({
        "t_f_shooting": shooting.t_f(),
        "t_f_strategy": strategy.t_f(),
        "delta_t_f": (shooting.t_f() - strategy.t_f()).abs(),
        "switch_times_shooting": shooting.breakpoints(),
        "switch_times_strategy": strategy.breakpoints(),
        "same_structure": same_structure,
        "delta_t_c": delta_t_c,
    })
}

fn describe(name: &str, e: &Emitted) -> String {
    let s = &e.schedule;
    format!(
        "{name}: t_f = {} min, switches at {:?} min, endpoint (x1, x4) = ({}, {}){}",
        s.t_f(),
        s.breakpoints(),
        sig10(e.endpoint[0]),
        sig10(e.endpoint[3]),
        e.extra
            .get("strategy")
            .map(|id| format!(", strategy {id}"))
            .unwrap_or_default()
    )
}

pub fn cmd_params(config: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let model = RunConfig::from_path(config)?.resolve()?;
    let report = params_report(&model);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("params.json"), &report)?;
    }
    Ok(serde_json::to_string_pretty(&report).expect("JSON values serialize"))
}

pub fn cmd_solve(config: &Path, method: Method, out: &Path, step: f64) -> Result<String, CliError> {
    check_step(step)?;
    let model = RunConfig::from_path(config)?.resolve()?;
    let prob = model.problem()?;
    ensure_dir(out)?;
    let mut lines = Vec::new();
    let solver = |e: Error| CliError::Solver(e.to_string());

    let shooting = if matches!(method, Method::Shooting | Method::Both) {
        let cert = solve_shooting(&prob, &default_seed_grid(), &ShootingOptions::default()).map_err(solver)?;
        let e = emit(&model, &cert.schedule, shooting_extra(&cert), "shooting", out, step)?;
        lines.push(describe("shooting", &e));
        Some(e)
    } else {
        None
    };
    let strategy = if matches!(method, Method::Strategy | Method::Both) {
        let sol = solve_time_optimal(&prob, &StrategyOptions::default()).map_err(solver)?;
        let schedule = sol.best.schedule.clone().expect("best strategy is feasible");
        let e = emit(&model, &schedule, strategy_extra(&sol), "strategy", out, step)?;
        lines.push(describe("strategy", &e));
        Some(e)
    } else {
        None
    };
    if let (Some(a), Some(b)) = (&shooting, &strategy) {
        let cmp = comparison(&a.schedule, &b.schedule);
        lines.push(format!("delta t_f = {:.3e} min", cmp["delta_t_f"].as_f64().unwrap_or(f64::NAN)));
        write_json(&out.join("comparison.json"), &cmp)?;
    }
    Ok(lines.join("\n"))
}

pub fn cmd_simulate(config: &Path, schedule: &Path, out: &Path, step: f64) -> Result<String, CliError> {
    check_step(step)?;
    let model = RunConfig::from_path(config)?.resolve()?;
    let text = fs::read_to_string(schedule)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", schedule.display())))?;
    let sched: ControlSchedule = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", schedule.display())))?;
    let rows = sample_trajectory(&model.sys, &model.x0, &sched, step).map_err(config_err)?;
    ensure_dir(out)?;
    write_file(
        &out.join("trajectory.csv"),
        &trajectory_csv(&rows, &model.bis).map_err(config_err)?,
    )?;
    let (_, x_end, _) = rows.last().expect("at least one sample");
    let summary = json!({
        "t_f": sched.t_f(),
        "endpoint": vec4(x_end),
        "bis_final": sig10(bis(x_end[3].max(0.0), &model.bis).map_err(config_err)?),
    });
    Ok(serde_json::to_string_pretty(&summary).expect("JSON values serialize"))
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Params { config, out } => cmd_params(&config, out.as_deref()),
        Command::Solve {
            config,
            method,
            out,
            step,
        } => cmd_solve(&config, method, &out, step),
        Command::Simulate {
            config,
            schedule,
            out,
            step,
        } => cmd_simulate(&config, &schedule, &out, step),
    }
}
