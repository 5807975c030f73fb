//! Command-line front end. Every subcommand reads a problem file and writes
//! one JSON document to standard output.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input, 3 the point is
//! not stationary (`check`, `descend`) or an oracle failed (`verify`,
//! `bench`).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analysis::{expansion_residual, judge_expansion, AnalysisError, DEFAULT_ALPHAS};
use crate::codiff::{codiff_with_value, CodiffError};
use crate::config::Tolerances;
use crate::descent::{benchmark, benchmark_suite, minimize_with, DescentConfig, DescentError, Status, TraceLine};
use crate::expr::{parse, EvalError, ParseError};
use crate::json;
use crate::optimality::{
    check, check_max_coexhauster, coexhauster_from_codiff, OptimalityError, Problem, Sense,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_STATIONARY: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CodiffError> for CliError {
    fn from(e: CodiffError) -> Self {
        match e {
            CodiffError::Eval(e) => e.into(),
            CodiffError::DimensionMismatch { .. } => CliError::Input(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<OptimalityError> for CliError {
    fn from(e: OptimalityError) -> Self {
        match e {
            OptimalityError::Codiff(e) => e.into(),
            OptimalityError::Polytope(p) => CliError::Internal(p.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Codiff(e) => e.into(),
            AnalysisError::Polytope(p) => CliError::Internal(p.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<DescentError> for CliError {
    fn from(e: DescentError) -> Self {
        match e {
            DescentError::Codiff(e) => e.into(),
            DescentError::Optimality(e) => e.into(),
            DescentError::Eval(e) => e.into(),
            DescentError::BadConfig(m) => CliError::Input(m),
            DescentError::Polytope(p) => CliError::Internal(p.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "codiff",
    version,
    about = "Codifferentials, stationarity checks and codifferential descent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct ProblemArg {
    /// Problem file (JSON).
    #[arg(short, long)]
    problem: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Objective value at the point.
    Eval(ProblemArg),
    /// Codifferential of the objective at the point.
    Codiff(ProblemArg),
    /// Stationarity report at the point; exit 3 when not stationary.
    Check {
        #[command(flatten)]
        file: ProblemArg,
        /// Membership tolerance.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        /// Activity threshold for generator offsets, scaled by 1 + |F(x)|.
        #[arg(long, default_value_t = 1e-8)]
        tol_active: f64,
    },
    /// Codifferential descent from the point (unconstrained problems).
    Descend {
        #[command(flatten)]
        file: ProblemArg,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stationarity tolerance of the stop test.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        /// Trace output (JSON lines); defaults to `<problem>.trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Expansion-residual table along random directions; exit 3 on failure.
    Verify {
        #[command(flatten)]
        file: ProblemArg,
        #[arg(long, default_value_t = 8)]
        dirs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Coexhauster family at the point and its max-type check along +-e_i.
    Coexhauster {
        #[command(flatten)]
        file: ProblemArg,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// Runs the shipped benchmark problems.
    Bench {
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
    },
}

/// Problem file. `box` entries may use `null` for an infinite bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub dimension: usize,
    pub objective: String,
    #[serde(default)]
    pub inequality: Vec<String>,
    #[serde(default)]
    pub equality: Vec<String>,
    #[serde(default, rename = "box")]
    pub bounds: Option<Vec<[Option<f64>; 2]>>,
    pub point: Vec<f64>,
    #[serde(default = "default_sense")]
    pub sense: Sense,
}

fn default_sense() -> Sense {
    Sense::Min
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid problem file {}: {e}", path.display())))
    }

    /// Parses and validates into a problem and its point.
    pub fn build(&self) -> Result<(Problem, Vec<f64>), CliError> {
        let d = self.dimension;
        if d == 0 {
            return Err(CliError::Input("dimension must be at least 1".into()));
        }
        if self.point.len() != d {
            return Err(CliError::Input(format!(
                "point has {} coordinates, dimension is {d}",
                self.point.len()
            )));
        }
        if let Some(i) = self.point.iter().position(|v| !v.is_finite()) {
            return Err(CliError::Input(format!("point coordinate {i} is not finite")));
        }
        let p = |what: &str, text: &str| {
            parse(text, d).map_err(|e: ParseError| CliError::Input(format!("{what} `{text}`: {e}")))
        };
        let mut problem = Problem::new(d, p("objective", &self.objective)?).with_sense(self.sense);
        for (i, t) in self.inequality.iter().enumerate() {
            problem = problem.with_inequality(p(&format!("inequality {i}"), t)?);
        }
        for (i, t) in self.equality.iter().enumerate() {
            problem = problem.with_equality(p(&format!("equality {i}"), t)?);
        }
        if let Some(b) = &self.bounds {
            let bounds = b
                .iter()
                .map(|[lo, hi]| (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
                .collect();
            problem = problem.with_bounds(bounds);
        }
        problem.validate()?;
        Ok((problem, self.point.clone()))
    }
}

/// Runs the command line `argv` (including the program name) and returns
/// the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let s = json::to_string(value).map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(out, "{s}").map_err(|e| CliError::Internal(e.to_string()))
}

fn load(arg: &ProblemArg) -> Result<(Problem, Vec<f64>), CliError> {
    ProblemFile::load(&arg.problem)?.build()
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Input(format!("--{name} must be positive, got {v}")))
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Eval(file) => {
            let (p, x) = load(&file)?;
            let value = p.objective.eval(&x)?;
            emit(out, &json!({ "point": x, "value": value }))?;
            Ok(EXIT_OK)
        }
        Command::Codiff(file) => {
            let (p, x) = load(&file)?;
            let (_, c) = codiff_with_value(&p.objective, &x)?;
            emit(out, &c)?;
            Ok(EXIT_OK)
        }
        Command::Check { file, tol, tol_active } => {
            let (p, x) = load(&file)?;
            let tols = Tolerances {
                stationarity: positive("tol", tol)?,
                active: positive("tol-active", tol_active)?,
                ..Tolerances::default()
            };
            let report = check(&p, &x, &tols)?;
            emit(out, &report)?;
            Ok(if report.is_stationary() {
                EXIT_OK
            } else {
                EXIT_NOT_STATIONARY
            })
        }
        Command::Descend {
            file,
            max_iters,
            seed,
            tol,
            trace,
        } => descend(&file, max_iters, seed, positive("tol", tol)?, trace, out),
        Command::Verify { file, dirs, seed } => verify(&file, dirs, seed, out),
        Command::Coexhauster { file, tol } => {
            let (p, x) = load(&file)?;
            let (value, c) = codiff_with_value(&p.objective, &x)?;
            let family = coexhauster_from_codiff(&c);
            let mut directions = Vec::new();
            for i in 0..p.dim {
                for s in [1.0, -1.0] {
                    let mut g = vec![0.0; p.dim];
                    g[i] = s;
                    directions.push(g);
                }
            }
            let tol_active = Tolerances::default().active_at(value);
            let report = check_max_coexhauster(&family, &directions, positive("tol", tol)?, tol_active);
            emit(out, &json!({ "family": family.family, "max_check": report }))?;
            Ok(EXIT_OK)
        }
        Command::Bench { name, max_iters } => bench(name.as_deref(), max_iters, out),
    }
}

fn descend(
    file: &ProblemArg,
    max_iters: usize,
    seed: u64,
    tol: f64,
    trace: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let (p, x0) = load(file)?;
    if !p.inequalities.is_empty() || !p.equalities.is_empty() || p.bounds.is_some() {
        return Err(CliError::Input(
            "descend supports unconstrained problems only".into(),
        ));
    }
    let objective = p.as_min().objective;
    let cfg = DescentConfig {
        tol_stat: tol,
        max_iters,
        seed,
        ..DescentConfig::default()
    };
    let t = minimize_with(&objective, &x0, &cfg, &Tolerances::default())?;
    let path = trace.unwrap_or_else(|| {
        let mut s = file.problem.clone().into_os_string();
        s.push(".trace.jsonl");
        PathBuf::from(s)
    });
    let mut lines = Vec::new();
    for it in &t.iterates {
        let line = json::to_string(&TraceLine::from(it)).map_err(|e| CliError::Internal(e.to_string()))?;
        lines.push(line);
    }
    std::fs::write(&path, lines.join("\n") + "\n")
        .map_err(|e| CliError::Input(format!("cannot write trace {}: {e}", path.display())))?;
    let last = t.last();
    let sign = if p.sense == Sense::Max { -1.0 } else { 1.0 };
    emit(
        out,
        &json!({
            "x": last.x,
            "f": sign * last.f,
            "status": t.status,
            "iterations": t.steps(),
            "verdict": t.final_check.verdict,
            "trace": path.display().to_string(),
        }),
    )?;
    Ok(if t.status == Status::Stationary {
        EXIT_OK
    } else {
        EXIT_NOT_STATIONARY
    })
}

fn verify(file: &ProblemArg, dirs: usize, seed: u64, out: &mut dyn Write) -> Result<i32, CliError> {
    let (p, x) = load(file)?;
    if dirs == 0 {
        return Err(CliError::Input("--dirs must be at least 1".into()));
    }
    let (value, c) = codiff_with_value(&p.objective, &x)?;
    let threshold = 1e-3 * (1.0 + value.abs());
    let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let noise = 1e-12 * (1.0 + value.abs() + c.lipschitz_bound() * (1.0 + xnorm));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(dirs);
    let mut all_pass = true;
    for _ in 0..dirs {
        let mut g: Vec<f64> = (0..p.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        g.iter_mut().for_each(|v| *v /= n);
        let table = expansion_residual(&p.objective, &x, &g, &DEFAULT_ALPHAS)?;
        let verdict = judge_expansion(&table, threshold, noise);
        all_pass &= verdict.passed;
        rows.push(json!({ "direction": g, "residuals": table, "verdict": verdict }));
    }
    emit(
        out,
        &json!({
            "point": x,
            "value": value,
            "directions": rows,
            "verdict": if all_pass { "pass" } else { "fail" },
        }),
    )?;
    Ok(if all_pass { EXIT_OK } else { EXIT_NOT_STATIONARY })
}

fn bench(name: Option<&str>, max_iters: usize, out: &mut dyn Write) -> Result<i32, CliError> {
    let suite = match name {
        Some(n) => vec![benchmark(n).ok_or_else(|| CliError::Input(format!("unknown benchmark `{n}`")))?],
        None => benchmark_suite(),
    };
    let tol = Tolerances::default();
    let mut rows = Vec::with_capacity(suite.len());
    let mut ok = true;
    for b in suite {
        let known = check(&b.problem, &b.minimizer, &tol)?;
        ok &= known.is_stationary();
        let mut row = json!({
            "name": b.name,
            "known_value": b.value,
            "minimizer": b.minimizer,
            "minimizer_verdict": known.verdict,
        });
        if b.is_unconstrained() {
            let cfg = DescentConfig {
                max_iters,
                ..DescentConfig::default()
            };
            let t = minimize_with(&b.problem.objective, &b.start, &cfg, &tol)?;
            let last = t.last();
            row["start"] = json!(b.start);
            row["final_value"] = json!(last.f);
            row["final_point"] = json!(last.x);
            row["iterations"] = json!(t.steps());
            row["status"] = json!(t.status);
        }
        rows.push(row);
    }
    emit(out, &rows)?;
    Ok(if ok { EXIT_OK } else { EXIT_NOT_STATIONARY })
}
