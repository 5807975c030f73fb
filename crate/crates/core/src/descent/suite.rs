//! Small test problems with known minimizers.

use crate::expr::parse;
use crate::optimality::Problem;

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: &'static str,
    pub problem: Problem,
    /// A documented minimizer.
    pub minimizer: Vec<f64>,
    /// Optimal value.
    pub value: f64,
    /// Starting point used by `bench`.
    pub start: Vec<f64>,
    /// No other stationary point lies in a neighbourhood of `minimizer`.
    pub isolated: bool,
    /// Objective and constraints are piecewise linear.
    pub piecewise_linear: bool,
}

impl Benchmark {
    pub fn is_unconstrained(&self) -> bool {
        let p = &self.problem;
        p.inequalities.is_empty() && p.equalities.is_empty() && p.bounds.is_none()
    }
}

struct Spec {
    name: &'static str,
    objective: &'static str,
    inequalities: &'static [&'static str],
    equalities: &'static [&'static str],
    bounds: Option<[(f64, f64); 2]>,
    minimizer: [f64; 2],
    value: f64,
    start: [f64; 2],
    isolated: bool,
}

const SPECS: &[Spec] = &[
    Spec {
        name: "l1",
        objective: "abs(x1) + 2*abs(x2)",
        inequalities: &[],
        equalities: &[],
        bounds: None,
        minimizer: [0.0, 0.0],
        value: 0.0,
        start: [1.0, 1.0],
        isolated: true,
    },
    Spec {
        name: "maxq2",
        objective: "max(x1^2 + (x2 - 1)^2, x1^2 + (x2 + 1)^2)",
        inequalities: &[],
        equalities: &[],
        bounds: None,
        minimizer: [0.0, 0.0],
        value: 1.0,
        start: [3.0, 0.2],
        isolated: true,
    },
    // Minimal on the whole quadrant x1 <= 1, x2 <= -2; flat at value 1 on
    // x1 >= 1, x2 >= -2, x1 + x2 >= 0.
    Spec {
        name: "dcline",
        objective: "abs(x1 - 1) + abs(x2 + 2) - abs(x1 + x2)",
        inequalities: &[],
        equalities: &[],
        bounds: None,
        minimizer: [1.0, -2.0],
        value: -1.0,
        start: [2.0, -3.0],
        isolated: false,
    },
    Spec {
        name: "quad",
        objective: "(x1 - 1)^2 + 2*(x2 + 0.5)^2",
        inequalities: &[],
        equalities: &[],
        bounds: None,
        minimizer: [1.0, -0.5],
        value: 0.0,
        start: [-2.0, 2.0],
        isolated: true,
    },
    Spec {
        name: "logcosh",
        objective: "log(exp(x1) + exp(-x1)) + abs(x2)",
        inequalities: &[],
        equalities: &[],
        bounds: None,
        minimizer: [0.0, 0.0],
        value: std::f64::consts::LN_2,
        start: [1.5, -1.0],
        isolated: true,
    },
    Spec {
        name: "trig",
        objective: "1 - cos(x1) + abs(sin(x2))",
        inequalities: &[],
        equalities: &[],
        bounds: None,
        minimizer: [0.0, 0.0],
        value: 0.0,
        start: [1.0, 0.5],
        isolated: true,
    },
    Spec {
        name: "box",
        objective: "abs(x1) + abs(x2)",
        inequalities: &[],
        equalities: &[],
        bounds: Some([(1.0, 2.0), (-1.0, 1.0)]),
        minimizer: [1.0, 0.0],
        value: 1.0,
        start: [1.5, 0.5],
        isolated: true,
    },
    Spec {
        name: "ineq",
        objective: "x1 + abs(x2)",
        inequalities: &["abs(x1) + abs(x2) - 1"],
        equalities: &[],
        bounds: None,
        minimizer: [-1.0, 0.0],
        value: -1.0,
        start: [0.0, 0.0],
        isolated: true,
    },
    // Minimal on the whole segment from (0, 2) to (2, 0).
    Spec {
        name: "eq",
        objective: "abs(x1) + abs(x2)",
        inequalities: &[],
        equalities: &["x1 + x2 - 2"],
        bounds: None,
        minimizer: [1.0, 1.0],
        value: 2.0,
        start: [1.0, 1.0],
        isolated: false,
    },
];

fn build(s: &Spec) -> Benchmark {
    let p = |t: &str| parse(t, 2).expect("benchmark expressions parse");
    let mut problem = Problem::new(2, p(s.objective));
    for t in s.inequalities {
        problem = problem.with_inequality(p(t));
    }
    for t in s.equalities {
        problem = problem.with_equality(p(t));
    }
    if let Some(b) = s.bounds {
        problem = problem.with_bounds(b.to_vec());
    }
    let piecewise_linear = std::iter::once(&problem.objective)
        .chain(&problem.inequalities)
        .chain(&problem.equalities)
        .all(|e| e.is_piecewise_linear());
    Benchmark {
        name: s.name,
        problem,
        minimizer: s.minimizer.to_vec(),
        value: s.value,
        start: s.start.to_vec(),
        isolated: s.isolated,
        piecewise_linear,
    }
}

/// All shipped problems, in a fixed order.
pub fn benchmark_suite() -> Vec<Benchmark> {
    SPECS.iter().map(build).collect()
}

pub fn benchmark(name: &str) -> Option<Benchmark> {
    SPECS.iter().find(|s| s.name == name).map(build)
}
