use serde::{Deserialize, Serialize};

/// Numeric tolerances shared by the calculus, the checks and the solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Geometric predicates: pruning, hull membership.
    pub geometric: f64,
    /// Base activity threshold for generator offsets; scaled by `1 + |F(x)|`.
    pub active: f64,
    /// Membership tolerance of the stationarity checks.
    pub stationarity: f64,
    /// Constraint feasibility.
    pub feasibility: f64,
    /// Largest normalization drift a calculus rule may produce, scaled by `1 + |F(x)|`.
    pub drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            geometric: 1e-9,
            active: 1e-8,
            stationarity: 1e-7,
            feasibility: 1e-9,
            drift: 1e-7,
        }
    }
}

impl Tolerances {
    /// Activity threshold at a point where the function takes `value`.
    pub fn active_at(&self, value: f64) -> f64 {
        self.active * (1.0 + value.abs())
    }

    pub fn with_stationarity(mut self, tol: f64) -> Self {
        self.stationarity = tol;
        self
    }
}
