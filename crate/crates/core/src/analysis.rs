//! First-order analysis built on a codifferential: directional derivatives,
//! the quasidifferential pair, and numerical probes of the expansion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codiff::{codiff, CodiffError, Codifferential};
use crate::config::Tolerances;
use crate::expr::{EvalError, Expr};
use crate::polytope::{dot, PolytopeError, VPolytope};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Codiff(#[from] CodiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
}

/// Step sizes `1e-1, 1e-2, .., 1e-6` used by the residual probe.
pub const DEFAULT_ALPHAS: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Sub- and superdifferential of the directional derivative
/// `g -> max_{v in sub} <v, g> + min_{w in sup} <w, g>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quasidifferential {
    pub sub: VPolytope,
    pub sup: VPolytope,
}

fn slopes(p: &VPolytope) -> VPolytope {
    p.map_points(|c| c[1..].to_vec())
        .expect("codifferential points have dimension >= 2")
}

/// `F'(x; g)` from the active generators, with the default activity threshold.
pub fn dir_deriv(c: &Codifferential, g: &[f64]) -> f64 {
    dir_deriv_with(c, g, Tolerances::default().active)
}

/// `F'(x; g)` using generators whose offset is within `tol_active` of zero.
pub fn dir_deriv_with(c: &Codifferential, g: &[f64], tol_active: f64) -> f64 {
    assert_eq!(g.len(), c.dim(), "direction dimension");
    let up = c
        .active_hypo(tol_active)
        .points()
        .map(|p| dot(&p[1..], g))
        .fold(f64::NEG_INFINITY, f64::max);
    let down = c
        .active_hyper(tol_active)
        .points()
        .map(|p| dot(&p[1..], g))
        .fold(f64::INFINITY, f64::min);
    up + down
}

/// Gradients of the active generators, pruned.
pub fn quasidiff(c: &Codifferential) -> Quasidifferential {
    quasidiff_with(c, Tolerances::default().active)
}

pub fn quasidiff_with(c: &Codifferential, tol_active: f64) -> Quasidifferential {
    Quasidifferential {
        sub: slopes(&c.active_hypo(tol_active)).prune(),
        sup: slopes(&c.active_hyper(tol_active)).prune(),
    }
}

/// One sample of the expansion residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub alpha: f64,
    /// `r(alpha) / alpha`.
    pub ratio: f64,
}

/// `|F(x + a dx) - F(x) - Phi(a dx) - Psi(a dx)| / a` for each `a` in `alphas`.
pub fn expansion_residual(
    e: &Expr,
    x: &[f64],
    dx: &[f64],
    alphas: &[f64],
) -> Result<Vec<ResidualPoint>, AnalysisError> {
    if dx.len() != x.len() {
        return Err(AnalysisError::DimensionMismatch {
            expected: x.len(),
            found: dx.len(),
        });
    }
    let c = codiff(e, x)?;
    let f0 = e.eval(x)?;
    alphas
        .iter()
        .map(|&alpha| {
            let step: Vec<f64> = dx.iter().map(|d| alpha * d).collect();
            let moved: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            let r = (e.eval(&moved)? - f0 - c.increment(&step)?).abs();
            Ok(ResidualPoint {
                alpha,
                ratio: r / alpha,
            })
        })
        .collect()
}

/// Pass/fail summary of a residual table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionVerdict {
    pub passed: bool,
    pub final_ratio: f64,
    pub threshold: f64,
    /// The later half of the table never exceeds the peak of the earlier half.
    pub decaying: bool,
}

/// Judges a residual table ordered by decreasing `alpha`: the last ratio must
/// be at most `threshold` and the ratios must not grow from the first half of
/// the table to the second. `noise` is an absolute floor on `r(alpha)` below
/// which a residual counts as rounding error.
pub fn judge_expansion(points: &[ResidualPoint], threshold: f64, noise: f64) -> ExpansionVerdict {
    let Some(last) = points.last() else {
        return ExpansionVerdict {
            passed: false,
            final_ratio: f64::NAN,
            threshold,
            decaying: false,
        };
    };
    let half = points.len().div_ceil(2);
    let peak = |s: &[ResidualPoint]| s.iter().map(|p| p.ratio).fold(0.0, f64::max);
    let first = peak(&points[..half]);
    let decaying = points[half..]
        .iter()
        .all(|p| p.ratio <= first + noise / p.alpha);
    let final_ok = last.ratio <= threshold;
    ExpansionVerdict {
        passed: final_ok && decaying,
        final_ratio: last.ratio,
        threshold,
        decaying,
    }
}

/// Largest Hausdorff distance between the codifferential at `x` and at
/// `samples` random points of the closed ball of `radius` around `x`,
/// taken over both the hypo and the hyper sets.
pub fn continuity_probe(
    e: &Expr,
    x: &[f64],
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64, AnalysisError> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(AnalysisError::BadRadius(radius));
    }
    let base = codiff(e, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let dir: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dot(&dir, &dir).sqrt();
        if norm == 0.0 {
            continue;
        }
        let r: f64 = radius * rand::Rng::gen::<f64>(&mut rng).powf(1.0 / x.len() as f64);
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d / norm).collect();
        let c = codiff(e, &y)?;
        worst = worst
            .max(base.hypo().hausdorff_distance(c.hypo())?)
            .max(base.hyper().hausdorff_distance(c.hyper())?);
    }
    Ok(worst)
}
