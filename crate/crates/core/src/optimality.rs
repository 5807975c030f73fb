//! Necessary optimality conditions expressed as polytope memberships.
//!
//! With `Phi` max-affine and `Psi` min-affine, the first-order model at a
//! minimizer must satisfy, for every active hyper gradient `w`,
//! `-w in conv(active hypo gradients)` (enlarged by a normal cone or a free
//! span for constrained problems). Each failed membership yields a descent
//! direction from the projection residual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codiff::{codiff_with_value, CodiffError, Codifferential};
use crate::config::Tolerances;
use crate::expr::{EvalError, Expr};
use crate::polytope::{least_squares, PolytopeError, Projection, VPolytope};

/// Upper bound on enumerated hyper-vertex selections.
pub const MAX_SELECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimalityError {
    #[error(transparent)]
    Codiff(#[from] CodiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("box bounds for coordinate {index} are invalid: [{lower}, {upper}]")]
    BadBox { index: usize, lower: f64, upper: f64 },
    #[error("coordinate {index} = {value} lies outside [{lower}, {upper}]")]
    OutsideBox {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("{kind} constraint {index} violated: value {value:e}")]
    Infeasible {
        kind: &'static str,
        index: usize,
        value: f64,
    },
    #[error("equality constraint {index} is not differentiable at the point")]
    NotSmooth { index: usize },
    #[error("constraint Jacobian has rank {rank} < {rows}")]
    RankDeficient { rank: usize, rows: usize },
    #[error("{0}")]
    Unsupported(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

/// `objective -> min` (or max) subject to `inequalities <= 0` (`>= 0` for
/// max), `equalities = 0` and optional coordinate bounds.
#[derive(Clone, Debug)]
pub struct Problem {
    pub dim: usize,
    pub objective: Expr,
    pub inequalities: Vec<Expr>,
    pub equalities: Vec<Expr>,
    /// Per-coordinate `(lower, upper)`; infinite entries are unbounded.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub sense: Sense,
}

impl Problem {
    pub fn new(dim: usize, objective: Expr) -> Self {
        Self {
            dim,
            objective,
            inequalities: Vec::new(),
            equalities: Vec::new(),
            bounds: None,
            sense: Sense::Min,
        }
    }

    pub fn with_inequality(mut self, e: Expr) -> Self {
        self.inequalities.push(e);
        self
    }

    pub fn with_equality(mut self, e: Expr) -> Self {
        self.equalities.push(e);
        self
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_sense(mut self, sense: Sense) -> Self {
        self.sense = sense;
        self
    }

    pub fn validate(&self) -> Result<(), OptimalityError> {
        let all = std::iter::once(&self.objective)
            .chain(&self.inequalities)
            .chain(&self.equalities);
        for e in all {
            if e.arity() > self.dim {
                return Err(OptimalityError::DimensionMismatch {
                    expected: self.dim,
                    found: e.arity(),
                });
            }
        }
        if let Some(b) = &self.bounds {
            if b.len() != self.dim {
                return Err(OptimalityError::DimensionMismatch {
                    expected: self.dim,
                    found: b.len(),
                });
            }
            for (index, &(lower, upper)) in b.iter().enumerate() {
                if lower.is_nan() || upper.is_nan() || lower > upper {
                    return Err(OptimalityError::BadBox { index, lower, upper });
                }
            }
        }
        Ok(())
    }

    /// The equivalent minimization problem of a max problem.
    pub fn as_min(&self) -> Problem {
        match self.sense {
            Sense::Min => self.clone(),
            Sense::Max => Problem {
                dim: self.dim,
                objective: -self.objective.clone(),
                inequalities: self.inequalities.iter().map(|e| -e.clone()).collect(),
                equalities: self.equalities.clone(),
                bounds: self.bounds.clone(),
                sense: Sense::Min,
            },
        }
    }

    /// Largest constraint violation at `x` (bounds, inequalities, equalities).
    pub fn violation(&self, x: &[f64]) -> Result<f64, OptimalityError> {
        let p = self.as_min();
        let mut worst = 0.0f64;
        if let Some(b) = &p.bounds {
            for (xi, &(lo, hi)) in x.iter().zip(b) {
                worst = worst.max(lo - xi).max(xi - hi);
            }
        }
        for e in &p.inequalities {
            worst = worst.max(e.eval(x)?);
        }
        for e in &p.equalities {
            worst = worst.max(e.eval(x)?.abs());
        }
        Ok(worst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stationary,
    NotStationary,
}

/// One membership test of a stationarity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Chosen hyper-vertex index per entry of the active set.
    pub selection: Vec<usize>,
    pub distance: f64,
    /// Unit descent direction when the membership fails.
    pub direction: Option<Vec<f64>>,
    /// Equality multipliers `y` with `sum lambda_k v_k = J^T y`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub verdict: Verdict,
    /// Largest membership distance over all checks.
    pub worst_violation: f64,
    /// Index 0 is the objective, `i >= 1` the `i`-th inequality.
    pub active_set: Vec<usize>,
    pub witnesses: Vec<Witness>,
    /// Set when the selection enumeration hit [`MAX_SELECTIONS`].
    pub truncated: bool,
}

impl StationarityReport {
    fn assemble(witnesses: Vec<Witness>, active_set: Vec<usize>, truncated: bool, tol: f64) -> Self {
        let worst_violation = witnesses.iter().map(|w| w.distance).fold(0.0, f64::max);
        Self {
            verdict: if worst_violation <= tol {
                Verdict::Stationary
            } else {
                Verdict::NotStationary
            },
            worst_violation,
            active_set,
            witnesses,
            truncated,
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.verdict == Verdict::Stationary
    }

    /// Direction of the worst failed membership.
    pub fn descent_direction(&self) -> Option<&[f64]> {
        self.witnesses
            .iter()
            .filter(|w| w.direction.is_some())
            .max_by(|a, b| a.distance.total_cmp(&b.distance))
            .and_then(|w| w.direction.as_deref())
    }
}

/// Gradients of the active hypo generators.
fn active_sub(c: &Codifferential, tol_active: f64) -> VPolytope {
    c.active_hypo(tol_active)
        .map_points(|p| p[1..].to_vec())
        .expect("codifferential points have dimension >= 2")
}

/// Gradients of the active hyper generators.
fn active_sup(c: &Codifferential, tol_active: f64) -> Vec<Vec<f64>> {
    c.active_hyper(tol_active).points().map(|p| p[1..].to_vec()).collect()
}

fn witness(selection: Vec<usize>, proj: &Projection, tol: f64) -> Witness {
    let direction = (proj.distance > tol).then(|| {
        let n = proj.residual.iter().map(|r| r * r).sum::<f64>().sqrt();
        proj.residual.iter().map(|r| -r / n).collect()
    });
    Witness {
        selection,
        distance: proj.distance,
        direction,
        multipliers: None,
    }
}

/// `-w in conv(active sub) + cone(rays)` for every active hyper gradient `w`.
fn check_with_rays(
    c: &Codifferential,
    rays: &[Vec<f64>],
    tol: &Tolerances,
) -> Result<StationarityReport, OptimalityError> {
    let sub = active_sub(c, tol.active);
    let mut witnesses = Vec::new();
    for (j, w) in active_sup(c, tol.active).iter().enumerate() {
        let q: Vec<f64> = w.iter().map(|v| -v).collect();
        let proj = sub.distance_to_hull_plus_cone(rays, &q, tol.geometric)?;
        witnesses.push(witness(vec![j], &proj, tol.stationarity));
    }
    Ok(StationarityReport::assemble(witnesses, vec![0], false, tol.stationarity))
}

/// First-order minimality test of a normalized codifferential; `tol.active`
/// is used as the absolute activity threshold.
pub fn check_min_unconstrained(
    c: &Codifferential,
    tol: &Tolerances,
) -> Result<StationarityReport, OptimalityError> {
    check_with_rays(c, &[], tol)
}

/// Mirror of [`check_min_unconstrained`]: `-v in conv(active sup)` for every
/// active hypo gradient `v`. Directions are ascent directions.
pub fn check_max_unconstrained(
    c: &Codifferential,
    tol: &Tolerances,
) -> Result<StationarityReport, OptimalityError> {
    check_with_rays(&c.negated(), &[], tol)
}

/// Outward normals `-e_i` at tight lower bounds and `+e_i` at tight upper
/// bounds. Errors when `x` lies outside the box.
pub fn normal_cone_rays(
    x: &[f64],
    bounds: &[(f64, f64)],
    tol_feas: f64,
) -> Result<Vec<Vec<f64>>, OptimalityError> {
    if x.len() != bounds.len() {
        return Err(OptimalityError::DimensionMismatch {
            expected: bounds.len(),
            found: x.len(),
        });
    }
    let d = x.len();
    let mut rays = Vec::new();
    for (index, (&value, &(lower, upper))) in x.iter().zip(bounds).enumerate() {
        if lower > upper {
            return Err(OptimalityError::BadBox { index, lower, upper });
        }
        let slack = |b: f64| tol_feas * (1.0 + b.abs());
        if value < lower - slack(lower) || value > upper + slack(upper) {
            return Err(OptimalityError::OutsideBox {
                index,
                value,
                lower,
                upper,
            });
        }
        let mut e = vec![0.0; d];
        if lower.is_finite() && value <= lower + slack(lower) {
            e[index] = -1.0;
            rays.push(e.clone());
        }
        if upper.is_finite() && value >= upper - slack(upper) {
            e[index] = 1.0;
            rays.push(e);
        }
    }
    Ok(rays)
}

/// Minimality on a box: memberships enlarged by the normal cone at `x`.
pub fn check_min_box(
    c: &Codifferential,
    x: &[f64],
    bounds: &[(f64, f64)],
    tol: &Tolerances,
) -> Result<StationarityReport, OptimalityError> {
    if x.len() != c.dim() {
        return Err(OptimalityError::DimensionMismatch {
            expected: c.dim(),
            found: x.len(),
        });
    }
    let rays = normal_cone_rays(x, bounds, tol.feasibility)?;
    check_with_rays(c, &rays, tol)
}

/// Odometer over `0..counts[i]` for each `i`, capped at [`MAX_SELECTIONS`].
fn selections(counts: &[usize]) -> (Vec<Vec<usize>>, bool) {
    let mut out = Vec::new();
    if counts.contains(&0) {
        return (out, false);
    }
    let mut cur = vec![0; counts.len()];
    loop {
        if out.len() == MAX_SELECTIONS {
            return (out, true);
        }
        out.push(cur.clone());
        let mut k = 0;
        loop {
            if k == counts.len() {
                return (out, false);
            }
            cur[k] += 1;
            if cur[k] < counts[k] {
                break;
            }
            cur[k] = 0;
            k += 1;
        }
    }
}

struct ActivePiece {
    sub: VPolytope,
    sup: Vec<Vec<f64>>,
}

/// Codifferentials of the objective and the active inequalities at `x`.
fn active_pieces(
    p: &Problem,
    x: &[f64],
    tol: &Tolerances,
) -> Result<(Vec<usize>, Vec<ActivePiece>), OptimalityError> {
    let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut active_set = Vec::new();
    let mut pieces = Vec::new();
    let funcs = std::iter::once(&p.objective).chain(&p.inequalities);
    for (i, e) in funcs.enumerate() {
        let (value, c) = codiff_with_value(e, x)?;
        if i > 0 {
            if value > tol.feasibility * scale {
                return Err(OptimalityError::Infeasible {
                    kind: "inequality",
                    index: i - 1,
                    value,
                });
            }
            if value < -tol.active {
                continue;
            }
        }
        let tol_active = tol.active_at(value);
        active_set.push(i);
        pieces.push(ActivePiece {
            sub: active_sub(&c, tol_active),
            sup: active_sup(&c, tol_active),
        });
    }
    Ok((active_set, pieces))
}

fn pooled(pieces: &[ActivePiece], sel: &[usize]) -> Result<VPolytope, OptimalityError> {
    let mut pts = Vec::new();
    for (piece, &j) in pieces.iter().zip(sel) {
        let w = &piece.sup[j];
        for v in piece.sub.points() {
            pts.push(v.iter().zip(w).map(|(a, b)| a + b).collect());
        }
    }
    Ok(VPolytope::from_points(pts)?)
}

fn check_dim(p: &Problem, x: &[f64]) -> Result<(), OptimalityError> {
    p.validate()?;
    if x.len() != p.dim {
        return Err(OptimalityError::DimensionMismatch {
            expected: p.dim,
            found: x.len(),
        });
    }
    Ok(())
}

/// Minimality with inequality constraints: for every selection of active
/// hyper gradients `(w_i)` over the active set,
/// `0 in conv(U_{i active} (active sub_i + w_i)) + normal cone of the box`.
pub fn check_min_constrained(
    p: &Problem,
    x: &[f64],
    tol: &Tolerances,
) -> Result<StationarityReport, OptimalityError> {
    check_dim(p, x)?;
    if !p.equalities.is_empty() {
        return Err(OptimalityError::Unsupported(
            "equality constraints require check_min_equality",
        ));
    }
    let p = p.as_min();
    let rays = match &p.bounds {
        Some(b) => normal_cone_rays(x, b, tol.feasibility)?,
        None => Vec::new(),
    };
    let (active_set, pieces) = active_pieces(&p, x, tol)?;
    let counts: Vec<usize> = pieces.iter().map(|pc| pc.sup.len()).collect();
    let (sels, truncated) = selections(&counts);
    let zero = vec![0.0; p.dim];
    let mut witnesses = Vec::with_capacity(sels.len());
    for sel in sels {
        let hull = pooled(&pieces, &sel)?;
        let proj = hull.distance_to_hull_plus_cone(&rays, &zero, tol.geometric)?;
        witnesses.push(witness(sel, &proj, tol.stationarity));
    }
    Ok(StationarityReport::assemble(witnesses, active_set, truncated, tol.stationarity))
}

/// Minimality with smooth equality constraints `h_j = 0` (and optionally
/// inequalities and a box): for every selection,
/// `0 in conv(U (active sub_i + w_i)) + span(grad h_j) + normal cone`.
/// Each passing witness carries multipliers `y` with pooled gradient `J^T y`.
pub fn check_min_equality(
    p: &Problem,
    x: &[f64],
    tol: &Tolerances,
) -> Result<StationarityReport, OptimalityError> {
    check_dim(p, x)?;
    if p.equalities.is_empty() {
        return Err(OptimalityError::Unsupported(
            "check_min_equality needs at least one equality constraint",
        ));
    }
    let p = p.as_min();
    let d = p.dim;
    let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut jac = Vec::with_capacity(p.equalities.len());
    for (index, h) in p.equalities.iter().enumerate() {
        let (value, c) = codiff_with_value(h, x)?;
        if value.abs() > tol.feasibility * scale {
            return Err(OptimalityError::Infeasible {
                kind: "equality",
                index,
                value,
            });
        }
        if c.hypo().len() != 1 || c.hyper().len() != 1 {
            return Err(OptimalityError::NotSmooth { index });
        }
        jac.push(c.hypo().point(0)[1..].to_vec());
    }
    let m = jac.len();
    let j = DMatrix::from_fn(m, d, |r, k| jac[r][k]);
    let sv = j.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax.max(1.0) * (m.max(d) as f64)).count();
    if rank < m {
        return Err(OptimalityError::RankDeficient { rank, rows: m });
    }
    let jnorm = j.norm();

    let rays = match &p.bounds {
        Some(b) => normal_cone_rays(x, b, tol.feasibility)?,
        None => Vec::new(),
    };
    let (active_set, pieces) = active_pieces(&p, x, tol)?;
    let counts: Vec<usize> = pieces.iter().map(|pc| pc.sup.len()).collect();
    let (sels, truncated) = selections(&counts);
    let zero = vec![0.0; d];
    let limit = tol.stationarity * (1.0 + jnorm);
    let jt = j.transpose();
    let mut witnesses = Vec::with_capacity(sels.len());
    for sel in sels {
        let hull = pooled(&pieces, &sel)?;
        let proj = hull.distance_to_hull_cone_span(&rays, &jac, &zero, tol.geometric)?;
        let mut w = witness(sel, &proj, limit);
        if w.direction.is_none() {
            let v = DVector::from_column_slice(&proj.hull_point);
            w.multipliers = Some(least_squares(&jt, &v).iter().copied().collect());
        }
        witnesses.push(w);
    }
    Ok(StationarityReport::assemble(witnesses, active_set, truncated, limit))
}

/// Runs the check matching the problem's structure at `x`. Max problems are
/// checked as the mirrored min problem, so their directions are ascent
/// directions of the original objective.
pub fn check(p: &Problem, x: &[f64], tol: &Tolerances) -> Result<StationarityReport, OptimalityError> {
    check_dim(p, x)?;
    let q = p.as_min();
    if !q.equalities.is_empty() {
        return check_min_equality(&q, x, tol);
    }
    if !q.inequalities.is_empty() {
        return check_min_constrained(&q, x, tol);
    }
    let (value, c) = codiff_with_value(&q.objective, x)?;
    let scaled = Tolerances {
        active: tol.active_at(value),
        ..*tol
    };
    match &q.bounds {
        Some(b) => check_min_box(&c, x, b, &scaled),
        None => check_min_unconstrained(&c, &scaled),
    }
}

/// A finite family of convex upper approximations of `F(x + .) - F(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coexhauster {
    pub family: Vec<VPolytope>,
}

/// `{ prune(hypo + {(b, w)}) : (b, w) in hyper }`: one member per hyper
/// vertex, including those with `b > 0`, which never attain `Phi + Psi` at
/// zero and are skipped by [`check_max_coexhauster`].
pub fn coexhauster_from_codiff(c: &Codifferential) -> Coexhauster {
    let family = c
        .hyper()
        .points()
        .map(|h| c.hypo().translate(h).expect("matching dimensions").prune())
        .collect();
    Coexhauster { family }
}

/// Result of the max test along one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub direction: Vec<f64>,
    pub passed: bool,
    /// `min_C max_{active (0, p) in C} <p, g>`.
    pub value: f64,
    /// Member attaining `value`.
    pub member: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoexhausterReport {
    pub verdict: Verdict,
    pub directions: Vec<DirectionCheck>,
}

/// Max-type necessary condition: along every `g` some member `C` whose
/// largest offset is zero has `max_{active (0, p) in C} <p, g> <= tol`.
pub fn check_max_coexhauster(
    e: &Coexhauster,
    directions: &[Vec<f64>],
    tol: f64,
    tol_active: f64,
) -> CoexhausterReport {
    let mut out = Vec::with_capacity(directions.len());
    for g in directions {
        let mut best: Option<(usize, f64)> = None;
        for (k, member) in e.family.iter().enumerate() {
            let top = member.points().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            if top.abs() > tol_active {
                continue;
            }
            let slope = member
                .points()
                .filter(|p| p[0] >= -tol_active)
                .map(|p| p[1..].iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_none_or(|(_, v)| slope < v) {
                best = Some((k, slope));
            }
        }
        let value = best.map_or(f64::INFINITY, |(_, v)| v);
        out.push(DirectionCheck {
            direction: g.clone(),
            passed: value <= tol,
            value,
            member: best.map(|(k, _)| k),
        });
    }
    let verdict = if out.iter().all(|d| d.passed) {
        Verdict::Stationary
    } else {
        Verdict::NotStationary
    };
    CoexhausterReport {
        verdict,
        directions: out,
    }
}
