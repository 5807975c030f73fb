//! Codifferentials and their calculus.
//!
//! A [`Codifferential`] holds the generator sets of the pair
//!
//! ```text
//! Phi(dx) = max_{(a, v) in hypo}  (a + <v, dx>)      convex
//! Psi(dx) = min_{(b, w) in hyper} (b + <w, dx>)      concave
//! ```
//!
//! kept in the canonical form `max a = 0`, `min b = 0`, so that
//! `Phi(0) = Psi(0) = 0`. [`codiff`] builds one for an [`Expr`] at a point by
//! structural recursion; the `rule_*` functions are the individual steps and
//! are public so that callers can assemble codifferentials by hand.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::config::Tolerances;
use crate::expr::{EvalError, Expr, Node};
use crate::polytope::{dot, PolytopeError, VPolytope};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodiffError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("normalization drift {drift:e} exceeds {limit:e} at `{subexpr}`")]
    Drift {
        drift: f64,
        limit: f64,
        subexpr: String,
    },
}

/// Canonical representative of a codifferential at a point of `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codifferential {
    dim: usize,
    hypo: VPolytope,
    hyper: VPolytope,
}

impl Codifferential {
    /// Wraps an already normalized pair. Use [`normalize`] for raw pairs.
    pub fn from_parts(hypo: VPolytope, hyper: VPolytope) -> Result<Self, CodiffError> {
        if hypo.dim() != hyper.dim() {
            return Err(CodiffError::DimensionMismatch {
                expected: hypo.dim(),
                found: hyper.dim(),
            });
        }
        if hypo.dim() < 2 {
            return Err(CodiffError::DimensionMismatch {
                expected: 2,
                found: hypo.dim(),
            });
        }
        Ok(Self {
            dim: hypo.dim() - 1,
            hypo,
            hyper,
        })
    }

    /// Codifferential of a constant.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            hypo: VPolytope::origin(dim + 1),
            hyper: VPolytope::origin(dim + 1),
        }
    }

    /// Codifferential of a differentiable function with the given gradient.
    pub fn linear(gradient: &[f64]) -> Self {
        let mut g = vec![0.0];
        g.extend_from_slice(gradient);
        Self {
            dim: gradient.len(),
            hypo: VPolytope::singleton(g),
            hyper: VPolytope::origin(gradient.len() + 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hypo(&self) -> &VPolytope {
        &self.hypo
    }

    pub fn hyper(&self) -> &VPolytope {
        &self.hyper
    }

    fn lift(dx: &[f64], lead: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(dx.len() + 1);
        g.push(lead);
        g.extend_from_slice(dx);
        g
    }

    /// `max_{(a, v) in hypo} (a + <v, dx>)`.
    pub fn phi(&self, dx: &[f64]) -> Result<f64, CodiffError> {
        self.check(dx.len())?;
        Ok(self.hypo.support(&Self::lift(dx, 1.0))?.value)
    }

    /// `min_{(b, w) in hyper} (b + <w, dx>)`.
    pub fn psi(&self, dx: &[f64]) -> Result<f64, CodiffError> {
        self.check(dx.len())?;
        let neg: Vec<f64> = dx.iter().map(|v| -v).collect();
        Ok(-self.hyper.support(&Self::lift(&neg, -1.0))?.value)
    }

    /// First-order model of `F(x + dx) - F(x)`.
    pub fn increment(&self, dx: &[f64]) -> Result<f64, CodiffError> {
        Ok(self.phi(dx)? + self.psi(dx)?)
    }

    fn check(&self, found: usize) -> Result<(), CodiffError> {
        if found != self.dim {
            Err(CodiffError::DimensionMismatch {
                expected: self.dim,
                found,
            })
        } else {
            Ok(())
        }
    }

    /// Codifferential of `-F`.
    pub fn negated(&self) -> Self {
        rule_scale(self, -1.0)
    }

    /// `max_hypo ||v|| + max_hyper ||w||`: a Lipschitz constant of `Phi + Psi`.
    pub fn lipschitz_bound(&self) -> f64 {
        let slope_norm = |p: &VPolytope| {
            p.points()
                .map(|c| dot(&c[1..], &c[1..]).sqrt())
                .fold(0.0, f64::max)
        };
        slope_norm(&self.hypo) + slope_norm(&self.hyper)
    }

    /// Moves the slope of a singleton set into the other set, preferring the
    /// hypo side, so smooth parts live in `hypo` and `hyper` is `{0}` when
    /// possible. Requires normalized offsets; `Phi + Psi` is unchanged.
    pub fn fold_singletons(self) -> Result<Self, CodiffError> {
        let zero = VPolytope::origin(self.dim + 1);
        let (hypo, hyper) = if self.hyper.len() == 1 && self.hyper.point(0)[0] == 0.0 {
            (self.hypo.translate(self.hyper.point(0))?, zero)
        } else if self.hypo.len() == 1 && self.hypo.point(0)[0] == 0.0 {
            (zero, self.hyper.translate(self.hypo.point(0))?)
        } else {
            return Ok(self);
        };
        Ok(Codifferential {
            dim: self.dim,
            hypo,
            hyper,
        })
    }

    /// Hypo vertices with offset within `tol_active` of zero.
    pub fn active_hypo(&self, tol_active: f64) -> VPolytope {
        self.hypo
            .filter(|p| p[0] >= -tol_active)
            .unwrap_or_else(|| self.hypo.clone())
    }

    /// Hyper vertices with offset within `tol_active` of zero.
    pub fn active_hyper(&self, tol_active: f64) -> VPolytope {
        self.hyper
            .filter(|p| p[0] <= tol_active)
            .unwrap_or_else(|| self.hyper.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct CodiffJson {
    dim: usize,
    hypo: Vec<Vec<f64>>,
    hyper: Vec<Vec<f64>>,
}

impl Serialize for Codifferential {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CodiffJson {
            dim: self.dim,
            hypo: self.hypo.to_vecs(),
            hyper: self.hyper.to_vecs(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Codifferential {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = CodiffJson::deserialize(d)?;
        let hypo = VPolytope::new(raw.dim + 1, raw.hypo).map_err(D::Error::custom)?;
        let hyper = VPolytope::new(raw.dim + 1, raw.hyper).map_err(D::Error::custom)?;
        Codifferential::from_parts(hypo, hyper).map_err(D::Error::custom)
    }
}

/// Output of [`normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub codiff: Codifferential,
    /// `max a` of the raw hypo set (subtracted from every hypo offset).
    pub hypo_shift: f64,
    /// `min b` of the raw hyper set (subtracted from every hyper offset).
    pub hyper_shift: f64,
}

impl Normalized {
    /// Largest offset correction applied to either set.
    pub fn drift(&self) -> f64 {
        self.hypo_shift.abs().max(self.hyper_shift.abs())
    }
}

/// Shifts a raw pair to `max a = 0`, `min b = 0` and prunes both sets.
///
/// When the raw pair satisfies `Phi(0) + Psi(0) = 0` the shifts cancel and
/// `Phi + Psi` is unchanged.
pub fn normalize(hypo: &VPolytope, hyper: &VPolytope) -> Result<Normalized, CodiffError> {
    let max_a = hypo.points().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_b = hyper.points().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let shift = |p: &VPolytope, by: f64| {
        let mut s = vec![0.0; p.dim()];
        s[0] = -by;
        p.translate(&s)
    };
    let hypo = shift(hypo, max_a)?.prune();
    let hyper = shift(hyper, min_b)?.prune();
    Ok(Normalized {
        codiff: Codifferential::from_parts(hypo, hyper)?,
        hypo_shift: max_a,
        hyper_shift: min_b,
    })
}

fn same_dim(a: &Codifferential, b: &Codifferential) -> Result<(), CodiffError> {
    if a.dim != b.dim {
        Err(CodiffError::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        })
    } else {
        Ok(())
    }
}

/// Codifferential of `F1 + F2`.
pub fn rule_sum(a: &Codifferential, b: &Codifferential) -> Result<Codifferential, CodiffError> {
    same_dim(a, b)?;
    Ok(Codifferential {
        dim: a.dim,
        hypo: a.hypo.minkowski_sum(&b.hypo)?,
        hyper: a.hyper.minkowski_sum(&b.hyper)?,
    })
}

/// Codifferential of `alpha F`; a negative factor swaps the two sets.
pub fn rule_scale(c: &Codifferential, alpha: f64) -> Codifferential {
    if alpha >= 0.0 {
        Codifferential {
            dim: c.dim,
            hypo: c.hypo.scale(alpha),
            hyper: c.hyper.scale(alpha),
        }
    } else {
        Codifferential {
            dim: c.dim,
            hypo: c.hyper.scale(alpha),
            hyper: c.hypo.scale(alpha),
        }
    }
}

/// Codifferential of `g(F_1, .., F_n)` for a C^1 outer map `g` with partial
/// derivatives `partials` at `(F_1(x), .., F_n(x))`.
pub fn rule_smooth_outer(
    partials: &[f64],
    children: &[&Codifferential],
) -> Result<Codifferential, CodiffError> {
    assert_eq!(partials.len(), children.len());
    let mut acc: Option<Codifferential> = None;
    for (&p, c) in partials.iter().zip(children) {
        let term = rule_scale(c, p);
        acc = Some(match acc {
            None => term,
            Some(a) => rule_sum(&a, &term)?,
        });
    }
    Ok(acc.expect("smooth outer map needs at least one argument"))
}

fn offset_shift(dim: usize, offset: f64) -> Vec<f64> {
    let mut s = vec![0.0; dim + 1];
    s[0] = offset;
    s
}

/// Minkowski sum of the hyper sets of every child except `skip`.
fn hyper_sum_except(
    children: &[(f64, &Codifferential)],
    skip: Option<usize>,
    sets: impl Fn(&Codifferential) -> &VPolytope,
) -> Result<VPolytope, CodiffError> {
    let dim = children[0].1.dim;
    let mut acc = VPolytope::origin(dim + 1);
    for (j, (_, c)) in children.iter().enumerate() {
        if Some(j) != skip {
            acc = acc.minkowski_sum(sets(c))?;
        }
    }
    Ok(acc)
}

/// Codifferential of `max_i F_i`, given `(F_i(x), codiff of F_i)`.
///
/// `hypo = U { (F_i(x) - F(x), 0) + U_i - sum_{j != i} V_j }`,
/// `hyper = sum_k V_k`.
pub fn rule_sup(children: &[(f64, &Codifferential)]) -> Result<Codifferential, CodiffError> {
    assert!(!children.is_empty());
    for (_, c) in &children[1..] {
        same_dim(children[0].1, c)?;
    }
    let dim = children[0].1.dim;
    let top = children.iter().map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    let mut hypo: Option<VPolytope> = None;
    for (i, (value, c)) in children.iter().enumerate() {
        let others = hyper_sum_except(children, Some(i), |c| &c.hyper)?.scale(-1.0);
        let part = c
            .hypo
            .minkowski_sum(&others)?
            .translate(&offset_shift(dim, value - top))?;
        hypo = Some(match hypo {
            None => part,
            Some(h) => h.union(&part)?,
        });
    }
    Ok(Codifferential {
        dim,
        hypo: hypo.expect("nonempty").prune(),
        hyper: hyper_sum_except(children, None, |c| &c.hyper)?,
    })
}

/// Codifferential of `min_i F_i`: the mirror of [`rule_sup`].
///
/// `hypo = sum_k U_k`,
/// `hyper = U { (F_i(x) - G(x), 0) + V_i - sum_{j != i} U_j }`.
pub fn rule_inf(children: &[(f64, &Codifferential)]) -> Result<Codifferential, CodiffError> {
    assert!(!children.is_empty());
    for (_, c) in &children[1..] {
        same_dim(children[0].1, c)?;
    }
    let dim = children[0].1.dim;
    let bottom = children.iter().map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
    let mut hyper: Option<VPolytope> = None;
    for (i, (value, c)) in children.iter().enumerate() {
        let others = hyper_sum_except(children, Some(i), |c| &c.hypo)?.scale(-1.0);
        let part = c
            .hyper
            .minkowski_sum(&others)?
            .translate(&offset_shift(dim, value - bottom))?;
        hyper = Some(match hyper {
            None => part,
            Some(h) => h.union(&part)?,
        });
    }
    Ok(Codifferential {
        dim,
        hypo: hyper_sum_except(children, None, |c| &c.hypo)?,
        hyper: hyper.expect("nonempty").prune(),
    })
}

/// Codifferential of `|u|` as `max(u, -u)`.
pub fn rule_abs(value: f64, c: &Codifferential) -> Result<Codifferential, CodiffError> {
    let neg = rule_scale(c, -1.0);
    rule_sup(&[(value, c), (-value, &neg)])
}

/// Codifferential of `T(y) = F(G(y))` for `G` differentiable at `y` with
/// Jacobian `jacobian` (`d_out x d_in`), given the codifferential of `F` at
/// `G(y)`. Every generator `(a, v)` becomes `(a, J^T v)`.
pub fn compose_inner(
    outer: &Codifferential,
    jacobian: &DMatrix<f64>,
) -> Result<Codifferential, CodiffError> {
    if jacobian.nrows() != outer.dim {
        return Err(CodiffError::DimensionMismatch {
            expected: outer.dim,
            found: jacobian.nrows(),
        });
    }
    if jacobian.iter().any(|v| !v.is_finite()) {
        return Err(PolytopeError::NonFinite { index: 0 }.into());
    }
    let d_in = jacobian.ncols();
    let map = |p: &VPolytope| -> Result<VPolytope, CodiffError> {
        Ok(p.map_points(|c| {
            let mut out = Vec::with_capacity(d_in + 1);
            out.push(c[0]);
            for j in 0..d_in {
                out.push((0..outer.dim).map(|i| jacobian[(i, j)] * c[1 + i]).sum());
            }
            out
        })?
        .prune())
    };
    Ok(Codifferential {
        dim: d_in,
        hypo: map(&outer.hypo)?,
        hyper: map(&outer.hyper)?,
    })
}

/// Codifferential of `e` at `x` with default tolerances.
pub fn codiff(e: &Expr, x: &[f64]) -> Result<Codifferential, CodiffError> {
    Calculus::new(Tolerances::default()).codiff(e, x)
}

/// Codifferential together with the function value at the point.
pub fn codiff_with_value(e: &Expr, x: &[f64]) -> Result<(f64, Codifferential), CodiffError> {
    Calculus::new(Tolerances::default()).evaluate(e, x)
}

/// One invocation of the recursive calculus; memoizes on node identity.
pub struct Calculus {
    tol: Tolerances,
    memo: HashMap<usize, (f64, Codifferential)>,
    values: HashMap<usize, f64>,
}

impl Calculus {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            memo: HashMap::new(),
            values: HashMap::new(),
        }
    }

    pub fn codiff(mut self, e: &Expr, x: &[f64]) -> Result<Codifferential, CodiffError> {
        Ok(self.node(e, x)?.1)
    }

    pub fn evaluate(mut self, e: &Expr, x: &[f64]) -> Result<(f64, Codifferential), CodiffError> {
        let needed = e.arity();
        if x.len() < needed {
            return Err(EvalError::DimensionMismatch {
                expected: needed,
                found: x.len(),
            }
            .into());
        }
        if x.is_empty() {
            return Err(CodiffError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        self.node(e, x)
    }

    fn node(&mut self, e: &Expr, x: &[f64]) -> Result<(f64, Codifferential), CodiffError> {
        if let Some(hit) = self.memo.get(&e.id()) {
            return Ok(hit.clone());
        }
        let d = x.len();
        let value = e.eval_memo(x, &mut self.values)?;
        let raw = match e.node() {
            Node::Const(_) => Codifferential::zero(d),
            Node::Var(i) => {
                let mut g = vec![0.0; d];
                g[*i] = 1.0;
                Codifferential::linear(&g)
            }
            Node::Add(a, b) => {
                let (_, ca) = self.node(a, x)?;
                let (_, cb) = self.node(b, x)?;
                rule_sum(&ca, &cb)?
            }
            Node::Neg(u) => rule_scale(&self.node(u, x)?.1, -1.0),
            Node::Mul(a, b) => {
                let (va, ca) = self.node(a, x)?;
                let (vb, cb) = self.node(b, x)?;
                rule_smooth_outer(&[vb, va], &[&ca, &cb])?
            }
            Node::Recip(u) => self.smooth_unary(u, x, |y| -1.0 / (y * y))?,
            Node::Pow(u, k) => {
                let k = *k;
                self.smooth_unary(u, x, move |y| k as f64 * y.powi(k - 1))?
            }
            Node::Exp(u) => self.smooth_unary(u, x, f64::exp)?,
            Node::Log(u) => self.smooth_unary(u, x, |y| 1.0 / y)?,
            Node::Sin(u) => self.smooth_unary(u, x, f64::cos)?,
            Node::Cos(u) => self.smooth_unary(u, x, |y| -y.sin())?,
            Node::Abs(u) => {
                let (vu, cu) = self.node(u, x)?;
                rule_abs(vu, &cu)?
            }
            Node::Max(cs) | Node::Min(cs) => {
                let mut kids = Vec::with_capacity(cs.len());
                for c in cs {
                    kids.push(self.node(c, x)?);
                }
                let refs: Vec<(f64, &Codifferential)> = kids.iter().map(|(v, c)| (*v, c)).collect();
                if matches!(e.node(), Node::Max(_)) {
                    rule_sup(&refs)?
                } else {
                    rule_inf(&refs)?
                }
            }
        };
        let normalized = normalize(&raw.hypo, &raw.hyper)?;
        let limit = self.tol.drift * (1.0 + value.abs());
        if normalized.drift() > limit {
            return Err(CodiffError::Drift {
                drift: normalized.drift(),
                limit,
                subexpr: e.to_string(),
            });
        }
        let out = (value, normalized.codiff.fold_singletons()?);
        self.memo.insert(e.id(), out.clone());
        Ok(out)
    }

    fn smooth_unary(
        &mut self,
        u: &Expr,
        x: &[f64],
        derivative: impl Fn(f64) -> f64,
    ) -> Result<Codifferential, CodiffError> {
        let (vu, cu) = self.node(u, x)?;
        rule_smooth_outer(&[derivative(vu)], &[&cu])
    }
}
