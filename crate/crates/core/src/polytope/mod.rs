//! Finitely generated convex polytopes in vertex representation.
//!
//! A [`VPolytope`] is a nonempty list of points standing for their convex
//! hull. Every set operation of the calculus (Minkowski sums, unions,
//! scalings) acts directly on the vertex lists; [`VPolytope::prune`] drops
//! generators that lie in the hull of the others.

mod projection;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub(crate) use projection::least_squares;
use projection::{project, Mode, Outcome};

/// Default tolerance of the geometric predicates.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolytopeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("polytope must have at least one point")]
    Empty,
    #[error("polytope dimension must be at least 1")]
    ZeroDimension,
    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("projection did not converge after {iterations} iterations (distance in [{lower}, {upper}])")]
    NotConverged {
        iterations: usize,
        lower: f64,
        upper: f64,
    },
}

/// An affine generator `dx -> offset + <slope, dx>`, stored in polytopes as
/// the point `(offset, slope...)` of `R^{1+d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePoint {
    pub offset: f64,
    pub slope: Vec<f64>,
}

impl AffinePoint {
    pub fn new(offset: f64, slope: Vec<f64>) -> Self {
        Self { offset, slope }
    }

    pub fn from_coords(coords: &[f64]) -> Self {
        Self {
            offset: coords[0],
            slope: coords[1..].to_vec(),
        }
    }

    pub fn to_coords(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(1 + self.slope.len());
        c.push(self.offset);
        c.extend_from_slice(&self.slope);
        c
    }

    pub fn eval(&self, dx: &[f64]) -> f64 {
        self.offset + dot(&self.slope, dx)
    }
}

/// Result of a support-function evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub value: f64,
    /// Index of the first vertex attaining the maximum.
    pub index: usize,
}

/// Nearest point of `conv(P) + cone(rays)` to a query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub distance: f64,
    /// Convex-combination weights over the polytope's vertices.
    pub weights: Vec<f64>,
    /// Non-negative ray multipliers (empty without rays).
    pub ray_weights: Vec<f64>,
    /// Nearest point of the hull part, `sum_i weights_i p_i`.
    pub hull_point: Vec<f64>,
    /// `hull_point + sum_j ray_weights_j r_j (+ span part) - q`.
    pub residual: Vec<f64>,
    pub iterations: usize,
}

impl Projection {
    fn from_outcome(out: Outcome) -> Result<Self, PolytopeError> {
        if !out.converged {
            return Err(PolytopeError::NotConverged {
                iterations: out.iterations,
                lower: out.lower,
                upper: out.dist,
            });
        }
        Ok(Self {
            distance: out.dist,
            weights: out.weights,
            ray_weights: out.ray_weights,
            hull_point: out.hull_point,
            residual: out.residual,
            iterations: out.iterations,
        })
    }
}

/// A nonempty finite point set standing for its convex hull.
#[derive(Clone, PartialEq)]
pub struct VPolytope {
    dim: usize,
    coords: Vec<f64>,
}

impl fmt::Debug for VPolytope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.points()).finish()
    }
}

impl VPolytope {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self, PolytopeError> {
        if dim == 0 {
            return Err(PolytopeError::ZeroDimension);
        }
        if points.is_empty() {
            return Err(PolytopeError::Empty);
        }
        let mut coords = Vec::with_capacity(dim * points.len());
        for (index, p) in points.into_iter().enumerate() {
            if p.len() != dim {
                return Err(PolytopeError::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(PolytopeError::NonFinite { index });
            }
            coords.extend(p);
        }
        Ok(Self { dim, coords })
    }

    /// Builds from a list of points whose common length is the dimension.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self, PolytopeError> {
        let dim = points.first().map(Vec::len).ok_or(PolytopeError::Empty)?;
        Self::new(dim, points)
    }

    pub fn from_affine(points: &[AffinePoint]) -> Result<Self, PolytopeError> {
        Self::from_points(points.iter().map(AffinePoint::to_coords).collect())
    }

    pub fn singleton(point: Vec<f64>) -> Self {
        Self::from_points(vec![point]).expect("singleton must be a finite nonempty point")
    }

    pub fn origin(dim: usize) -> Self {
        Self::singleton(vec![0.0; dim])
    }

    // Internal constructor for points already known to be valid.
    fn from_flat(dim: usize, coords: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && !coords.is_empty() && coords.len().is_multiple_of(dim));
        Self { dim, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false; kept for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    pub fn affine_points(&self) -> Vec<AffinePoint> {
        self.points().map(AffinePoint::from_coords).collect()
    }

    fn check_dim(&self, found: usize) -> Result<(), PolytopeError> {
        if found != self.dim {
            Err(PolytopeError::DimensionMismatch {
                expected: self.dim,
                found,
            })
        } else {
            Ok(())
        }
    }

    /// Pruned vertex set of `{p + q}`.
    pub fn minkowski_sum(&self, other: &VPolytope) -> Result<VPolytope, PolytopeError> {
        self.check_dim(other.dim)?;
        let mut coords = Vec::with_capacity(self.len() * other.len() * self.dim);
        for p in self.points() {
            for q in other.points() {
                coords.extend(p.iter().zip(q).map(|(a, b)| a + b));
            }
        }
        Ok(VPolytope::from_flat(self.dim, coords).prune())
    }

    /// Multiplies every vertex by `alpha`; `alpha = 0` gives the origin.
    pub fn scale(&self, alpha: f64) -> VPolytope {
        if alpha == 0.0 {
            return VPolytope::origin(self.dim);
        }
        VPolytope::from_flat(self.dim, self.coords.iter().map(|c| alpha * c).collect())
    }

    /// Adds `shift` to every vertex.
    pub fn translate(&self, shift: &[f64]) -> Result<VPolytope, PolytopeError> {
        self.check_dim(shift.len())?;
        let coords = self
            .points()
            .flat_map(|p| p.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        Ok(VPolytope::from_flat(self.dim, coords))
    }

    /// Vertex list of `conv(P ∪ Q)` before pruning.
    pub fn union(&self, other: &VPolytope) -> Result<VPolytope, PolytopeError> {
        self.check_dim(other.dim)?;
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(VPolytope::from_flat(self.dim, coords))
    }

    /// Keeps the vertices satisfying `keep`; `None` if nothing survives.
    pub fn filter(&self, mut keep: impl FnMut(&[f64]) -> bool) -> Option<VPolytope> {
        let coords: Vec<f64> = self
            .points()
            .filter(|p| keep(p))
            .flatten()
            .copied()
            .collect();
        (!coords.is_empty()).then(|| VPolytope::from_flat(self.dim, coords))
    }

    /// Applies a map to every vertex; the output dimension may differ.
    pub fn map_points(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<VPolytope, PolytopeError> {
        VPolytope::from_points(self.points().map(&mut f).collect())
    }

    /// Extreme points of the hull at the default tolerance.
    pub fn prune(&self) -> VPolytope {
        self.prune_with_tol(DEFAULT_TOL)
    }

    /// Drops every vertex within `tol * (1 + max |coord|)` of the hull of the
    /// remaining ones. Survivors keep their relative order.
    pub fn prune_with_tol(&self, tol: f64) -> VPolytope {
        let n = self.len();
        if n <= 1 {
            return self.clone();
        }
        let scale = self.coords.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let tol = tol * (1.0 + scale);

        // A strict unique maximizer of some coordinate is extreme; skip its test.
        let mut extreme = vec![false; n];
        for k in 0..self.dim {
            for sign in [1.0, -1.0] {
                let mut best = 0;
                let mut second = f64::NEG_INFINITY;
                for i in 1..n {
                    let v = sign * self.point(i)[k];
                    let b = sign * self.point(best)[k];
                    if v > b {
                        second = b;
                        best = i;
                    } else if v > second {
                        second = v;
                    }
                }
                if sign * self.point(best)[k] - second > tol {
                    extreme[best] = true;
                }
            }
        }

        let mut alive = vec![true; n];
        for i in 0..n {
            if extreme[i] {
                continue;
            }
            let others: Vec<f64> = (0..n)
                .filter(|&j| j != i && alive[j])
                .flat_map(|j| self.point(j).iter().copied())
                .collect();
            if others.is_empty() {
                continue;
            }
            let rest = VPolytope::from_flat(self.dim, others);
            let out = project(&rest, &[], &[], self.point(i), tol, Mode::Membership);
            if out.dist <= tol {
                alive[i] = false;
            }
        }
        let coords = (0..n)
            .filter(|&i| alive[i])
            .flat_map(|i| self.point(i).iter().copied())
            .collect();
        VPolytope::from_flat(self.dim, coords)
    }

    /// `max_p <p, g>` with the lowest-index maximizer.
    pub fn support(&self, g: &[f64]) -> Result<Support, PolytopeError> {
        self.check_dim(g.len())?;
        let mut best = Support {
            value: dot(self.point(0), g),
            index: 0,
        };
        for (i, p) in self.points().enumerate().skip(1) {
            let v = dot(p, g);
            if v > best.value {
                best = Support { value: v, index: i };
            }
        }
        Ok(best)
    }

    /// Euclidean distance from `q` to the hull, within `tol`.
    pub fn distance_to_hull(&self, q: &[f64], tol: f64) -> Result<Projection, PolytopeError> {
        self.distance_to_hull_plus_cone(&[], q, tol)
    }

    /// Distance from `q` to `conv(P) + cone(rays)`, within `tol`.
    pub fn distance_to_hull_plus_cone(
        &self,
        rays: &[Vec<f64>],
        q: &[f64],
        tol: f64,
    ) -> Result<Projection, PolytopeError> {
        self.distance_to_hull_cone_span(rays, &[], q, tol)
    }

    /// Distance from `q` to `conv(P) + cone(rays) + span(free)`, within `tol`.
    pub fn distance_to_hull_cone_span(
        &self,
        rays: &[Vec<f64>],
        free: &[Vec<f64>],
        q: &[f64],
        tol: f64,
    ) -> Result<Projection, PolytopeError> {
        if tol.is_nan() || tol <= 0.0 {
            return Err(PolytopeError::BadTolerance(tol));
        }
        self.check_dim(q.len())?;
        for r in rays.iter().chain(free) {
            self.check_dim(r.len())?;
        }
        Projection::from_outcome(project(self, rays, free, q, tol, Mode::Distance))
    }

    /// Hausdorff distance between the two hulls.
    pub fn hausdorff_distance(&self, other: &VPolytope) -> Result<f64, PolytopeError> {
        self.check_dim(other.dim)?;
        let one_sided = |a: &VPolytope, b: &VPolytope| -> Result<f64, PolytopeError> {
            let mut worst = 0.0f64;
            for p in a.points() {
                worst = worst.max(b.distance_to_hull(p, DEFAULT_TOL)?.distance);
            }
            Ok(worst)
        };
        Ok(one_sided(self, other)?.max(one_sided(other, self)?))
    }

    pub fn max_norm(&self) -> f64 {
        self.points().map(|p| dot(p, p).sqrt()).fold(0.0, f64::max)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Serialize, Deserialize)]
struct PolytopeJson {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl Serialize for VPolytope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolytopeJson {
            dim: self.dim,
            points: self.to_vecs(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for VPolytope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = PolytopeJson::deserialize(d)?;
        VPolytope::new(raw.dim, raw.points).map_err(serde::de::Error::custom)
    }
}
