//! Nearest-point computations over `conv(P) + cone(R) + span(F)`.
//!
//! The hull part is handled by an away-step conditional-gradient iteration on
//! the simplex weights; the cone and subspace parts are eliminated exactly at
//! every iterate (orthogonal projection for the subspace, non-negative least
//! squares for the rays). The objective `1/2 dist(z - q, -(cone + span))^2`
//! has a 1-Lipschitz gradient in `z`, so the short step is always safe and
//! exact when the cone is empty.

use nalgebra::{DMatrix, DVector};

use super::VPolytope;

pub(crate) const MAX_ITERS: usize = 10_000;

/// Iterations between least-squares polishing attempts.
const POLISH_EVERY: usize = 32;

/// Stopping behaviour of the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Run until the distance is known within `tol`.
    Distance,
    /// Stop as soon as `dist <= tol` or `dist > tol` is certified.
    Membership,
}

#[derive(Clone, Debug)]
pub(crate) struct Outcome {
    /// Upper bound on the distance: norm of the final residual.
    pub dist: f64,
    /// Certified lower bound on the distance.
    pub lower: f64,
    pub weights: Vec<f64>,
    pub ray_weights: Vec<f64>,
    /// Nearest point of `conv(P)` found (without the cone part).
    pub hull_point: Vec<f64>,
    /// `hull_point + R mu + F nu - q`.
    pub residual: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Residual oracle for `y = z - q`: returns `y + R mu + F nu` at the optimal
/// `mu >= 0`, `nu` together with `mu`.
struct ConeResidual {
    /// Orthonormal basis of `span(F)`.
    basis: Vec<DVector<f64>>,
    /// Rays projected onto the orthogonal complement of `span(F)`, as columns.
    rays: Option<DMatrix<f64>>,
}

impl ConeResidual {
    fn new(dim: usize, rays: &[Vec<f64>], free: &[Vec<f64>]) -> Self {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for f in free {
            let mut v = DVector::from_column_slice(f);
            let scale = v.norm();
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
            // second pass for numerical orthogonality
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
            let n = v.norm();
            if n > 1e-12 * scale.max(1.0) {
                basis.push(v / n);
            }
        }
        let rays = if rays.is_empty() {
            None
        } else {
            let mut m = DMatrix::zeros(dim, rays.len());
            for (j, r) in rays.iter().enumerate() {
                let mut v = DVector::from_column_slice(r);
                for b in &basis {
                    let c = b.dot(&v);
                    v -= b * c;
                }
                m.set_column(j, &v);
            }
            Some(m)
        };
        Self { basis, rays }
    }

    fn is_trivial(&self) -> bool {
        self.basis.is_empty() && self.rays.is_none()
    }

    fn residual(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        if self.is_trivial() {
            return (y.to_vec(), Vec::new());
        }
        let mut v = DVector::from_column_slice(y);
        for b in &self.basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        match &self.rays {
            None => (v.as_slice().to_vec(), Vec::new()),
            Some(r) => {
                let mu = nnls(r, &(-&v));
                let res = v + r * &mu;
                (res.as_slice().to_vec(), mu.as_slice().to_vec())
            }
        }
    }
}

/// Lawson–Hanson non-negative least squares: `argmin ||A x - b||, x >= 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.norm().max(1.0) * b.norm().max(1.0);
    let eps = 1e-13 * scale;
    let mut outer = 0;
    loop {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > eps)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        passive[t] = true;
        outer += 1;
        if outer > 3 * n + 30 {
            break;
        }
        let mut inner = 0;
        loop {
            inner += 1;
            let s = passive_solve(a, b, &passive);
            let ok = (0..n).all(|j| !passive[j] || s[j] > 0.0);
            if ok || inner > 3 * n + 30 {
                x = s.map(|v| v.max(0.0));
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && s[j] <= 0.0 {
                    let denom = x[j] - s[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x = &x + (&s - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= eps {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}

fn passive_solve(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let mut out = DVector::zeros(passive.len());
    if idx.is_empty() {
        return out;
    }
    let sub = a.select_columns(idx.iter());
    let sol = least_squares(&sub, b);
    for (k, &j) in idx.iter().enumerate() {
        out[j] = sol[k];
    }
    out
}

/// Minimum-norm least-squares solution via SVD.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * 1e-12 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn project(
    poly: &VPolytope,
    rays: &[Vec<f64>],
    free: &[Vec<f64>],
    q: &[f64],
    tol: f64,
    mode: Mode,
) -> Outcome {
    let dim = poly.dim();
    let n = poly.len();
    let cone = ConeResidual::new(dim, rays, free);

    let radius = poly
        .points()
        .map(|p| norm2(&sub(p, q)).sqrt())
        .fold(0.0, f64::max);
    // Below this the gap is dominated by rounding in the inner products.
    let floor = 1e3 * f64::EPSILON * (radius * radius).max(f64::MIN_POSITIVE);

    let start = (0..n)
        .min_by(|&i, &j| {
            let di = norm2(&sub(poly.point(i), q));
            let dj = norm2(&sub(poly.point(j), q));
            di.total_cmp(&dj)
        })
        .unwrap_or(0);
    let mut weights = vec![0.0; n];
    weights[start] = 1.0;
    let mut z = poly.point(start).to_vec();

    let mut iterations = 0;
    let mut converged = false;
    let (mut res, mut mu) = cone.residual(&sub(&z, q));
    let mut lower = 0.0;

    while iterations < MAX_ITERS {
        let dist2 = norm2(&res);
        let upper = dist2.sqrt();

        let scores: Vec<f64> = poly.points().map(|p| dot(&res, p)).collect();
        let gz = dot(&res, &z);
        let (s, s_score) = argmin(&scores);
        let gap = (gz - s_score).max(0.0);
        lower = (dist2 - 2.0 * gap).max(0.0).sqrt();

        if upper <= tol || gap <= tol * tol {
            converged = true;
            break;
        }
        if mode == Mode::Membership && lower > tol {
            converged = true;
            break;
        }
        if gap <= floor {
            if let Some((w, zz, r, m)) = polish(poly, &cone, rays, free, &weights, &mu, q) {
                if norm2(&r) < dist2 {
                    weights = w;
                    z = zz;
                    res = r;
                    mu = m;
                }
            }
            lower = lower.min(norm2(&res).sqrt());
            converged = true;
            break;
        }

        // Away vertex among the current support.
        let mut away = None;
        for (i, &wi) in weights.iter().enumerate() {
            if wi > 0.0 && away.is_none_or(|(_, best)| scores[i] > best) {
                away = Some((i, scores[i]));
            }
        }
        let (v, v_score) = away.unwrap_or((s, s_score));
        let away_gap = v_score - gz;

        let (dir, gamma_max, fw) = if gap >= away_gap || weights[v] >= 1.0 {
            (sub(poly.point(s), &z), 1.0, true)
        } else {
            let lv = weights[v];
            (sub(&z, poly.point(v)), lv / (1.0 - lv), false)
        };
        let dd = norm2(&dir);
        if dd <= 0.0 {
            converged = true;
            break;
        }
        let gamma = (-dot(&res, &dir) / dd).clamp(0.0, gamma_max);
        if gamma <= 0.0 {
            converged = true;
            break;
        }
        if fw {
            for w in weights.iter_mut() {
                *w *= 1.0 - gamma;
            }
            weights[s] += gamma;
        } else {
            for w in weights.iter_mut() {
                *w *= 1.0 + gamma;
            }
            weights[v] -= gamma;
            if gamma >= gamma_max {
                weights[v] = 0.0;
            }
        }
        for w in weights.iter_mut() {
            if *w < 1e-300 {
                *w = 0.0;
            }
        }
        iterations += 1;
        if iterations % POLISH_EVERY == 0 {
            let r = cone.residual(&sub(&combine(poly, &weights), q));
            if let Some((w, zz, rr, m)) = polish(poly, &cone, rays, free, &weights, &r.1, q) {
                if norm2(&rr) < norm2(&r.0) {
                    weights = w;
                    z = zz;
                    res = rr;
                    mu = m;
                    continue;
                }
            }
        }
        if iterations % 64 == 0 {
            z = combine(poly, &weights);
        } else {
            for (zi, di) in z.iter_mut().zip(&dir) {
                *zi += gamma * di;
            }
        }
        let r = cone.residual(&sub(&z, q));
        res = r.0;
        mu = r.1;
    }

    if !converged {
        if let Some((w, zz, r, m)) = polish(poly, &cone, rays, free, &weights, &mu, q) {
            if norm2(&r) < norm2(&res) {
                weights = w;
                z = zz;
                res = r;
                mu = m;
            }
        }
    }

    if !converged {
        // The final polish may have closed the gap.
        let scores: Vec<f64> = poly.points().map(|p| dot(&res, p)).collect();
        let gap = (dot(&res, &z) - argmin(&scores).1).max(0.0);
        let dist2 = norm2(&res);
        lower = lower.max((dist2 - 2.0 * gap).max(0.0).sqrt());
        converged = dist2.sqrt() <= tol || gap <= (tol * tol).max(floor);
    }
    let dist = norm2(&res).sqrt();
    Outcome {
        dist,
        lower: lower.min(dist),
        weights,
        ray_weights: if rays.is_empty() { Vec::new() } else { mu },
        hull_point: z,
        residual: res,
        iterations,
        converged,
    }
}

fn argmin(scores: &[f64]) -> (usize, f64) {
    let mut best = (0, scores[0]);
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < best.1 {
            best = (i, s);
        }
    }
    best
}

fn combine(poly: &VPolytope, weights: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; poly.dim()];
    for (p, &w) in poly.points().zip(weights) {
        if w != 0.0 {
            for (zi, pi) in z.iter_mut().zip(p) {
                *zi += w * pi;
            }
        }
    }
    z
}

type Polished = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Wolfe's minor cycle on the current support: solve the affine
/// least-squares problem over the support points, the active rays and the
/// free directions, then move from the current weights towards its solution
/// as far as the weights stay nonnegative. Weights that reach zero leave the
/// support and the cycle repeats until a full step is feasible. The
/// objective never increases along the way.
fn polish(
    poly: &VPolytope,
    cone: &ConeResidual,
    rays: &[Vec<f64>],
    free: &[Vec<f64>],
    weights: &[f64],
    mu: &[f64],
    q: &[f64],
) -> Option<Polished> {
    let dim = poly.dim();
    let mut w = weights.to_vec();
    let mut m = mu.to_vec();
    let mut out = None;
    for _ in 0..=(w.len() + m.len()) {
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        let anchor = *support.first()?;
        let active_rays: Vec<usize> = (0..m.len()).filter(|&j| m[j] > 0.0).collect();
        let cols = support.len() - 1 + active_rays.len() + free.len();
        if cols == 0 {
            break;
        }
        let p0 = poly.point(anchor);
        let mut a = DMatrix::zeros(dim, cols);
        let mut c = 0;
        for &i in &support[1..] {
            a.set_column(c, &DVector::from_vec(sub(poly.point(i), p0)));
            c += 1;
        }
        for &j in &active_rays {
            a.set_column(c, &DVector::from_column_slice(&rays[j]));
            c += 1;
        }
        for f in free {
            a.set_column(c, &DVector::from_column_slice(f));
            c += 1;
        }
        let sol = least_squares(&a, &DVector::from_vec(sub(q, p0)));
        // Targets for the support weights (anchor last) and the active rays.
        let mut target: Vec<(usize, f64, f64)> = Vec::with_capacity(support.len());
        let mut rest = 0.0;
        for (k, &i) in support[1..].iter().enumerate() {
            target.push((i, w[i], sol[k]));
            rest += sol[k];
        }
        target.push((anchor, w[anchor], 1.0 - rest));
        let ray_target: Vec<(usize, f64, f64)> = active_rays
            .iter()
            .enumerate()
            .map(|(k, &j)| (j, m[j], sol[support.len() - 1 + k]))
            .collect();
        let mut theta = 1.0f64;
        for &(_, from, to) in target.iter().chain(&ray_target) {
            if to < 0.0 {
                theta = theta.min(from / (from - to));
            }
        }
        let theta = theta.clamp(0.0, 1.0);
        let mut next = vec![0.0; w.len()];
        for &(i, from, to) in &target {
            let v = from + theta * (to - from);
            next[i] = if v > 1e-15 { v } else { 0.0 };
        }
        let total: f64 = next.iter().sum();
        if total.is_nan() || total <= 0.0 {
            break;
        }
        next.iter_mut().for_each(|v| *v /= total);
        let z = combine(poly, &next);
        let (res, mu_next) = cone.residual(&sub(&z, q));
        w = next;
        m = if rays.is_empty() { Vec::new() } else { mu_next.clone() };
        out = Some((w.clone(), z, res, mu_next));
        if theta >= 1.0 {
            break;
        }
    }
    out
}
