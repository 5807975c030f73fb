//! Test-side oracles. Nothing here calls the crate's numeric kernels.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn axpy(x: &[f64], t: f64, g: &[f64]) -> Vec<f64> {
    x.iter().zip(g).map(|(a, b)| a + t * b).collect()
}

pub fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-3 {
            return v.iter().map(|c| c / n).collect();
        }
    }
}

/// Uniform sample of the closed ball of `radius`.
pub fn in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let u = unit_vector(rng, d);
    let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
    u.iter().map(|c| r * c).collect()
}

pub fn in_box(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-half..=half)).collect()
}

// ---------------------------------------------------------------------------
// Codifferentials as plain generator lists `(a, v_1, .., v_d)`.

pub type Gens = Vec<Vec<f64>>;

pub fn phi(gens: &[Vec<f64>], dx: &[f64]) -> f64 {
    gens.iter().map(|p| p[0] + dot(&p[1..], dx)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn psi(gens: &[Vec<f64>], dx: &[f64]) -> f64 {
    gens.iter().map(|p| p[0] + dot(&p[1..], dx)).fold(f64::INFINITY, f64::min)
}

/// Generator lists of a pair `(hypo, hyper)`.
#[derive(Clone, Debug)]
pub struct Pair {
    pub hypo: Gens,
    pub hyper: Gens,
}

impl Pair {
    pub fn increment(&self, dx: &[f64]) -> f64 {
        phi(&self.hypo, dx) + psi(&self.hyper, dx)
    }

    pub fn sum(&self, o: &Pair) -> Pair {
        Pair {
            hypo: minkowski(&self.hypo, &o.hypo),
            hyper: minkowski(&self.hyper, &o.hyper),
        }
    }

    pub fn scale(&self, alpha: f64) -> Pair {
        let s = |g: &Gens| g.iter().map(|p| p.iter().map(|c| alpha * c).collect()).collect();
        if alpha >= 0.0 {
            Pair { hypo: s(&self.hypo), hyper: s(&self.hyper) }
        } else {
            Pair { hypo: s(&self.hyper), hyper: s(&self.hypo) }
        }
    }

    /// `max_i F_i` from `(F_i(x), pair_i)`.
    pub fn sup(children: &[(f64, Pair)]) -> Pair {
        let top = children.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let dim = children[0].1.hypo[0].len();
        let mut hypo = Vec::new();
        for (i, (v, c)) in children.iter().enumerate() {
            let mut part = c.hypo.clone();
            for (j, (_, o)) in children.iter().enumerate() {
                if j != i {
                    part = minkowski(&part, &negate(&o.hyper));
                }
            }
            for p in &mut part {
                p[0] += v - top;
            }
            hypo.extend(part);
        }
        let mut hyper = vec![vec![0.0; dim]];
        for (_, c) in children {
            hyper = minkowski(&hyper, &c.hyper);
        }
        Pair { hypo, hyper }
    }

    pub fn abs(value: f64, c: &Pair) -> Pair {
        Pair::sup(&[(value, c.clone()), (-value, c.scale(-1.0))])
    }
}

pub fn minkowski(a: &[Vec<f64>], b: &[Vec<f64>]) -> Gens {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            out.push(add(p, q));
        }
    }
    out
}

pub fn negate(a: &[Vec<f64>]) -> Gens {
    a.iter().map(|p| p.iter().map(|c| -c).collect()).collect()
}

/// Every point of `a` lies within `tol` of a point of `b` and vice versa.
pub fn same_points(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
    let covered = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.iter().all(|p| y.iter().any(|q| p.iter().zip(q).all(|(s, t)| (s - t).abs() <= tol)))
    };
    covered(a, b) && covered(b, a)
}

// ---------------------------------------------------------------------------
// Geometry.

pub fn support(points: &[Vec<f64>], g: &[f64]) -> f64 {
    points.iter().map(|p| dot(p, g)).fold(f64::NEG_INFINITY, f64::max)
}

/// Distance from `q` to `conv(points)` by enumerating affinely independent
/// subsets of at most `d + 1` points and solving the equality-constrained
/// least-squares problem on each. Any candidate with nonnegative weights is a
/// point of the hull, so the minimum is exact up to rounding.
pub fn hull_distance(points: &[Vec<f64>], q: &[f64]) -> f64 {
    let n = points.len();
    assert!(n <= 12, "oracle enumerates subsets");
    let d = q.len();
    let y: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(q).map(|(a, b)| a - b).collect()).collect();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = idx.len();
        if k > d + 1 {
            continue;
        }
        let mut m = DMatrix::<f64>::zeros(k + 1, k + 1);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                m[(r, c)] = 2.0 * dot(&y[i], &y[j]);
            }
            m[(r, k)] = 1.0;
            m[(k, r)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(k + 1);
        rhs[k] = 1.0;
        let Some(sol) = m.lu().solve(&rhs) else { continue };
        if (0..k).any(|r| sol[r].is_nan() || sol[r] < -1e-12) {
            continue;
        }
        let mut z = vec![0.0; d];
        for (r, &i) in idx.iter().enumerate() {
            for (zc, yc) in z.iter_mut().zip(&y[i]) {
                *zc += sol[r] * yc;
            }
        }
        best = best.min(norm(&z));
    }
    best
}

// ---------------------------------------------------------------------------
// Finite differences and grids.

/// One-sided derivative `F'(x; g)` by differences at `1e-5` and `1e-6`,
/// extrapolated linearly to zero step.
pub fn fd_dir_deriv(f: impl Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) -> f64 {
    let f0 = f(x);
    let q = |a: f64| (f(&axpy(x, a, g)) - f0) / a;
    let (a1, a2) = (1e-5, 1e-6);
    let (d1, d2) = (q(a1), q(a2));
    (a1 * d2 - a2 * d1) / (a1 - a2)
}

/// Smallest value of `f` on a `(2n+1)^2` grid over `[-half, half]^2`,
/// restricted to points accepted by `feasible`.
pub fn grid_min(
    f: impl Fn(&[f64]) -> f64,
    feasible: impl Fn(&[f64]) -> bool,
    half: f64,
    n: i32,
) -> (f64, Vec<f64>) {
    let h = half / n as f64;
    let mut best = (f64::INFINITY, vec![]);
    for i in -n..=n {
        for j in -n..=n {
            let x = [i as f64 * h, j as f64 * h];
            if feasible(&x) {
                let v = f(&x);
                if v < best.0 {
                    best = (v, x.to_vec());
                }
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Random expressions with a direct evaluator.

#[derive(Clone, Debug)]
pub enum Tree {
    Const(f64),
    Var(usize),
    Add(Box<Tree>, Box<Tree>),
    Sub(Box<Tree>, Box<Tree>),
    Scale(f64, Box<Tree>),
    Mul(Box<Tree>, Box<Tree>),
    Neg(Box<Tree>),
    Abs(Box<Tree>),
    Max(Box<Tree>, Box<Tree>),
    Min(Box<Tree>, Box<Tree>),
    Sq(Box<Tree>),
    Sin(Box<Tree>),
    Cos(Box<Tree>),
    /// `exp(sin(t))`, bounded so random nesting stays finite.
    ExpSin(Box<Tree>),
    /// `1/(2 + abs(t))`, defined everywhere.
    RecipShift(Box<Tree>),
}

impl Tree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        use Tree::*;
        match self {
            Const(c) => *c,
            Var(i) => x[*i],
            Add(a, b) => a.eval(x) + b.eval(x),
            Sub(a, b) => a.eval(x) - b.eval(x),
            Scale(c, a) => c * a.eval(x),
            Mul(a, b) => a.eval(x) * b.eval(x),
            Neg(a) => -a.eval(x),
            Abs(a) => a.eval(x).abs(),
            Max(a, b) => a.eval(x).max(b.eval(x)),
            Min(a, b) => a.eval(x).min(b.eval(x)),
            Sq(a) => a.eval(x).powi(2),
            Sin(a) => a.eval(x).sin(),
            Cos(a) => a.eval(x).cos(),
            ExpSin(a) => a.eval(x).sin().exp(),
            RecipShift(a) => 1.0 / (2.0 + a.eval(x).abs()),
        }
    }

    pub fn text(&self) -> String {
        use Tree::*;
        match self {
            Const(c) => format!("({c:?})"),
            Var(i) => format!("x{}", i + 1),
            Add(a, b) => format!("({} + {})", a.text(), b.text()),
            Sub(a, b) => format!("({} - {})", a.text(), b.text()),
            Scale(c, a) => format!("({c:?} * {})", a.text()),
            Mul(a, b) => format!("({} * {})", a.text(), b.text()),
            Neg(a) => format!("(-{})", a.text()),
            Abs(a) => format!("abs({})", a.text()),
            Max(a, b) => format!("max({}, {})", a.text(), b.text()),
            Min(a, b) => format!("min({}, {})", a.text(), b.text()),
            Sq(a) => format!("({})^2", a.text()),
            Sin(a) => format!("sin({})", a.text()),
            Cos(a) => format!("cos({})", a.text()),
            ExpSin(a) => format!("exp(sin({}))", a.text()),
            RecipShift(a) => format!("1/(2 + abs({}))", a.text()),
        }
    }
}

fn leaf(dim: usize) -> impl Strategy<Value = Tree> {
    prop_oneof![
        (-3.0f64..3.0).prop_map(|c| Tree::Const((c * 4.0).round() / 4.0)),
        (0..dim).prop_map(Tree::Var),
        (0..dim).prop_map(Tree::Var),
    ]
}

/// Piecewise-linear trees: sums, constant multiples, negation, abs, max, min.
pub fn pl_tree(dim: usize) -> impl Strategy<Value = Tree> {
    leaf(dim).prop_recursive(4, 24, 2, |inner| {
        let b = |t| Box::new(t);
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Tree::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Tree::Sub(b(x), b(y))),
            ((-2.0f64..2.0), inner.clone()).prop_map(move |(c, x)| Tree::Scale((c * 4.0).round() / 4.0, b(x))),
            inner.clone().prop_map(move |x| Tree::Neg(b(x))),
            inner.clone().prop_map(move |x| Tree::Abs(b(x))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Tree::Max(b(x), b(y))),
            (inner.clone(), inner).prop_map(move |(x, y)| Tree::Min(b(x), b(y))),
        ]
    })
}

/// General piecewise-smooth trees, finite on all of `R^dim`.
pub fn tree(dim: usize) -> impl Strategy<Value = Tree> {
    leaf(dim).prop_recursive(3, 16, 2, |inner| {
        let b = |t| Box::new(t);
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Tree::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Tree::Sub(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Tree::Mul(b(x), b(y))),
            inner.clone().prop_map(move |x| Tree::Neg(b(x))),
            inner.clone().prop_map(move |x| Tree::Abs(b(x))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Tree::Max(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Tree::Min(b(x), b(y))),
            inner.clone().prop_map(move |x| Tree::Sq(b(x))),
            inner.clone().prop_map(move |x| Tree::Sin(b(x))),
            inner.clone().prop_map(move |x| Tree::Cos(b(x))),
            inner.clone().prop_map(move |x| Tree::ExpSin(b(x))),
            inner.prop_map(move |x| Tree::RecipShift(b(x))),
        ]
    })
}

pub fn point(dim: usize, half: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-half..half, dim)
}

/// Random point cloud: `n` points in `R^dim`, some duplicated or replaced by
/// convex combinations of others so pruning has work to do.
pub fn cloud(dim: usize, max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_n, any::<u64>()).prop_map(move |(n, seed)| {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_cloud(&mut rng, dim, n)
    })
}

pub fn random_cloud(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let roll: f64 = rng.gen();
        if pts.len() >= 2 && roll < 0.15 {
            let i = rng.gen_range(0..pts.len());
            pts.push(pts[i].clone());
        } else if pts.len() >= 2 && roll < 0.35 {
            let i = rng.gen_range(0..pts.len());
            let j = rng.gen_range(0..pts.len());
            let t: f64 = rng.gen();
            let p = pts[i].iter().zip(&pts[j]).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            pts.push(p);
        } else {
            pts.push((0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect());
        }
    }
    pts
}
