//! Codifferential descent with Armijo backtracking.
//!
//! At each iterate the codifferential is computed and, for every active
//! hyper vertex `w`, the minimum-norm point `z_w` of `conv(G) + {w}` is
//! found, where `G` holds the gradients of the hypo generators whose offset
//! is within an activity radius `eps` of zero. The vertex with the largest
//! `|z_w|` gives the steepest model decrease and the step is taken along
//! `-z_w`. Generators that are nearly active make the direction aware of
//! kinks close by, which avoids zigzagging across them; `eps` shrinks
//! towards the activity tolerance as the iterates settle, and the stop
//! test at that floor is exactly the unconstrained stationarity check.

mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codiff::{codiff_with_value, CodiffError, Codifferential};
use crate::config::Tolerances;
use crate::expr::{EvalError, Expr};
use crate::optimality::{check_min_unconstrained, OptimalityError, StationarityReport};
use crate::polytope::PolytopeError;

pub use suite::{benchmark, benchmark_suite, Benchmark};

/// Backtracking limit of the line search.
pub const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DescentError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Codiff(#[from] CodiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Optimality(#[from] OptimalityError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    /// Stop once every active hyper vertex has `|z_w| <= tol_stat`.
    pub tol_stat: f64,
    pub max_iters: usize,
    /// Sufficient-decrease factor `c` in `(0, 1)`.
    pub armijo: f64,
    /// Backtracking factor in `(0, 1)`.
    pub backtrack: f64,
    pub initial_step: f64,
    /// Seeds the tie-break between hyper vertices of equal merit.
    pub seed: u64,
    /// Initial activity radius: hypo generators with offset `>= -radius`
    /// contribute their gradients. Shrinks by 10 whenever the model
    /// decrease falls below it or the line search fails; 0 uses only the
    /// active generators throughout.
    pub activity_radius: f64,
    /// Project over the full hypo set in `R^{1+d}`, offsets included,
    /// instead of the radius-active gradients.
    pub use_offsets: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            tol_stat: 1e-7,
            max_iters: 1000,
            armijo: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            seed: 0,
            activity_radius: 0.1,
            use_offsets: false,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<(), DescentError> {
        let bad = |m: &str| Err(DescentError::BadConfig(m.to_string()));
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad("armijo factor must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial step must be positive");
        }
        if !(self.activity_radius >= 0.0 && self.activity_radius.is_finite()) {
            return bad("activity radius must be non-negative");
        }
        if self.tol_stat.is_nan() || self.tol_stat <= 0.0 {
            return bad("tol_stat must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub k: usize,
    pub x: Vec<f64>,
    pub f: f64,
    /// `max_w |z_w|` at `x`.
    pub viol: f64,
    /// Index of the chosen hyper vertex.
    pub vertex: usize,
    /// Accepted step length from `x` (0 on the last record).
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Stationary,
    IterCap,
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub iterates: Vec<Iterate>,
    pub status: Status,
    /// Unconstrained stationarity check at the last iterate.
    pub final_check: StationarityReport,
}

impl DescentTrace {
    pub fn last(&self) -> &Iterate {
        self.iterates.last().expect("trace has at least one iterate")
    }

    /// Number of accepted steps.
    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }
}

struct Choice {
    vertex: usize,
    norm: f64,
    direction: Vec<f64>,
}

/// Minimum-norm points of `H + {w}` for each active hyper vertex `w`, where
/// `H` holds the gradients of hypo generators with offset `>= -eps` (or the
/// full hypo set in `R^{1+d}` with `use_offsets`). Returns the vertex with
/// the largest `|z_w|`; ties are broken by `rng`.
fn steepest(
    c: &Codifferential,
    eps: f64,
    tol: &Tolerances,
    use_offsets: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Choice, DescentError> {
    let d = c.dim();
    let hypo = if use_offsets {
        c.hypo().clone()
    } else {
        c.active_hypo(eps)
    };
    let mut best: Option<Choice> = None;
    let mut ties = 0usize;
    for (j, w) in c.hyper().points().enumerate() {
        if w[0] > tol.active {
            continue;
        }
        let shifted = if use_offsets {
            let mut s = w.to_vec();
            s[0] = 0.0;
            hypo.translate(&s)?
        } else {
            hypo.map_points(|p| p[1..].iter().zip(&w[1..]).map(|(a, b)| a + b).collect())?
        };
        let proj = shifted.distance_to_hull(&vec![0.0; shifted.dim()], tol.geometric)?;
        let z = &proj.hull_point;
        let choice = Choice {
            vertex: j,
            norm: proj.distance,
            direction: z[z.len() - d..].iter().map(|v| -v).collect(),
        };
        match &best {
            Some(b) if choice.norm < b.norm * (1.0 - 1e-12) => {}
            Some(b) if choice.norm <= b.norm * (1.0 + 1e-12) => {
                ties += 1;
                if rng.gen_range(0..ties) == 0 {
                    best = Some(choice);
                }
            }
            _ => {
                best = Some(choice);
                ties = 1;
            }
        }
    }
    Ok(best.expect("normalized hyper set has an active vertex"))
}

/// Minimizes `e` from `x0`. Every accepted step satisfies
/// `F(x + t g) <= F(x) - c t |z|` with `g = -z / |z|`.
pub fn minimize(e: &Expr, x0: &[f64], cfg: &DescentConfig) -> Result<DescentTrace, DescentError> {
    minimize_with(e, x0, cfg, &Tolerances::default())
}

/// Armijo backtracking along `g`; returns the accepted step and point.
fn line_search(
    e: &Expr,
    x: &[f64],
    f: f64,
    g: &[f64],
    slope: f64,
    cfg: &DescentConfig,
) -> Option<(f64, Vec<f64>)> {
    let mut t = cfg.initial_step;
    for _ in 0..=MAX_BACKTRACKS {
        let trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + t * b).collect();
        if let Ok(ft) = e.eval(&trial) {
            if ft <= f - cfg.armijo * t * slope {
                return Some((t, trial));
            }
        }
        t *= cfg.backtrack;
    }
    None
}

pub fn minimize_with(
    e: &Expr,
    x0: &[f64],
    cfg: &DescentConfig,
    tol: &Tolerances,
) -> Result<DescentTrace, DescentError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x0.to_vec();
    let mut iterates = Vec::new();
    let mut status = Status::IterCap;
    let mut eps = cfg.activity_radius;
    'outer: for k in 0..=cfg.max_iters {
        let (f, c) = codiff_with_value(e, &x)?;
        let scaled = Tolerances {
            active: tol.active_at(f),
            ..*tol
        };
        let floor = scaled.active;
        loop {
            eps = eps.max(floor);
            let choice = steepest(&c, eps, &scaled, cfg.use_offsets, &mut rng)?;
            let at_floor = cfg.use_offsets || eps <= floor;
            if !at_floor && choice.norm <= eps {
                eps = (eps * 0.1).max(floor);
                continue;
            }
            let mut record = Iterate {
                k,
                x: x.clone(),
                f,
                viol: choice.norm,
                vertex: choice.vertex,
                step: 0.0,
            };
            if at_floor && choice.norm <= cfg.tol_stat {
                iterates.push(record);
                status = Status::Stationary;
                break 'outer;
            }
            if k == cfg.max_iters {
                iterates.push(record);
                break 'outer;
            }
            let gnorm = choice.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            let step = (gnorm > 0.0)
                .then(|| {
                    let g: Vec<f64> = choice.direction.iter().map(|v| v / gnorm).collect();
                    line_search(e, &x, f, &g, choice.norm, cfg)
                })
                .flatten();
            match step {
                Some((t, next)) => {
                    record.step = t;
                    iterates.push(record);
                    log::debug!("k={k} f={f:.6e} viol={:.3e} eps={eps:.1e} step={t:.3e}", choice.norm);
                    x = next;
                    continue 'outer;
                }
                None if !at_floor => {
                    eps = (eps * 0.1).max(floor);
                }
                None => {
                    iterates.push(record);
                    status = Status::LineSearchFailure;
                    log::info!("line search failed at k={k}, f={f:.6e}");
                    break 'outer;
                }
            }
        }
    }
    let (f, c) = codiff_with_value(e, &x)?;
    let final_check = check_min_unconstrained(
        &c,
        &Tolerances {
            active: tol.active_at(f),
            stationarity: cfg.tol_stat,
            ..*tol
        },
    )?;
    Ok(DescentTrace {
        iterates,
        status,
        final_check,
    })
}

/// Trace line `{"k":..,"x":[..],"f":..,"viol":..,"step":..}`.
#[derive(Serialize)]
pub struct TraceLine<'a> {
    pub k: usize,
    pub x: &'a [f64],
    pub f: f64,
    pub viol: f64,
    pub step: f64,
}

impl<'a> From<&'a Iterate> for TraceLine<'a> {
    fn from(it: &'a Iterate) -> Self {
        Self {
            k: it.k,
            x: &it.x,
            f: it.f,
            viol: it.viol,
            step: it.step,
        }
    }
}
