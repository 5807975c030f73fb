//! Codifferential calculus for piecewise-smooth functions on `R^d`.
//!
//! A codifferential of `F` at `x` is a pair of finitely generated polytopes
//! `(hypo, hyper)` in `R^{1+d}` such that
//!
//! ```text
//! F(x + dx) - F(x) = max_{(a, v) in hypo} (a + <v, dx>) + min_{(b, w) in hyper} (b + <w, dx>) + o(dx)
//! ```
//!
//! The crate computes such pairs by structural recursion over an expression
//! graph ([`expr`], [`codiff`]), extracts directional derivatives and
//! quasidifferentials from them ([`analysis`]), checks necessary optimality
//! conditions ([`optimality`]) and minimizes by codifferential descent
//! ([`descent`]). All set arithmetic lives in [`polytope`].

pub mod analysis;
pub mod cli;
pub mod codiff;
pub mod descent;
pub mod expr;
pub mod json;
pub mod optimality;
pub mod polytope;

mod config;

pub use codiff::{codiff, Codifferential};
pub use config::Tolerances;
pub use expr::{parse, Expr};
pub use polytope::VPolytope;
