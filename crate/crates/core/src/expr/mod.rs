//! Expression graphs over `x1..xd`.
//!
//! Nodes are reference counted, so a subexpression may be shared by several
//! parents; evaluation and differentiation memoize on node identity.

mod parser;

use std::collections::HashMap;
use std::fmt;
use std::ops;
use std::sync::Arc;

use thiserror::Error;

pub use parser::{parse, ParseError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("point has {found} coordinates, expression needs {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("domain error in {op}: argument {arg} in `{subexpr}`")]
    Domain {
        op: &'static str,
        arg: f64,
        subexpr: String,
    },
    #[error("non-finite value in `{subexpr}`")]
    NonFinite { subexpr: String },
}

#[derive(Debug)]
pub enum Node {
    Const(f64),
    /// Zero-based variable index; printed as `x{i+1}`.
    Var(usize),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Neg(Expr),
    Recip(Expr),
    /// Nonzero integer power.
    Pow(Expr, i32),
    Exp(Expr),
    Log(Expr),
    Sin(Expr),
    Cos(Expr),
    Abs(Expr),
    Max(Vec<Expr>),
    Min(Vec<Expr>),
}

/// Shared handle to an expression node.
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl Expr {
    fn wrap(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    /// Address of the node, stable for the lifetime of the graph.
    pub fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn constant(c: f64) -> Self {
        assert!(c.is_finite(), "constants must be finite");
        Self::wrap(Node::Const(c))
    }

    /// Variable `x{index + 1}`.
    pub fn var(index: usize) -> Self {
        Self::wrap(Node::Var(index))
    }

    pub fn recip(&self) -> Self {
        Self::wrap(Node::Recip(self.clone()))
    }

    pub fn powi(&self, k: i32) -> Self {
        assert!(k != 0, "zero power");
        Self::wrap(Node::Pow(self.clone(), k))
    }

    pub fn exp(&self) -> Self {
        Self::wrap(Node::Exp(self.clone()))
    }

    pub fn ln(&self) -> Self {
        Self::wrap(Node::Log(self.clone()))
    }

    pub fn sin(&self) -> Self {
        Self::wrap(Node::Sin(self.clone()))
    }

    pub fn cos(&self) -> Self {
        Self::wrap(Node::Cos(self.clone()))
    }

    pub fn abs(&self) -> Self {
        Self::wrap(Node::Abs(self.clone()))
    }

    pub fn max_of(children: Vec<Expr>) -> Self {
        assert!(children.len() >= 2, "max needs at least two arguments");
        Self::wrap(Node::Max(children))
    }

    pub fn min_of(children: Vec<Expr>) -> Self {
        assert!(children.len() >= 2, "min needs at least two arguments");
        Self::wrap(Node::Min(children))
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Var(_) => vec![],
            Node::Add(a, b) | Node::Mul(a, b) => vec![a, b],
            Node::Neg(u)
            | Node::Recip(u)
            | Node::Pow(u, _)
            | Node::Exp(u)
            | Node::Log(u)
            | Node::Sin(u)
            | Node::Cos(u)
            | Node::Abs(u) => vec![u],
            Node::Max(cs) | Node::Min(cs) => cs.iter().collect(),
        }
    }

    /// Number of variables referenced: one more than the largest index.
    pub fn arity(&self) -> usize {
        let mut seen = HashMap::new();
        self.arity_memo(&mut seen)
    }

    fn arity_memo(&self, seen: &mut HashMap<usize, usize>) -> usize {
        if let Some(&a) = seen.get(&self.id()) {
            return a;
        }
        let a = match self.node() {
            Node::Var(i) => i + 1,
            _ => self
                .children()
                .into_iter()
                .map(|c| c.arity_memo(seen))
                .max()
                .unwrap_or(0),
        };
        seen.insert(self.id(), a);
        a
    }

    /// True when no variable occurs below this node.
    pub fn is_constant(&self) -> bool {
        self.arity() == 0
    }

    /// True when the function is piecewise affine: built from variables and
    /// constants by sums, negation, abs/max/min and multiplication by
    /// variable-free factors.
    pub fn is_piecewise_linear(&self) -> bool {
        match self.node() {
            Node::Const(_) | Node::Var(_) => true,
            Node::Add(a, b) => a.is_piecewise_linear() && b.is_piecewise_linear(),
            Node::Mul(a, b) => {
                (a.is_constant() && b.is_piecewise_linear())
                    || (b.is_constant() && a.is_piecewise_linear())
            }
            Node::Neg(u) | Node::Abs(u) => u.is_piecewise_linear(),
            Node::Max(cs) | Node::Min(cs) => cs.iter().all(Expr::is_piecewise_linear),
            Node::Pow(u, 1) => u.is_piecewise_linear(),
            Node::Recip(u)
            | Node::Pow(u, _)
            | Node::Exp(u)
            | Node::Log(u)
            | Node::Sin(u)
            | Node::Cos(u) => u.is_constant(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let mut memo = HashMap::new();
        self.eval_memo(x, &mut memo)
    }

    pub(crate) fn eval_memo(
        &self,
        x: &[f64],
        memo: &mut HashMap<usize, f64>,
    ) -> Result<f64, EvalError> {
        let needed = self.arity();
        if x.len() < needed {
            return Err(EvalError::DimensionMismatch {
                expected: needed,
                found: x.len(),
            });
        }
        self.eval_node(x, memo)
    }

    fn eval_node(&self, x: &[f64], memo: &mut HashMap<usize, f64>) -> Result<f64, EvalError> {
        if let Some(&v) = memo.get(&self.id()) {
            return Ok(v);
        }
        let domain = |op, arg| EvalError::Domain {
            op,
            arg,
            subexpr: self.to_string(),
        };
        let v = match self.node() {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Add(a, b) => a.eval_node(x, memo)? + b.eval_node(x, memo)?,
            Node::Mul(a, b) => a.eval_node(x, memo)? * b.eval_node(x, memo)?,
            Node::Neg(u) => -u.eval_node(x, memo)?,
            Node::Recip(u) => {
                let y = u.eval_node(x, memo)?;
                if y == 0.0 {
                    return Err(domain("reciprocal", y));
                }
                1.0 / y
            }
            Node::Pow(u, k) => {
                let y = u.eval_node(x, memo)?;
                if *k < 0 && y == 0.0 {
                    return Err(domain("negative power", y));
                }
                y.powi(*k)
            }
            Node::Exp(u) => u.eval_node(x, memo)?.exp(),
            Node::Log(u) => {
                let y = u.eval_node(x, memo)?;
                if y <= 0.0 {
                    return Err(domain("log", y));
                }
                y.ln()
            }
            Node::Sin(u) => u.eval_node(x, memo)?.sin(),
            Node::Cos(u) => u.eval_node(x, memo)?.cos(),
            Node::Abs(u) => u.eval_node(x, memo)?.abs(),
            Node::Max(cs) => {
                let mut best = f64::NEG_INFINITY;
                for c in cs {
                    best = best.max(c.eval_node(x, memo)?);
                }
                best
            }
            Node::Min(cs) => {
                let mut best = f64::INFINITY;
                for c in cs {
                    best = best.min(c.eval_node(x, memo)?);
                }
                best
            }
        };
        if !v.is_finite() {
            return Err(EvalError::NonFinite {
                subexpr: self.to_string(),
            });
        }
        memo.insert(self.id(), v);
        Ok(v)
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized form accepted by [`parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, name: &str, cs: &[Expr]| {
            write!(f, "{name}(")?;
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{c}")?;
            }
            write!(f, ")")
        };
        match self.node() {
            Node::Const(c) if *c < 0.0 => write!(f, "({c:?})"),
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Neg(u) => write!(f, "(-{u})"),
            Node::Recip(u) => write!(f, "(1 / {u})"),
            Node::Pow(u, k) => write!(f, "({u}^{k})"),
            Node::Exp(u) => write!(f, "exp({u})"),
            Node::Log(u) => write!(f, "log({u})"),
            Node::Sin(u) => write!(f, "sin({u})"),
            Node::Cos(u) => write!(f, "cos({u})"),
            Node::Abs(u) => write!(f, "abs({u})"),
            Node::Max(cs) => list(f, "max", cs),
            Node::Min(cs) => list(f, "min", cs),
        }
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::wrap(Node::Add(self, rhs))
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        self + (-rhs)
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::wrap(Node::Mul(self, rhs))
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Expr) -> Expr {
        self * rhs.recip()
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::wrap(Node::Neg(self))
    }
}

impl ops::Mul<Expr> for f64 {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::constant(self) * rhs
    }
}
