//! Signal temporal logic: abstract syntax, canonical printing and parsing.
//!
//! Concrete syntax:
//!
//! ```text
//! formula := or
//! or      := and ("|" and)*
//! and     := unary ("&" unary)*
//! unary   := "!" unary | ("F"|"G") "[" num "," (num|"inf") "]" unary
//!          | "(" formula ")" | pred
//! pred    := expr cmp expr
//! expr    := term (("+"|"-") term)*
//! term    := num "*" factor | factor
//! factor  := ident | num | "abs(" expr ")" | "max(" expr "," expr ")" | "(" expr ")"
//! ```
//!
//! `F` is eventually, `G` is always. Strict and non-strict comparators have
//! the same quantitative meaning.

mod parser;

use std::fmt;

pub use parser::parse;

/// Real-valued expression over trace channels, evaluated samplewise.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Channel(String),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Scale(f64, Box<Expr>),
    Abs(Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn channel(name: impl Into<String>) -> Self {
        Expr::Channel(name.into())
    }

    fn collect_channels<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Channel(n) => {
                if !out.contains(&n.as_str()) {
                    out.push(n);
                }
            }
            Expr::Const(_) => {}
            Expr::Scale(_, e) | Expr::Abs(e) => e.collect_channels(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Max(a, b) => {
                a.collect_channels(out);
                b.collect_channels(out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    /// True for `<` and `<=`: the margin is `rhs - lhs`.
    pub fn is_upper_bound(self) -> bool {
        matches!(self, Comparator::Lt | Comparator::Le)
    }
}

/// Time window `[start, end]` in hours relative to the evaluation time.
/// `end` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> crate::Result<Self> {
        if start < 0.0 || start.is_nan() {
            return Err(crate::Error::NegativeBound(start));
        }
        if end < 0.0 || end.is_nan() {
            return Err(crate::Error::NegativeBound(end));
        }
        if start > end {
            return Err(crate::Error::ReversedInterval { a: start, b: end });
        }
        Ok(Self { start, end })
    }

    pub fn unbounded() -> Self {
        Self {
            start: 0.0,
            end: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Predicate {
        lhs: Expr,
        cmp: Comparator,
        rhs: Expr,
    },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Always(Interval, Box<Formula>),
}

impl Formula {
    pub fn pred(lhs: Expr, cmp: Comparator, rhs: Expr) -> Self {
        Formula::Predicate { lhs, cmp, rhs }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn eventually(i: Interval, f: Formula) -> Self {
        Formula::Eventually(i, Box::new(f))
    }

    pub fn always(i: Interval, f: Formula) -> Self {
        Formula::Always(i, Box::new(f))
    }

    /// Channel names referenced anywhere in the formula, in first-use order.
    pub fn channels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_channels(&mut out);
        out
    }

    fn collect_channels<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Formula::Predicate { lhs, rhs, .. } => {
                lhs.collect_channels(out);
                rhs.collect_channels(out);
            }
            Formula::Not(f) | Formula::Eventually(_, f) | Formula::Always(_, f) => {
                f.collect_channels(out)
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.collect_channels(out);
                b.collect_channels(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Predicate { .. } => 1,
            Formula::Not(f) | Formula::Eventually(_, f) | Formula::Always(_, f) => 1 + f.depth(),
            Formula::And(a, b) | Formula::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }
}

/// Canonical text: binary expression nodes and boolean operands are fully
/// parenthesized, so the output parses back to the same tree.
pub fn format_ast(f: &Formula) -> String {
    f.to_string()
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Channel(n) => write!(f, "{n}"),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Scale(c, e) => write!(f, "({c} * {e})"),
            Expr::Abs(e) => write!(f, "abs({e})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.end.is_infinite() {
            write!(f, "[{}, inf]", self.start)
        } else {
            write!(f, "[{}, {}]", self.start, self.end)
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Predicate { lhs, cmp, rhs } => write!(f, "{lhs} {} {rhs}", cmp.symbol()),
            Formula::Not(g) => write!(f, "!({g})"),
            Formula::And(a, b) => write!(f, "({a}) & ({b})"),
            Formula::Or(a, b) => write!(f, "({a}) | ({b})"),
            Formula::Eventually(i, g) => write!(f, "F{i} ({g})"),
            Formula::Always(i, g) => write!(f, "G{i} ({g})"),
        }
    }
}
