//! Quantitative (min/max) STL semantics over sampled traces, with
//! subgradients routed along the selected arg-extrema.

use crate::error::{Error, Result};
use crate::signal::{window_indices, Trace};
use crate::stl::{Expr, Formula};

/// One temporal-operator choice on the active evaluation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    /// Pre-order index of the temporal node in the formula tree.
    pub node: usize,
    /// Sample at which the operator was evaluated.
    pub at: usize,
    /// Sample its extremum was taken from (`None` for an empty window).
    pub selected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessResult {
    pub value: f64,
    /// `value > 0`; a zero margin counts as a violation.
    pub satisfied: bool,
    pub argpath: Vec<Selection>,
}

/// `∂ρ/∂s[channel][k]`, one row per trace channel in trace order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGradient {
    pub names: Vec<String>,
    pub partials: Vec<Vec<f64>>,
}

impl TraceGradient {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.partials[i].as_slice())
    }
}

/// Expression value at sample `k`.
pub fn eval_expr(e: &Expr, trace: &Trace, k: usize) -> Result<f64> {
    if k >= trace.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: trace.len(),
        });
    }
    let bound = BoundExpr::bind(e, trace)?;
    Ok(bound.eval(trace, k))
}

pub fn robustness_at(f: &Formula, trace: &Trace, k: usize) -> Result<RobustnessResult> {
    let tree = Evaluated::build(f, trace)?;
    if k >= trace.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: trace.len(),
        });
    }
    let value = tree.signal[k];
    let mut argpath = Vec::new();
    tree.route(k, 1.0, &mut |_, _, _| {}, &mut argpath, trace);
    Ok(RobustnessResult {
        value,
        satisfied: value > 0.0,
        argpath,
    })
}

/// Robustness at the start of the trace.
pub fn robustness(f: &Formula, trace: &Trace) -> Result<RobustnessResult> {
    robustness_at(f, trace, 0)
}

/// Robustness at the start of the trace together with its subgradient with
/// respect to every trace sample.
pub fn robustness_grad(f: &Formula, trace: &Trace) -> Result<(RobustnessResult, TraceGradient)> {
    let tree = Evaluated::build(f, trace)?;
    let value = tree.signal[0];
    let mut partials = vec![vec![0.0; trace.len()]; trace.names().len()];
    let mut argpath = Vec::new();
    tree.route(
        0,
        1.0,
        &mut |ch, k, w| partials[ch][k] += w,
        &mut argpath,
        trace,
    );
    Ok((
        RobustnessResult {
            value,
            satisfied: value > 0.0,
            argpath,
        },
        TraceGradient {
            names: trace.names().to_vec(),
            partials,
        },
    ))
}

/// Expression with channel names resolved to trace column indices.
#[derive(Debug, Clone)]
enum BoundExpr {
    Channel(usize),
    Const(f64),
    Add(Box<BoundExpr>, Box<BoundExpr>),
    Sub(Box<BoundExpr>, Box<BoundExpr>),
    Scale(f64, Box<BoundExpr>),
    Abs(Box<BoundExpr>),
    Max(Box<BoundExpr>, Box<BoundExpr>),
}

impl BoundExpr {
    fn bind(e: &Expr, trace: &Trace) -> Result<Self> {
        let b = |x: &Expr| Self::bind(x, trace).map(Box::new);
        Ok(match e {
            Expr::Channel(n) => BoundExpr::Channel(trace.channel_index(n)?),
            Expr::Const(c) => BoundExpr::Const(*c),
            Expr::Add(x, y) => BoundExpr::Add(b(x)?, b(y)?),
            Expr::Sub(x, y) => BoundExpr::Sub(b(x)?, b(y)?),
            Expr::Scale(c, x) => BoundExpr::Scale(*c, b(x)?),
            Expr::Abs(x) => BoundExpr::Abs(b(x)?),
            Expr::Max(x, y) => BoundExpr::Max(b(x)?, b(y)?),
        })
    }

    fn eval(&self, trace: &Trace, k: usize) -> f64 {
        match self {
            BoundExpr::Channel(i) => trace.channel_at(*i)[k],
            BoundExpr::Const(c) => *c,
            BoundExpr::Add(a, b) => a.eval(trace, k) + b.eval(trace, k),
            BoundExpr::Sub(a, b) => a.eval(trace, k) - b.eval(trace, k),
            BoundExpr::Scale(c, a) => c * a.eval(trace, k),
            BoundExpr::Abs(a) => a.eval(trace, k).abs(),
            BoundExpr::Max(a, b) => {
                let (x, y) = (a.eval(trace, k), b.eval(trace, k));
                if y > x {
                    y
                } else {
                    x
                }
            }
        }
    }

    /// Pushes `w · ∂e/∂s[ch][k]` for every channel, following the branch
    /// each `abs`/`max` took.
    fn backprop(&self, trace: &Trace, k: usize, w: f64, sink: &mut dyn FnMut(usize, usize, f64)) {
        match self {
            BoundExpr::Channel(i) => sink(*i, k, w),
            BoundExpr::Const(_) => {}
            BoundExpr::Add(a, b) => {
                a.backprop(trace, k, w, sink);
                b.backprop(trace, k, w, sink);
            }
            BoundExpr::Sub(a, b) => {
                a.backprop(trace, k, w, sink);
                b.backprop(trace, k, -w, sink);
            }
            BoundExpr::Scale(c, a) => a.backprop(trace, k, c * w, sink),
            BoundExpr::Abs(a) => {
                let sign = if a.eval(trace, k) < 0.0 { -1.0 } else { 1.0 };
                a.backprop(trace, k, sign * w, sink);
            }
            BoundExpr::Max(a, b) => {
                if b.eval(trace, k) > a.eval(trace, k) {
                    b.backprop(trace, k, w, sink);
                } else {
                    a.backprop(trace, k, w, sink);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

impl Extremum {
    fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Extremum::Min => candidate < incumbent,
            Extremum::Max => candidate > incumbent,
        }
    }

    fn identity(self) -> f64 {
        match self {
            Extremum::Min => f64::INFINITY,
            Extremum::Max => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug)]
enum Node {
    Predicate {
        upper: bool,
        lhs: BoundExpr,
        rhs: BoundExpr,
    },
    Not(Box<Evaluated>),
    Binary(Extremum, Box<Evaluated>, Box<Evaluated>),
    Temporal {
        id: usize,
        child: Box<Evaluated>,
        /// Selected sample per evaluation index (`None` for an empty window).
        choice: Vec<Option<usize>>,
    },
}

/// Formula tree annotated with its robustness signal at every sample.
#[derive(Debug)]
struct Evaluated {
    node: Node,
    signal: Vec<f64>,
}

impl Evaluated {
    fn build(f: &Formula, trace: &Trace) -> Result<Self> {
        let mut next_id = 0;
        Self::build_inner(f, trace, &mut next_id)
    }

    fn build_inner(f: &Formula, trace: &Trace, next_id: &mut usize) -> Result<Self> {
        let id = *next_id;
        *next_id += 1;
        let n = trace.len();
        Ok(match f {
            Formula::Predicate { lhs, cmp, rhs } => {
                let lhs = BoundExpr::bind(lhs, trace)?;
                let rhs = BoundExpr::bind(rhs, trace)?;
                let upper = cmp.is_upper_bound();
                let signal = (0..n)
                    .map(|k| {
                        let (l, r) = (lhs.eval(trace, k), rhs.eval(trace, k));
                        if upper {
                            r - l
                        } else {
                            l - r
                        }
                    })
                    .collect();
                Evaluated {
                    node: Node::Predicate {
                        upper,
                        lhs,
                        rhs,
                    },
                    signal,
                }
            }
            Formula::Not(g) => {
                let child = Self::build_inner(g, trace, next_id)?;
                let signal = child.signal.iter().map(|v| -v).collect();
                Evaluated {
                    node: Node::Not(Box::new(child)),
                    signal,
                }
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                let op = if matches!(f, Formula::And(..)) {
                    Extremum::Min
                } else {
                    Extremum::Max
                };
                let a = Self::build_inner(a, trace, next_id)?;
                let b = Self::build_inner(b, trace, next_id)?;
                let signal = a
                    .signal
                    .iter()
                    .zip(&b.signal)
                    .map(|(&x, &y)| if op.better(y, x) { y } else { x })
                    .collect();
                Evaluated {
                    node: Node::Binary(op, Box::new(a), Box::new(b)),
                    signal,
                }
            }
            Formula::Eventually(iv, g) | Formula::Always(iv, g) => {
                let op = if matches!(f, Formula::Eventually(..)) {
                    Extremum::Max
                } else {
                    Extremum::Min
                };
                let child = Self::build_inner(g, trace, next_id)?;
                let mut signal = Vec::with_capacity(n);
                let mut choice = Vec::with_capacity(n);
                for k in 0..n {
                    let window = window_indices(trace.grid(), k, iv.start, iv.end)?;
                    let mut best = op.identity();
                    let mut arg = None;
                    for j in window {
                        let v = child.signal[j];
                        if arg.is_none() || op.better(v, best) {
                            best = v;
                            arg = Some(j);
                        }
                    }
                    signal.push(best);
                    choice.push(arg);
                }
                Evaluated {
                    node: Node::Temporal {
                        id,
                        child: Box::new(child),
                        choice,
                    },
                    signal,
                }
            }
        })
    }

    /// Routes weight `w` from this node at sample `k` down to trace samples.
    fn route(
        &self,
        k: usize,
        w: f64,
        sink: &mut dyn FnMut(usize, usize, f64),
        path: &mut Vec<Selection>,
        trace: &Trace,
    ) {
        match &self.node {
            Node::Predicate { upper, lhs, rhs } => {
                let (wl, wr) = if *upper { (-w, w) } else { (w, -w) };
                lhs.backprop(trace, k, wl, sink);
                rhs.backprop(trace, k, wr, sink);
            }
            Node::Not(child) => child.route(k, -w, sink, path, trace),
            Node::Binary(op, a, b) => {
                if op.better(b.signal[k], a.signal[k]) {
                    b.route(k, w, sink, path, trace)
                } else {
                    a.route(k, w, sink, path, trace)
                }
            }
            Node::Temporal {
                id, child, choice, ..
            } => {
                path.push(Selection {
                    node: *id,
                    at: k,
                    selected: choice[k],
                });
                if let Some(j) = choice[k] {
                    child.route(j, w, sink, path, trace);
                }
            }
        }
    }
}
