//! Hinge robustness loss, AdaBelief, and the training loop.
//!
//! Each iteration simulates every condition with plain floats to get its
//! robustness. Only conditions with `ρ ≤ 0` contribute to the loss
//! `Σ max(0, −ρ)`, so only those are re-simulated with dual numbers to get
//! `∂ρ/∂θ`. The update happens in log space, `θ̃ = ln(θ + 1e-5)`, which
//! keeps every rate above `−1e-5`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{from_logspace, init_params, to_logspace, BnnParams, LOG_OFFSET};
use crate::error::{Error, Result};
use crate::experiments::{channel_values, Channels, ControlMode, ExperimentConfig, Problem, Split};
use crate::grad::{lift_params, Scalar};
use crate::robustness::robustness_grad;
use crate::stl::Formula;
use crate::signal::TimeGrid;
use crate::with_tangent_width;

/// Environment variable capping the worker threads used per iteration.
pub const THREADS_ENV: &str = "STLBNN_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Halve the learning rate after every this many iterations.
    pub halve_every: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            learning_rate: 0.05,
            halve_every: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-16,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("optimizer: {m}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps >= 0.0) {
            return bad("eps must be non-negative");
        }
        if self.halve_every == Some(0) {
            return bad("halve_every must be positive");
        }
        Ok(())
    }

    /// Learning rate for 0-based iteration `i`.
    pub fn rate_at(&self, i: usize) -> f64 {
        match self.halve_every {
            Some(n) => self.learning_rate * 0.5f64.powi((i / n) as i32),
            None => self.learning_rate,
        }
    }
}

/// `Σ max(0, −ρ)`.
pub fn hinge_loss(rhos: &[f64]) -> f64 {
    rhos.iter().map(|&r| (-r).max(0.0)).sum()
}

/// AdaBelief moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            s: vec![0.0; dim],
            t: 0,
        }
    }

    /// One update of `params` along `grad` with step size `lr`.
    pub fn step(&mut self, cfg: &OptimizerConfig, lr: f64, grad: &[f64], params: &mut [f64]) -> Result<()> {
        if grad.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: grad.len().min(params.len()),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} is {}", grad[i])));
        }
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            let dev = g - self.m[i];
            self.s[i] = b2 * self.s[i] + (1.0 - b2) * dev * dev + cfg.eps;
            let m_hat = self.m[i] / c1;
            let s_hat = self.s[i] / c2;
            params[i] -= lr * m_hat / (s_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

/// Worker count from [`THREADS_ENV`], defaulting to the available cores.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Robustness of every condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rhos: Vec<f64>,
    /// Fraction of conditions with `ρ > 0`.
    pub satisfaction: f64,
}

impl Evaluation {
    fn from_rhos(rhos: Vec<f64>) -> Self {
        let sat = rhos.iter().filter(|&&r| r > 0.0).count() as f64 / rhos.len().max(1) as f64;
        Self {
            rhos,
            satisfaction: sat,
        }
    }

    pub fn loss(&self) -> f64 {
        hinge_loss(&self.rhos)
    }

    pub fn mean_rho(&self) -> f64 {
        self.rhos.iter().sum::<f64>() / self.rhos.len().max(1) as f64
    }
}

fn rho_of(problem: &Problem, c: usize, channels: &Channels<f64>) -> Result<f64> {
    let trace = channel_values(channels, &problem.grid, &problem.formula.channels())?;
    Ok(crate::robustness::robustness(&problem.formula, &trace)
        .map_err(|e| e.in_condition(c))?
        .value)
}

/// Robustness of every condition of `problem` under `params`.
pub fn eval_satisfaction(params: &BnnParams, problem: &Problem, mode: ControlMode) -> Result<Evaluation> {
    let pool = pool()?;
    evaluate_in(&pool, params, problem, mode)
}

fn evaluate_in(pool: &rayon::ThreadPool, params: &BnnParams, problem: &Problem, mode: ControlMode) -> Result<Evaluation> {
    let net = params.network();
    let rhos = pool.install(|| {
        (0..problem.len())
            .into_par_iter()
            .map(|c| {
                let ch = problem.simulate(c, &net, mode)?;
                rho_of(problem, c, &ch)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    if let Some(c) = rhos.iter().position(|r| r.is_nan()) {
        return Err(Error::NonFinite(format!("robustness of condition {c}")));
    }
    Ok(Evaluation::from_rhos(rhos))
}

/// `∂ρ/∂θ` from dual-valued channels: robustness selects samples, and the
/// tangents of those samples carry the parameter sensitivities.
fn rho_gradient<S: Scalar>(formula: &Formula, grid: &TimeGrid, ch: &Channels<S>, n: usize) -> Result<(f64, Vec<f64>)> {
    let trace = channel_values(ch, grid, &formula.channels())?;
    let (res, tg) = robustness_grad(formula, &trace)?;
    let mut g = vec![0.0; n];
    for (name, partials) in tg.names.iter().zip(&tg.partials) {
        let series = &ch
            .iter()
            .find(|(n, _)| n == name)
            .expect("gradient channels come from the trace")
            .1;
        for (k, &w) in partials.iter().enumerate() {
            if w != 0.0 {
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi += w * series[k].part(i + 1);
                }
            }
        }
    }
    Ok((res.value, g))
}

/// Robustness of condition `c` and its gradient with respect to the
/// trainable vector `theta`.
pub fn condition_gradient(
    problem: &Problem,
    params: &BnnParams,
    theta: &[f64],
    train_globals: bool,
    c: usize,
    mode: ControlMode,
) -> Result<(f64, Vec<f64>)> {
    let n = theta.len();
    with_tangent_width!(n, N => {
        let lifted = lift_params::<N>(theta);
        let net = params.network_with(&lifted, train_globals)?;
        let ch = problem.simulate(c, &net, mode)?;
        rho_gradient(&problem.formula, &problem.grid, &ch, n).map_err(|e| e.in_condition(c))?
    })
    .ok_or_else(|| Error::Config(format!("{n} trainable parameters exceed the supported 64")))
}

/// Loss and `∂L/∂θ` over the whole condition set.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub eval: Evaluation,
    pub grad: Vec<f64>,
}

fn loss_gradient_in(
    pool: &rayon::ThreadPool,
    problem: &Problem,
    params: &BnnParams,
    train_globals: bool,
) -> Result<LossGradient> {
    let eval = evaluate_in(pool, params, problem, ControlMode::Closed)?;
    let theta = params.trainable(train_globals);
    let violated: Vec<usize> = (0..problem.len()).filter(|&c| eval.rhos[c] <= 0.0).collect();
    let grads = pool.install(|| {
        violated
            .par_iter()
            .map(|&c| condition_gradient(problem, params, &theta, train_globals, c, ControlMode::Closed).map(|r| r.1))
            .collect::<Result<Vec<Vec<f64>>>>()
    })?;
    // Fixed summation order keeps runs bit-reproducible.
    let mut grad = vec![0.0; theta.len()];
    for g in &grads {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc -= v;
        }
    }
    Ok(LossGradient { eval, grad })
}

/// Hinge loss over `problem` and its gradient with respect to the
/// trainable parameters.
pub fn loss_gradient(problem: &Problem, params: &BnnParams, train_globals: bool) -> Result<LossGradient> {
    loss_gradient_in(&pool()?, problem, params, train_globals)
}

/// Chain rule through `θ = exp(θ̃) − 1e-5`.
pub fn to_logspace_gradient(grad: &[f64], theta: &[f64]) -> Vec<f64> {
    grad.iter().zip(theta).map(|(g, t)| g * (t + LOG_OFFSET)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub loss: f64,
    pub satisfaction: f64,
    pub learning_rate: f64,
    /// Conditions with `ρ ≤ 0`, i.e. those re-simulated for gradients.
    pub violated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub experiment: String,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub train_globals: bool,
    /// Iterations whose loss was evaluated.
    pub iterations: usize,
    /// True when the loop stopped because the loss reached zero.
    pub converged: bool,
    pub history: Vec<IterationRecord>,
    pub final_loss: f64,
    pub train_satisfaction: f64,
    pub params: BnnParams,
    pub wall_clock_s: f64,
}

/// Trains a freshly initialized network on the training split of `config`.
pub fn train(config: &ExperimentConfig, seed: u64) -> Result<TrainReport> {
    train_with(config, seed, |_| {})
}

/// As [`train`], calling `observe` after each loss evaluation.
pub fn train_with(config: &ExperimentConfig, seed: u64, observe: impl FnMut(&IterationRecord)) -> Result<TrainReport> {
    let problem = Problem::new(config.clone(), Split::Train)?;
    let mut init = init_params(&config.network.shape()?, seed)?;
    init.globals = config.network.globals;
    train_from(&problem, init, seed, observe)
}

/// The training loop from explicit initial parameters.
pub fn train_from(
    problem: &Problem,
    init: BnnParams,
    seed: u64,
    mut observe: impl FnMut(&IterationRecord),
) -> Result<TrainReport> {
    let started = Instant::now();
    let cfg = &problem.config.optimizer;
    let train_globals = problem.config.network.train_globals;
    let pool = pool()?;
    let mut params = init;
    let mut state = OptimizerState::new(params.trainable_len(train_globals));
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut converged = false;
    let mut last_eval = None;

    for i in 0..cfg.iterations {
        let lg = loss_gradient_in(&pool, problem, &params, train_globals)?;
        let loss = lg.eval.loss();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {}", i + 1)));
        }
        let record = IterationRecord {
            iteration: i + 1,
            loss,
            satisfaction: lg.eval.satisfaction,
            learning_rate: cfg.rate_at(i),
            violated: lg.eval.rhos.iter().filter(|&&r| r <= 0.0).count(),
        };
        observe(&record);
        history.push(record);
        if loss == 0.0 {
            converged = true;
            last_eval = Some(lg.eval);
            break;
        }
        let theta = params.trainable(train_globals);
        let mut theta_log = to_logspace(&theta)?;
        let grad_log = to_logspace_gradient(&lg.grad, &theta);
        state.step(cfg, cfg.rate_at(i), &grad_log, &mut theta_log)?;
        params.set_trainable(&from_logspace(&theta_log)?, train_globals)?;
    }

    let final_eval = match last_eval {
        Some(e) => e,
        None => evaluate_in(&pool, &params, problem, ControlMode::Closed)?,
    };
    Ok(TrainReport {
        experiment: problem.config.name.clone(),
        seed,
        optimizer: cfg.clone(),
        train_globals,
        iterations: history.len(),
        converged,
        history,
        final_loss: final_eval.loss(),
        train_satisfaction: final_eval.satisfaction,
        params,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}
