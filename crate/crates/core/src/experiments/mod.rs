//! The three case studies and everything needed to simulate them.
//!
//! * `static`: a 2-2-1 network plus fluorescent reporter must settle `g`
//!   near `max(0, |x_M − x_P| − 0.1)` for constant inputs.
//! * `dynamic`: the same network must track that target for inputs that
//!   switch between low and high bands over time.
//! * `control`: a single perceptron reads bacteria and damage of an immune
//!   plant and drives anti-inflammatory production.
//!
//! An [`ExperimentConfig`] is plain data (TOML or JSON). A [`Problem`] is
//! a config bound to one split with its condition set materialized.

pub mod markov;
pub mod plant;

use serde::{Deserialize, Serialize};

use crate::bnn::{reporter_rhs, BnnShape, Globals, Network, ReporterParams};
use crate::error::{Error, Result};
use crate::grad::Scalar;
use crate::ode::{integrate, SolverConfig, VectorField};
use crate::signal::{interp_samples, TimeGrid, Trace};
use crate::stl::{self, Formula};
use crate::trainer::OptimizerConfig;

pub use markov::{gen_markov_trajectories, InputPair, MarkovGenConfig};
pub use plant::{immune_rhs, ImmunePlantParams};

pub const STATIC_FORMULA: &str =
    "(F[0,5] G[0,inf] abs(g - r) < 0.1) & (F[0,inf] G[0,inf] abs(g - r) < 0.05)";
pub const DYNAMIC_FORMULA: &str = "G[0,inf] F[0,9] abs(y - r) < 0.1";
pub const CONTROL_FORMULA: &str = "(F[0,inf] G[0,inf] x_D < 150) & !(F[0,inf] G[0,15] x_B > 0.1)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// `count` points `start, start + step, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl UniformGrid {
    pub fn to_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.start, self.step, self.count)
    }
}

/// `count` evenly spaced values from `start` to `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl Linspace {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|i| self.start + (self.end - self.start) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub inputs: usize,
    pub layers: Vec<usize>,
    pub globals: Globals,
    /// Also train `gamma_seq`, `delta_deg` and `k_act`.
    pub train_globals: bool,
}

impl NetworkConfig {
    pub fn shape(&self) -> Result<BnnShape> {
        BnnShape::new(self.inputs, self.layers.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Static {
        /// Values of each input axis; the condition set is their square.
        axis: Linspace,
        test_shift: f64,
        reporter: ReporterParams,
    },
    Dynamic {
        markov: MarkovGenConfig,
        /// Time of the first input sample; later samples follow every
        /// `input_step` hours and the last one is held.
        input_start: f64,
        input_step: f64,
        train_seed: u64,
        test_seed: u64,
        /// Optional fluorescent stage adding a `g` channel downstream of `y`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reporter: Option<ReporterParams>,
    },
    Control {
        p: Linspace,
        x_b0: Linspace,
        test_shift_p: f64,
        test_shift_x_b0: f64,
        infection_time: f64,
        /// Divisors applied to `(x_B, x_D)` before they reach the network;
        /// `None` feeds raw concentrations.
        input_scale: Option<[f64; 2]>,
        plant: ImmunePlantParams,
    },
}

impl Task {
    pub fn id(&self) -> &'static str {
        match self {
            Task::Static { .. } => "static",
            Task::Dynamic { .. } => "dynamic",
            Task::Control { .. } => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Seed for parameter initialization.
    pub seed: u64,
    pub formula: String,
    pub time: UniformGrid,
    pub network: NetworkConfig,
    pub task: Task,
    pub optimizer: OptimizerConfig,
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        stl::parse(&self.formula)?;
        self.time.to_grid()?;
        let shape = self.network.shape()?;
        self.solver.validate()?;
        self.optimizer.validate()?;
        if shape.inputs != 2 {
            return Err(Error::Config(format!(
                "{} experiment needs a two-input network, got {}",
                self.task.id(),
                shape.inputs
            )));
        }
        match &self.task {
            Task::Static { axis, .. } if axis.count == 0 => {
                return Err(Error::Config("static axis is empty".into()))
            }
            Task::Dynamic {
                markov, input_step, ..
            } => {
                markov.validate()?;
                if !(*input_step > 0.0) {
                    return Err(Error::Config("input_step must be positive".into()));
                }
            }
            Task::Control {
                plant,
                input_scale,
                p,
                x_b0,
                ..
            } => {
                plant.validate()?;
                if shape.outputs() != 1 {
                    return Err(Error::Config("control network must have one output".into()));
                }
                if matches!(input_scale, Some(s) if !(s[0] > 0.0 && s[1] > 0.0)) {
                    return Err(Error::Config("input_scale entries must be positive".into()));
                }
                if p.count == 0 || x_b0.count == 0 {
                    return Err(Error::Config("control grid is empty".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Default configuration of a named experiment.
pub fn build_experiment(id: &str) -> Result<ExperimentConfig> {
    let network = |layers: Vec<usize>| NetworkConfig {
        inputs: 2,
        layers,
        globals: Globals::default(),
        train_globals: false,
    };
    let optimizer = |iterations, learning_rate, halve_every| OptimizerConfig {
        iterations,
        learning_rate,
        halve_every,
        ..OptimizerConfig::default()
    };
    let solver = SolverConfig::default().with_tolerances(1e-6, 1e-8);
    let cfg = match id {
        "static" => ExperimentConfig {
            name: "static".into(),
            seed: 1,
            formula: STATIC_FORMULA.into(),
            time: UniformGrid {
                start: 0.0,
                step: 1.0,
                count: 21,
            },
            network: network(vec![2, 1]),
            task: Task::Static {
                axis: Linspace {
                    start: 0.0,
                    end: 1.0,
                    count: 11,
                },
                test_shift: 0.05,
                reporter: ReporterParams::default(),
            },
            optimizer: optimizer(3000, 0.05, Some(1000)),
            solver,
        },
        "dynamic" => ExperimentConfig {
            name: "dynamic".into(),
            seed: 1,
            formula: DYNAMIC_FORMULA.into(),
            time: UniformGrid {
                start: 0.0,
                step: 0.5,
                count: 81,
            },
            network: network(vec![2, 1]),
            task: Task::Dynamic {
                markov: MarkovGenConfig::default(),
                input_start: 0.0,
                input_step: 1.0,
                train_seed: 2024,
                test_seed: 4048,
                reporter: None,
            },
            optimizer: optimizer(400, 0.05, None),
            solver,
        },
        "control" => ExperimentConfig {
            name: "control".into(),
            seed: 1,
            formula: CONTROL_FORMULA.into(),
            time: UniformGrid {
                start: 0.0,
                step: 50.0,
                count: 17,
            },
            network: network(vec![1]),
            task: Task::Control {
                p: Linspace {
                    start: 12.0,
                    end: 15.0,
                    count: 20,
                },
                x_b0: Linspace {
                    start: 0.0,
                    end: 500.0,
                    count: 20,
                },
                test_shift_p: 0.5,
                test_shift_x_b0: 25.0,
                infection_time: 200.0,
                input_scale: Some([500.0, 150.0]),
                plant: ImmunePlantParams::default(),
            },
            optimizer: optimizer(200, 5e-3, None),
            solver,
        },
        other => return Err(Error::UnknownExperiment(other.to_string())),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Constant input pairs `(x_P, x_M)` on the square grid, shifted for the
/// test split.
pub fn gen_static_conditions(axis: &Linspace, test_shift: f64, split: Split) -> Vec<(f64, f64)> {
    let shift = match split {
        Split::Train => 0.0,
        Split::Test => test_shift,
    };
    let values: Vec<f64> = axis.values().into_iter().map(|v| v + shift).collect();
    values
        .iter()
        .flat_map(|&xp| values.iter().map(move |&xm| (xp, xm)))
        .collect()
}

/// `(p, x_B0)` pairs, shifted for the test split.
pub fn gen_control_conditions(
    p: &Linspace,
    x_b0: &Linspace,
    shift: (f64, f64),
    split: Split,
) -> Vec<(f64, f64)> {
    let (sp, sb) = match split {
        Split::Train => (0.0, 0.0),
        Split::Test => shift,
    };
    let bs = x_b0.values();
    p.values()
        .into_iter()
        .flat_map(|pv| bs.iter().map(move |&b| (pv + sp, b + sb)))
        .collect()
}

/// Regression target for inputs `x_M`, `x_P`.
pub fn target_r(x_m: f64, x_p: f64) -> f64 {
    ((x_m - x_p).abs() - 0.1).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Static { x_p: f64, x_m: f64 },
    Dynamic { x_p: Vec<f64>, x_m: Vec<f64> },
    Control { p: f64, x_b0: f64 },
}

/// How the control action is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlMode {
    /// The network closes the loop.
    Closed,
    /// `u ≡ 0`.
    Untreated,
    /// The network runs with its bacteria input forced to zero.
    Unaware,
    /// `u ≡ value`.
    Constant(f64),
}

/// Named sampled channels, values possibly carrying tangents.
pub type Channels<S> = Vec<(String, Vec<S>)>;

/// A configuration bound to a split with its conditions materialized.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ExperimentConfig,
    pub split: Split,
    pub formula: Formula,
    pub grid: TimeGrid,
    pub conditions: Vec<Condition>,
    input_times: Vec<f64>,
}

impl Problem {
    pub fn new(config: ExperimentConfig, split: Split) -> Result<Self> {
        config.validate()?;
        let formula = stl::parse(&config.formula)?;
        let grid = config.time.to_grid()?;
        let mut input_times = Vec::new();
        let conditions = match &config.task {
            Task::Static {
                axis, test_shift, ..
            } => gen_static_conditions(axis, *test_shift, split)
                .into_iter()
                .map(|(x_p, x_m)| Condition::Static { x_p, x_m })
                .collect(),
            Task::Dynamic {
                markov,
                input_start,
                input_step,
                train_seed,
                test_seed,
                ..
            } => {
                let seed = match split {
                    Split::Train => *train_seed,
                    Split::Test => *test_seed,
                };
                input_times = (0..markov.horizon)
                    .map(|k| input_start + input_step * k as f64)
                    .collect();
                gen_markov_trajectories(markov, seed)?
                    .into_iter()
                    .map(|pair| Condition::Dynamic {
                        x_p: pair.x_p.values,
                        x_m: pair.x_m.values,
                    })
                    .collect()
            }
            Task::Control {
                p,
                x_b0,
                test_shift_p,
                test_shift_x_b0,
                ..
            } => gen_control_conditions(p, x_b0, (*test_shift_p, *test_shift_x_b0), split)
                .into_iter()
                .map(|(p, x_b0)| Condition::Control { p, x_b0 })
                .collect(),
        };
        Ok(Self {
            config,
            split,
            formula,
            grid,
            conditions,
            input_times,
        })
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Sample times of the piecewise-linear inputs (dynamic task only).
    pub fn input_times(&self) -> &[f64] {
        &self.input_times
    }

    /// Simulates condition `c` and returns every named channel on the
    /// output grid.
    pub fn simulate<S: Scalar>(&self, c: usize, net: &Network<S>, mode: ControlMode) -> Result<Channels<S>> {
        let cond = self
            .conditions
            .get(c)
            .ok_or(Error::IndexOutOfRange { index: c, len: self.len() })?;
        self.simulate_condition(cond, net, mode)
            .map_err(|e| e.in_condition(c))
    }

    fn simulate_condition<S: Scalar>(
        &self,
        cond: &Condition,
        net: &Network<S>,
        mode: ControlMode,
    ) -> Result<Channels<S>> {
        let solver = &self.config.solver;
        let grid = &self.grid;
        let nz = net.state_dim();
        let out = net.shape().output_offset();
        match (&self.config.task, cond) {
            (Task::Static { reporter, .. }, &Condition::Static { x_p, x_m }) => {
                let field = StaticField {
                    net,
                    plain: plain_copy(net),
                    inputs: [S::constant(x_p), S::constant(x_m)],
                    reporter,
                };
                let sol = integrate(&field, &vec![S::zero(); nz + 1], grid, solver)?;
                let r = S::constant(target_r(x_m, x_p));
                Ok(vec![
                    ("x_P".into(), vec![S::constant(x_p); grid.len()]),
                    ("x_M".into(), vec![S::constant(x_m); grid.len()]),
                    ("y".into(), sol.component(out)),
                    ("g".into(), sol.component(nz)),
                    ("r".into(), vec![r; grid.len()]),
                ])
            }
            (Task::Dynamic { reporter, .. }, Condition::Dynamic { x_p, x_m }) => {
                let field = DynamicField {
                    net,
                    plain: plain_copy(net),
                    times: &self.input_times,
                    x_p,
                    x_m,
                    reporter: reporter.as_ref(),
                };
                let sol = integrate(&field, &vec![S::zero(); field.dim()], grid, solver)?;
                let at = |v: &[f64]| -> Vec<f64> {
                    grid.points()
                        .iter()
                        .map(|&t| interp_samples(&self.input_times, v, t))
                        .collect()
                };
                let (xp, xm) = (at(x_p), at(x_m));
                let r = xp.iter().zip(&xm).map(|(&p, &m)| S::constant(target_r(m, p))).collect();
                let mut channels = vec![
                    ("x_P".into(), xp.into_iter().map(S::constant).collect()),
                    ("x_M".into(), xm.into_iter().map(S::constant).collect()),
                    ("y".into(), sol.component(out)),
                ];
                if reporter.is_some() {
                    channels.push(("g".into(), sol.component(nz)));
                }
                channels.push(("r".into(), r));
                Ok(channels)
            }
            (
                Task::Control {
                    infection_time,
                    input_scale,
                    plant,
                    ..
                },
                &Condition::Control { p, x_b0 },
            ) => {
                let field = ControlField {
                    net,
                    plain: plain_copy(net),
                    plant,
                    p,
                    x_b0,
                    infection_time: *infection_time,
                    scale: input_scale.unwrap_or([1.0, 1.0]),
                    mode,
                };
                let mut x0: Vec<S> = plant.initial_state().map(S::constant).to_vec();
                x0.resize(4 + nz, S::zero());
                let sol = integrate(&field, &x0, grid, solver)?;
                let mut channels: Channels<S> = plant::SPECIES
                    .iter()
                    .enumerate()
                    .map(|(i, name)| (name.to_string(), sol.component(i)))
                    .collect();
                let u = sol.states.iter().map(|x| field.action(&x[4..])).collect();
                channels.push(("u".into(), u));
                Ok(channels)
            }
            _ => Err(Error::Config("condition does not match the experiment".into())),
        }
    }

    /// Plain-valued trace of condition `c`.
    pub fn trace(&self, c: usize, net: &Network<f64>, mode: ControlMode) -> Result<Trace> {
        Trace::new(self.grid.clone(), self.simulate(c, net, mode)?)
    }
}

/// Drops tangents and keeps only the named channels.
pub fn channel_values<S: Scalar>(channels: &Channels<S>, grid: &TimeGrid, names: &[&str]) -> Result<Trace> {
    let picked = names
        .iter()
        .map(|&n| {
            channels
                .iter()
                .find(|(name, _)| name == n)
                .map(|(name, v)| (name.clone(), v.iter().map(Scalar::value).collect::<Vec<f64>>()))
                .ok_or_else(|| Error::UnknownChannel(n.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Trace::new(grid.clone(), picked)
}

/// Plain-valued copy of a tangent-carrying network, for cheap Jacobians.
fn plain_copy<S: Scalar>(net: &Network<S>) -> Option<Network<f64>> {
    (S::PARTS > 1).then(|| net.values())
}

struct StaticField<'a, S> {
    net: &'a Network<S>,
    plain: Option<Network<f64>>,
    inputs: [S; 2],
    reporter: &'a ReporterParams,
}

impl<S: Scalar> VectorField<S> for StaticField<'_, S> {
    fn dim(&self) -> usize {
        self.net.state_dim() + 1
    }

    fn rhs(&self, _t: f64, x: &[S], dx: &mut [S]) {
        let nz = self.net.state_dim();
        self.net.rhs(&self.inputs, &x[..nz], &mut dx[..nz]);
        let y = self.net.output(&x[..nz])[0];
        dx[nz] = reporter_rhs(x[nz], y, self.reporter);
    }

    fn has_rhs_values(&self) -> bool {
        self.plain.is_some()
    }

    fn rhs_values(&self, t: f64, x: &[f64], dx: &mut [f64]) -> bool {
        let Some(net) = &self.plain else { return false };
        let field = StaticField {
            net,
            plain: None,
            inputs: self.inputs.map(|v| v.value()),
            reporter: self.reporter,
        };
        field.rhs(t, x, dx);
        true
    }
}

struct DynamicField<'a, S> {
    net: &'a Network<S>,
    plain: Option<Network<f64>>,
    times: &'a [f64],
    x_p: &'a [f64],
    x_m: &'a [f64],
    reporter: Option<&'a ReporterParams>,
}

impl<S: Scalar> VectorField<S> for DynamicField<'_, S> {
    fn dim(&self) -> usize {
        self.net.state_dim() + usize::from(self.reporter.is_some())
    }

    fn rhs(&self, t: f64, x: &[S], dx: &mut [S]) {
        let inputs = [
            S::constant(interp_samples(self.times, self.x_p, t)),
            S::constant(interp_samples(self.times, self.x_m, t)),
        ];
        let nz = self.net.state_dim();
        self.net.rhs(&inputs, &x[..nz], &mut dx[..nz]);
        if let Some(reporter) = self.reporter {
            let y = self.net.output(&x[..nz])[0];
            dx[nz] = reporter_rhs(x[nz], y, reporter);
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.times.to_vec()
    }

    fn has_rhs_values(&self) -> bool {
        self.plain.is_some()
    }

    fn rhs_values(&self, t: f64, x: &[f64], dx: &mut [f64]) -> bool {
        let Some(net) = &self.plain else { return false };
        let field = DynamicField {
            net,
            plain: None,
            times: self.times,
            x_p: self.x_p,
            x_m: self.x_m,
            reporter: self.reporter,
        };
        field.rhs(t, x, dx);
        true
    }
}

struct ControlField<'a, S> {
    net: &'a Network<S>,
    plain: Option<Network<f64>>,
    plant: &'a ImmunePlantParams,
    p: f64,
    x_b0: f64,
    infection_time: f64,
    scale: [f64; 2],
    mode: ControlMode,
}

impl<S: Scalar> ControlField<'_, S> {
    fn action(&self, z: &[S]) -> S {
        match self.mode {
            ControlMode::Closed | ControlMode::Unaware => self.net.output(z)[0],
            ControlMode::Untreated => S::zero(),
            ControlMode::Constant(u) => S::constant(u),
        }
    }
}

impl<S: Scalar> VectorField<S> for ControlField<'_, S> {
    fn dim(&self) -> usize {
        4 + self.net.state_dim()
    }

    fn rhs(&self, _t: f64, x: &[S], dx: &mut [S]) {
        let (xs, z) = x.split_at(4);
        let (dxs, dz) = dx.split_at_mut(4);
        let bacteria = if self.mode == ControlMode::Unaware {
            S::zero()
        } else {
            xs[plant::B] / self.scale[0]
        };
        self.net.rhs(&[bacteria, xs[plant::D] / self.scale[1]], z, dz);
        immune_rhs(xs, self.action(z), self.p, self.plant, dxs);
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.infection_time]
    }

    fn jump(&self, t: f64, x: &mut [S]) {
        if t == self.infection_time {
            x[plant::B] = S::constant(self.x_b0);
        }
    }

    fn has_rhs_values(&self) -> bool {
        self.plain.is_some()
    }

    fn rhs_values(&self, t: f64, x: &[f64], dx: &mut [f64]) -> bool {
        let Some(net) = &self.plain else { return false };
        let field = ControlField {
            net,
            plain: None,
            plant: self.plant,
            p: self.p,
            x_b0: self.x_b0,
            infection_time: self.infection_time,
            scale: self.scale,
            mode: self.mode,
        };
        field.rhs(t, x, dx);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{init_params, BnnParams};
    use approx::assert_relative_eq;

    #[test]
    fn static_grid() {
        let Task::Static { axis, test_shift, .. } = build_experiment("static").unwrap().task else {
            unreachable!()
        };
        let train = gen_static_conditions(&axis, test_shift, Split::Train);
        assert_eq!(train.len(), 121);
        assert!(train.contains(&(0.0, 0.0)) && train.contains(&(1.0, 1.0)));
        let test = gen_static_conditions(&axis, test_shift, Split::Test);
        assert!(test.contains(&(0.05, 0.05)));
        let max = test.iter().map(|c| c.0).fold(0.0, f64::max);
        assert_relative_eq!(max, 1.05);
    }

    #[test]
    fn target_examples() {
        assert_relative_eq!(target_r(0.0, 1.0), 0.9);
        assert_eq!(target_r(0.5, 0.55), 0.0);
        assert_relative_eq!(target_r(0.3, 0.1), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn control_grid() {
        let Task::Control {
            p,
            x_b0,
            test_shift_p,
            test_shift_x_b0,
            ..
        } = build_experiment("control").unwrap().task
        else {
            unreachable!()
        };
        let train = gen_control_conditions(&p, &x_b0, (test_shift_p, test_shift_x_b0), Split::Train);
        assert_eq!(train.len(), 400);
        assert!(train.iter().any(|c| c.0 == 12.0) && train.iter().any(|c| c.0 == 15.0));
        let test = gen_control_conditions(&p, &x_b0, (test_shift_p, test_shift_x_b0), Split::Test);
        assert!(test.contains(&(12.5, 25.0)));
    }

    #[test]
    fn defaults() {
        let s = build_experiment("static").unwrap();
        assert_eq!(s.time.to_grid().unwrap().len(), 21);
        assert_eq!(s.optimizer.iterations, 3000);
        let c = build_experiment("control").unwrap();
        assert_eq!(c.optimizer.learning_rate, 5e-3);
        let d = Problem::new(build_experiment("dynamic").unwrap(), Split::Train).unwrap();
        assert_eq!(d.len(), 150);
        assert!(matches!(build_experiment("nope"), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn config_round_trips_through_toml_and_json() {
        for id in ["static", "dynamic", "control"] {
            let cfg = build_experiment(id).unwrap();
            assert_eq!(ExperimentConfig::from_text(&cfg.to_toml()).unwrap(), cfg);
            let json = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_text(&json).unwrap(), cfg);
        }
        let bad = build_experiment("static").unwrap().to_toml().replace("count = 21", "count = 1");
        assert!(matches!(ExperimentConfig::from_text(&bad), Err(Error::GridTooShort(1))));
        let unknown = format!("bogus = 1\n{}", build_experiment("static").unwrap().to_toml());
        assert!(ExperimentConfig::from_text(&unknown).is_err());
    }

    fn control_net() -> BnnParams {
        init_params(&BnnShape::new(2, vec![1]).unwrap(), 0).unwrap()
    }

    #[test]
    fn control_state_dimension_and_jump() {
        let problem = Problem::new(build_experiment("control").unwrap(), Split::Train).unwrap();
        let net = control_net();
        assert_eq!(4 + net.shape().state_dim(), 6);
        let c = problem
            .conditions
            .iter()
            .position(|c| matches!(c, Condition::Control { x_b0, .. } if *x_b0 == 500.0))
            .unwrap();
        let trace = problem.trace(c, &net.network(), ControlMode::Untreated).unwrap();
        let xb = trace.channel("x_B").unwrap();
        // The sample at the infection time is the pre-infection state.
        assert_eq!(xb[4], 0.0);
        assert!(xb[..5].iter().all(|&v| v == 0.0));
        assert!(trace.channel("u").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_decouples() {
        let problem = Problem::new(build_experiment("control").unwrap(), Split::Train).unwrap();
        let zero = BnnParams::zeros(BnnShape::new(2, vec![1]).unwrap()).unwrap();
        let a = problem.trace(7, &zero.network(), ControlMode::Closed).unwrap();
        let b = problem.trace(7, &zero.network(), ControlMode::Untreated).unwrap();
        assert!(a.channel("u").unwrap().iter().all(|&u| u.abs() < 1e-12));
        for (x, y) in a.channel("x_D").unwrap().iter().zip(b.channel("x_D").unwrap()) {
            assert!((x - y).abs() < 1e-6 * y.abs());
        }
    }

    #[test]
    fn dynamic_reference_channel_uses_interpolated_inputs() {
        let problem = Problem::new(build_experiment("dynamic").unwrap(), Split::Train).unwrap();
        let params = init_params(&BnnShape::new(2, vec![2, 1]).unwrap(), 1).unwrap();
        let trace = problem.trace(3, &params.network(), ControlMode::Closed).unwrap();
        let Condition::Dynamic { x_p, x_m } = &problem.conditions[3] else {
            unreachable!()
        };
        for (k, &t) in problem.grid.points().iter().enumerate() {
            let xp = interp_samples(problem.input_times(), x_p, t);
            let xm = interp_samples(problem.input_times(), x_m, t);
            assert_eq!(trace.channel("r").unwrap()[k], target_r(xm, xp));
        }
        // Last input sample is held.
        let xp = trace.channel("x_P").unwrap();
        assert_eq!(xp[xp.len() - 1], x_p[29]);
    }

    #[test]
    fn static_reporter_follows_output() {
        let problem = Problem::new(build_experiment("static").unwrap(), Split::Train).unwrap();
        let params = init_params(&BnnShape::new(2, vec![2, 1]).unwrap(), 4).unwrap();
        let trace = problem.trace(17, &params.network(), ControlMode::Closed).unwrap();
        let (g, y) = (trace.channel("g").unwrap(), trace.channel("y").unwrap());
        assert_eq!(g[0], 0.0);
        // Reporter near its quasi-steady state by the end.
        let rp = ReporterParams::default();
        assert!((g[20] - rp.steady_state(y[20])).abs() < 0.05);
    }

    #[test]
    fn dynamic_reporter_is_optional() {
        let mut cfg = build_experiment("dynamic").unwrap();
        let params = init_params(&BnnShape::new(2, vec![2, 1]).unwrap(), 1).unwrap();
        let bare = Problem::new(cfg.clone(), Split::Train).unwrap();
        let bare = bare.trace(5, &params.network(), ControlMode::Closed).unwrap();
        assert!(bare.channel("g").is_err());

        if let Task::Dynamic { reporter, .. } = &mut cfg.task {
            *reporter = Some(ReporterParams::default());
        }
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("reporter"));
        let problem = Problem::new(cfg, Split::Train).unwrap();
        let trace = problem.trace(5, &params.network(), ControlMode::Closed).unwrap();
        // The reporter only reads `y`; step selection differs, so compare to tolerance.
        for (a, b) in trace.channel("y").unwrap().iter().zip(bare.channel("y").unwrap()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert_eq!(trace.channel("g").unwrap()[0], 0.0);
    }
}
