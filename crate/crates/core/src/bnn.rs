//! Biomolecular neural networks.
//!
//! Each perceptron is a pair of species `z1`, `z2` produced at
//! input-dependent rates, annihilating each other at rate `gamma_seq` and
//! degrading at rate `delta_deg`:
//!
//! ```text
//! ż1 = W1·φ(h) + b1 − γ·z1·z2 − δ·z1
//! ż2 = W2·φ(h) + b2 − γ·z1·z2 − δ·z2
//! ```
//!
//! The first layer reads the external inputs directly; later layers read
//! `z1 / (k + z1)` of the previous layer. The network output is `z1` of
//! the last layer.
//!
//! State layout: layer by layer, each layer stores all its `z1` followed by
//! all its `z2`. Trainable parameters are flattened perceptron by
//! perceptron as `W1[..], W2[..], b1, b2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grad::Scalar;

/// Offset added before taking logs so zero parameters stay representable.
pub const LOG_OFFSET: f64 = 1e-5;

/// Constant used for every basal production rate at initialization.
pub const INIT_BIAS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnnShape {
    pub inputs: usize,
    pub layers: Vec<usize>,
}

impl BnnShape {
    pub fn new(inputs: usize, layers: Vec<usize>) -> Result<Self> {
        let shape = Self { inputs, layers };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.layers.is_empty() || self.layers.contains(&0) {
            return Err(Error::Config(format!(
                "network sizes must all be at least 1, got inputs={} layers={:?}",
                self.inputs, self.layers
            )));
        }
        Ok(())
    }

    pub fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.inputs
        } else {
            self.layers[layer - 1]
        }
    }

    pub fn perceptrons(&self) -> usize {
        self.layers.iter().sum()
    }

    /// Number of species, two per perceptron.
    pub fn state_dim(&self) -> usize {
        2 * self.perceptrons()
    }

    pub fn outputs(&self) -> usize {
        *self.layers.last().expect("validated shape")
    }

    fn stride(&self, layer: usize) -> usize {
        2 * self.fan_in(layer) + 2
    }

    /// Count of per-perceptron trainable entries.
    pub fn weight_count(&self) -> usize {
        (0..self.layers.len())
            .map(|l| self.layers[l] * self.stride(l))
            .sum()
    }

    /// Index of the first `z1` of the output layer.
    pub fn output_offset(&self) -> usize {
        2 * self.layers[..self.layers.len() - 1].iter().sum::<usize>()
    }
}

/// Rates shared by every perceptron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Globals {
    pub gamma_seq: f64,
    pub delta_deg: f64,
    pub k_act: f64,
}

impl Default for Globals {
    fn default() -> Self {
        Self {
            gamma_seq: 1000.0,
            delta_deg: 1.0,
            k_act: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perceptron {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b1: f64,
    pub b2: f64,
}

/// Full parameter set. Serialized as a flat object with keys `W1/l/j`,
/// `W2/l/j`, `b1/l/j`, `b2/l/j` (1-based) and a `globals` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Map<String, Value>", try_from = "Map<String, Value>")]
pub struct BnnParams {
    shape: BnnShape,
    /// `layers[l][j]`
    layers: Vec<Vec<Perceptron>>,
    pub globals: Globals,
}

impl BnnParams {
    pub fn new(shape: BnnShape, layers: Vec<Vec<Perceptron>>, globals: Globals) -> Result<Self> {
        shape.validate()?;
        if layers.len() != shape.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.layers.len(),
                got: layers.len(),
            });
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.len() != shape.layers[l] {
                return Err(Error::DimensionMismatch {
                    expected: shape.layers[l],
                    got: layer.len(),
                });
            }
            for p in layer {
                for w in [&p.w1, &p.w2] {
                    if w.len() != shape.fan_in(l) {
                        return Err(Error::DimensionMismatch {
                            expected: shape.fan_in(l),
                            got: w.len(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            shape,
            layers,
            globals,
        })
    }

    pub fn zeros(shape: BnnShape) -> Result<Self> {
        shape.validate()?;
        let layers = (0..shape.layers.len())
            .map(|l| {
                (0..shape.layers[l])
                    .map(|_| Perceptron {
                        w1: vec![0.0; shape.fan_in(l)],
                        w2: vec![0.0; shape.fan_in(l)],
                        b1: 0.0,
                        b2: 0.0,
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            shape,
            layers,
            globals: Globals::default(),
        })
    }

    pub fn shape(&self) -> &BnnShape {
        &self.shape
    }

    pub fn perceptron(&self, layer: usize, index: usize) -> &Perceptron {
        &self.layers[layer][index]
    }

    pub fn perceptron_mut(&mut self, layer: usize, index: usize) -> &mut Perceptron {
        &mut self.layers[layer][index]
    }

    /// Length of the trainable vector.
    pub fn trainable_len(&self, train_globals: bool) -> usize {
        self.shape.weight_count() + if train_globals { 3 } else { 0 }
    }

    /// Trainable entries in flat order; globals last when included.
    pub fn trainable(&self, train_globals: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len(train_globals));
        for p in self.layers.iter().flatten() {
            out.extend_from_slice(&p.w1);
            out.extend_from_slice(&p.w2);
            out.push(p.b1);
            out.push(p.b2);
        }
        if train_globals {
            let g = self.globals;
            out.extend([g.gamma_seq, g.delta_deg, g.k_act]);
        }
        out
    }

    pub fn set_trainable(&mut self, flat: &[f64], train_globals: bool) -> Result<()> {
        let expected = self.trainable_len(train_globals);
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for p in self.layers.iter_mut().flatten() {
            for w in p.w1.iter_mut().chain(p.w2.iter_mut()) {
                *w = it.next().expect("length checked");
            }
            p.b1 = it.next().expect("length checked");
            p.b2 = it.next().expect("length checked");
        }
        if train_globals {
            self.globals = Globals {
                gamma_seq: it.next().expect("length checked"),
                delta_deg: it.next().expect("length checked"),
                k_act: it.next().expect("length checked"),
            };
        }
        Ok(())
    }

    /// Evaluation view over `f64`.
    pub fn network(&self) -> Network<f64> {
        Network::new(
            self.shape.clone(),
            self.trainable(false),
            [
                self.globals.gamma_seq,
                self.globals.delta_deg,
                self.globals.k_act,
            ],
        )
    }

    /// Evaluation view with the trainable entries replaced by `theta`,
    /// typically seeded dual numbers. Frozen globals become constants.
    pub fn network_with<S: Scalar>(&self, theta: &[S], train_globals: bool) -> Result<Network<S>> {
        let expected = self.trainable_len(train_globals);
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: theta.len(),
            });
        }
        let n = self.shape.weight_count();
        let globals = if train_globals {
            [theta[n], theta[n + 1], theta[n + 2]]
        } else {
            [
                S::constant(self.globals.gamma_seq),
                S::constant(self.globals.delta_deg),
                S::constant(self.globals.k_act),
            ]
        };
        Ok(Network::new(self.shape.clone(), theta[..n].to_vec(), globals))
    }

    pub fn is_finite(&self) -> bool {
        self.trainable(true).iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights with negative draws clamped to zero, biases at
/// [`INIT_BIAS`], default globals.
pub fn init_params(shape: &BnnShape, seed: u64) -> Result<BnnParams> {
    let mut params = BnnParams::zeros(shape.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..shape.layers.len() {
        let fan_in = shape.fan_in(l);
        let fan_out = shape.layers[l];
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for p in &mut params.layers[l] {
            for w in p.w1.iter_mut().chain(p.w2.iter_mut()) {
                *w = rng.random_range(-limit..=limit).max(0.0);
            }
            p.b1 = INIT_BIAS;
            p.b2 = INIT_BIAS;
        }
    }
    Ok(params)
}

/// `ln(θ + 1e-5)` elementwise.
pub fn to_logspace(theta: &[f64]) -> Result<Vec<f64>> {
    theta
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("parameter {v}")));
            }
            let shifted = v + LOG_OFFSET;
            if shifted <= 0.0 {
                return Err(Error::LogDomain(shifted));
            }
            Ok(shifted.ln())
        })
        .collect()
}

/// `exp(θ̃) − 1e-5` elementwise.
pub fn from_logspace(theta_log: &[f64]) -> Result<Vec<f64>> {
    theta_log
        .iter()
        .map(|&v| {
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::NonFinite(format!("log-space parameter {v}")));
            }
            Ok(v.exp() - LOG_OFFSET)
        })
        .collect()
}

pub fn phi_first<S: Scalar>(x: S) -> S {
    x
}

pub fn phi_inner<S: Scalar>(z: S, k: S) -> S {
    z / (k + z)
}

/// Parameter view used during simulation.
#[derive(Debug, Clone)]
pub struct Network<S> {
    shape: BnnShape,
    theta: Vec<S>,
    gamma: S,
    delta: S,
    k: S,
}

impl<S: Scalar> Network<S> {
    /// `theta` holds the per-perceptron entries in flat order;
    /// `globals` is `[gamma_seq, delta_deg, k_act]`.
    pub fn new(shape: BnnShape, theta: Vec<S>, globals: [S; 3]) -> Self {
        assert_eq!(theta.len(), shape.weight_count(), "parameter vector length");
        let [gamma, delta, k] = globals;
        Self {
            shape,
            theta,
            gamma,
            delta,
            k,
        }
    }

    pub fn shape(&self) -> &BnnShape {
        &self.shape
    }

    pub fn state_dim(&self) -> usize {
        self.shape.state_dim()
    }

    /// Copy with tangents dropped.
    pub fn values(&self) -> Network<f64> {
        Network {
            shape: self.shape.clone(),
            theta: self.theta.iter().map(Scalar::value).collect(),
            gamma: self.gamma.value(),
            delta: self.delta.value(),
            k: self.k.value(),
        }
    }

    /// Output species (`z1` of the last layer).
    pub fn output<'a>(&self, z: &'a [S]) -> &'a [S] {
        let off = self.shape.output_offset();
        &z[off..off + self.shape.outputs()]
    }

    /// Time derivative of the network state for external inputs `x`.
    pub fn rhs(&self, x: &[S], z: &[S], dz: &mut [S]) {
        debug_assert_eq!(x.len(), self.shape.inputs);
        debug_assert_eq!(z.len(), self.state_dim());
        let mut p = 0;
        let mut prev = 0;
        let mut off = 0;
        for (l, &width) in self.shape.layers.iter().enumerate() {
            let fan_in = self.shape.fan_in(l);
            for j in 0..width {
                let w1 = &self.theta[p..p + fan_in];
                let w2 = &self.theta[p + fan_in..p + 2 * fan_in];
                let mut drive1 = self.theta[p + 2 * fan_in];
                let mut drive2 = self.theta[p + 2 * fan_in + 1];
                for i in 0..fan_in {
                    let h = if l == 0 {
                        phi_first(x[i])
                    } else {
                        phi_inner(z[prev + i], self.k)
                    };
                    drive1 += w1[i] * h;
                    drive2 += w2[i] * h;
                }
                let z1 = z[off + j];
                let z2 = z[off + width + j];
                let seq = self.gamma * z1 * z2;
                dz[off + j] = drive1 - seq - self.delta * z1;
                dz[off + width + j] = drive2 - seq - self.delta * z2;
                p += 2 * fan_in + 2;
            }
            prev = off;
            off += 2 * width;
        }
    }

    /// Checked variant of [`rhs`](Self::rhs).
    pub fn try_rhs(&self, x: &[S], z: &[S], dz: &mut [S]) -> Result<()> {
        for (expected, got) in [
            (self.shape.inputs, x.len()),
            (self.state_dim(), z.len()),
            (self.state_dim(), dz.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        self.rhs(x, z, dz);
        Ok(())
    }
}

/// Fluorescent reporter stage `ġ = α·y/(k + y) − δ·g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReporterParams {
    pub alpha: f64,
    pub k_rep: f64,
    pub delta_rep: f64,
}

impl Default for ReporterParams {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            k_rep: 0.8,
            delta_rep: 1.0,
        }
    }
}

impl ReporterParams {
    pub fn steady_state(&self, y: f64) -> f64 {
        self.alpha * y / (self.k_rep + y) / self.delta_rep
    }
}

pub fn reporter_rhs<S: Scalar>(g: S, y: S, rp: &ReporterParams) -> S {
    y.hill(S::constant(rp.k_rep)) * rp.alpha - g * rp.delta_rep
}

/// Non-negative equilibrium of a single perceptron with constant
/// production rates `p1`, `p2`. Returns `(z1, z2)`.
pub fn steady_state_perceptron(p1: f64, p2: f64, globals: &Globals) -> (f64, f64) {
    let gamma = globals.gamma_seq;
    let delta = globals.delta_deg;
    let d = (p1 - p2) / delta;
    // z2 = z1 - d turns the pair into gamma·u² + (delta − gamma·d)·u − p1 = 0.
    let b = delta - gamma * d;
    let disc = (b * b + 4.0 * gamma * p1).sqrt();
    let u = if b >= 0.0 {
        if disc + b == 0.0 {
            0.0
        } else {
            2.0 * p1 / (b + disc)
        }
    } else {
        (disc - b) / (2.0 * gamma)
    };
    let z1 = u.max(0.0);
    let z2 = (z1 - d).max(0.0);
    (z1, z2)
}

impl From<BnnParams> for Map<String, Value> {
    fn from(p: BnnParams) -> Self {
        let mut map = Map::new();
        for (l, layer) in p.layers.iter().enumerate() {
            for (j, q) in layer.iter().enumerate() {
                let key = |name: &str| format!("{name}/{}/{}", l + 1, j + 1);
                map.insert(key("W1"), Value::from(q.w1.clone()));
                map.insert(key("W2"), Value::from(q.w2.clone()));
                map.insert(key("b1"), Value::from(q.b1));
                map.insert(key("b2"), Value::from(q.b2));
            }
        }
        map.insert(
            "globals".into(),
            serde_json::to_value(p.globals).expect("plain struct serializes"),
        );
        map
    }
}

impl TryFrom<Map<String, Value>> for BnnParams {
    type Error = Error;

    fn try_from(map: Map<String, Value>) -> Result<Self> {
        let bad = |msg: String| Error::Config(msg);
        let globals: Globals = match map.get("globals") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| bad(format!("globals: {e}")))?,
            None => return Err(bad("missing \"globals\" block".into())),
        };
        // Collect (l, j) -> fields, inferring the shape from the keys.
        let mut cells: Vec<Vec<[Option<Value>; 4]>> = Vec::new();
        for (key, value) in &map {
            if key == "globals" {
                continue;
            }
            let parts: Vec<&str> = key.split('/').collect();
            let slot = match parts.first() {
                Some(&"W1") => 0,
                Some(&"W2") => 1,
                Some(&"b1") => 2,
                Some(&"b2") => 3,
                _ => return Err(bad(format!("unknown parameter key {key:?}"))),
            };
            let index = |s: Option<&&str>| -> Result<usize> {
                s.and_then(|s| s.parse::<usize>().ok())
                    .filter(|&v| v >= 1)
                    .map(|v| v - 1)
                    .ok_or_else(|| bad(format!("malformed parameter key {key:?}")))
            };
            if parts.len() != 3 {
                return Err(bad(format!("malformed parameter key {key:?}")));
            }
            let (l, j) = (index(parts.get(1))?, index(parts.get(2))?);
            if cells.len() <= l {
                cells.resize_with(l + 1, Vec::new);
            }
            if cells[l].len() <= j {
                cells[l].resize_with(j + 1, Default::default);
            }
            cells[l][j][slot] = Some(value.clone());
        }
        if cells.is_empty() {
            return Err(bad("no perceptron entries".into()));
        }
        let mut layers = Vec::with_capacity(cells.len());
        for (l, row) in cells.into_iter().enumerate() {
            let mut layer = Vec::with_capacity(row.len());
            for (j, fields) in row.into_iter().enumerate() {
                let [w1, w2, b1, b2] = fields.map(|f| {
                    f.ok_or_else(|| bad(format!("incomplete perceptron {}/{}", l + 1, j + 1)))
                });
                let vec = |v: Value| -> Result<Vec<f64>> {
                    serde_json::from_value(v).map_err(|e| bad(format!("weights {}/{}: {e}", l + 1, j + 1)))
                };
                let num = |v: Value| -> Result<f64> {
                    v.as_f64()
                        .ok_or_else(|| bad(format!("bias {}/{} is not a number", l + 1, j + 1)))
                };
                layer.push(Perceptron {
                    w1: vec(w1?)?,
                    w2: vec(w2?)?,
                    b1: num(b1?)?,
                    b2: num(b2?)?,
                });
            }
            layers.push(layer);
        }
        let inputs = layers[0][0].w1.len();
        let shape = BnnShape::new(inputs, layers.iter().map(Vec::len).collect())?;
        BnnParams::new(shape, layers, globals)
    }
}
