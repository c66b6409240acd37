use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::model::{Control, ModelParams};
use crate::solver::TabularPolicy;

/// Shared two-layer tanh trunk with three affine heads, one per control.
///
/// Input is `(x / x_scale, one-hot regime)`. All parameters live in one flat
/// vector laid out as `W1, b1, W2, b2, W3, b3`, weights row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    x_scale: f64,
    regimes: usize,
    width: usize,
    theta: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub raw: [f64; 3],
}

/// Head outputs after squashing, before any projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutputs {
    pub retention: f64,
    pub risky: f64,
    /// Dividend head in `(0, 1)`; values below the minimum dividend map to 0.
    pub dividend: f64,
    /// Derivative of each entry with respect to its own raw head output.
    pub slope: [f64; 3],
}

/// An admissible control together with `∂(a, s, l)/∂raw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedControl {
    pub control: Control,
    /// `jacobian[c][r]` is the derivative of control `c` with respect to raw output `r`.
    pub jacobian: [[f64; 3]; 3],
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Squashes raw outputs per head: `a = Ma + (1 − Ma) σ`, `s = Ms σ`, `l = σ`.
pub fn heads(params: &ModelParams, raw: [f64; 3]) -> HeadOutputs {
    let [sa, ss, sl] = raw.map(sigmoid);
    let ma = params.min_retention;
    HeadOutputs {
        retention: ma + (1.0 - ma) * sa,
        risky: params.max_risky * ss,
        dividend: sl,
        slope: [
            (1.0 - ma) * sa * (1.0 - sa),
            params.max_risky * ss * (1.0 - ss),
            sl * (1.0 - sl),
        ],
    }
}

/// Maps raw outputs at surplus `x` to an admissible control.
///
/// A dividend head below `Ml` becomes exactly 0. If `s + l > 1` the dividend
/// gives way to `1 − s`. At or below the threshold `s = l = 0`.
pub fn squash(params: &ModelParams, x: f64, raw: [f64; 3]) -> SquashedControl {
    let h = heads(params, raw);
    let mut jac = [[0.0; 3]; 3];
    jac[0][0] = h.slope[0];
    if x <= params.threshold {
        return SquashedControl {
            control: Control::new(h.retention, 0.0, 0.0),
            jacobian: jac,
        };
    }
    jac[1][1] = h.slope[1];
    let mut l = 0.0;
    if h.dividend >= params.min_dividend {
        l = h.dividend;
        jac[2][2] = h.slope[2];
    }
    if h.risky + l > 1.0 {
        l = 1.0 - h.risky;
        jac[2] = [0.0, -h.slope[1], 0.0];
    }
    SquashedControl {
        control: Control::new(h.retention, h.risky, l),
        jacobian: jac,
    }
}

impl PolicyNet {
    /// Glorot-uniform weights and zero biases, drawn from `seed`.
    pub fn new(params: &ModelParams, width: usize, seed: u64) -> Self {
        let regimes = params.regime_count();
        let mut net = Self {
            x_scale: params.boundary,
            regimes,
            width,
            theta: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (inputs, outputs) in net.layer_dims() {
            let bound = (6.0 / (inputs + outputs) as f64).sqrt();
            net.theta
                .extend((0..inputs * outputs).map(|_| rng.random_range(-bound..bound)));
            net.theta.extend(std::iter::repeat_n(0.0, outputs));
        }
        net
    }

    /// Same as [`PolicyNet::new`] but with the input scale set to `B + h`
    /// of `grid`, so every lattice node maps into `[−1, 1]`.
    pub fn for_grid(params: &ModelParams, grid: &Grid, width: usize, seed: u64) -> Self {
        let mut net = Self::new(params, width, seed);
        net.x_scale = grid.x(grid.len() - 1);
        net
    }

    fn input_dim(&self) -> usize {
        1 + self.regimes
    }

    /// `(inputs, outputs)` of each affine layer.
    pub fn layer_dims(&self) -> [(usize, usize); 3] {
        [
            (self.input_dim(), self.width),
            (self.width, self.width),
            (self.width, 3),
        ]
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn x_scale(&self) -> f64 {
        self.x_scale
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn offsets(&self) -> [usize; 6] {
        let [(i1, o1), (i2, o2), (i3, o3)] = self.layer_dims();
        let w1 = 0;
        let b1 = w1 + i1 * o1;
        let w2 = b1 + o1;
        let b2 = w2 + i2 * o2;
        let w3 = b2 + o2;
        let b3 = w3 + i3 * o3;
        [w1, b1, w2, b2, w3, b3]
    }

    fn affine(&self, w: usize, b: usize, inputs: &[f64], outputs: usize, out: &mut Vec<f64>) {
        let n = inputs.len();
        out.clear();
        out.extend((0..outputs).map(|o| {
            let row = &self.theta[w + o * n..w + (o + 1) * n];
            self.theta[b + o] + row.iter().zip(inputs).map(|(a, b)| a * b).sum::<f64>()
        }));
    }

    pub fn trace(&self, x: f64, regime: usize) -> Trace {
        assert!(regime < self.regimes, "regime {regime} out of range");
        let mut input = vec![0.0; self.input_dim()];
        input[0] = x / self.x_scale;
        input[1 + regime] = 1.0;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let mut h1 = Vec::with_capacity(self.width);
        self.affine(w1, b1, &input, self.width, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = Vec::with_capacity(self.width);
        self.affine(w2, b2, &h1, self.width, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut raw = Vec::with_capacity(3);
        self.affine(w3, b3, &h2, 3, &mut raw);
        Trace {
            input,
            h1,
            h2,
            raw: [raw[0], raw[1], raw[2]],
        }
    }

    pub fn raw(&self, x: f64, regime: usize) -> [f64; 3] {
        self.trace(x, regime).raw
    }

    pub fn forward(&self, params: &ModelParams, x: f64, regime: usize) -> Control {
        squash(params, x, self.raw(x, regime)).control
    }

    /// The net's control at every node of `grid`.
    pub fn tabulate(&self, params: &ModelParams, grid: &Grid) -> TabularPolicy {
        TabularPolicy::from_fn(grid, self.regimes, |x, l| self.forward(params, x, l))
    }

    /// Adds `∂L/∂θ` to `grad` given `∂L/∂raw` at the traced input.
    pub fn backward(&self, trace: &Trace, d_raw: [f64; 3], grad: &mut [f64]) {
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let width = self.width;
        let mut d_h2 = vec![0.0; width];
        for (o, &d) in d_raw.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[b3 + o] += d;
            for k in 0..width {
                grad[w3 + o * width + k] += d * trace.h2[k];
                d_h2[k] += d * self.theta[w3 + o * width + k];
            }
        }
        let mut d_h1 = vec![0.0; width];
        for o in 0..width {
            let d = d_h2[o] * (1.0 - trace.h2[o] * trace.h2[o]);
            grad[b2 + o] += d;
            let row = w2 + o * width;
            for k in 0..width {
                grad[row + k] += d * trace.h1[k];
                d_h1[k] += d * self.theta[row + k];
            }
        }
        let n = trace.input.len();
        for o in 0..width {
            let d = d_h1[o] * (1.0 - trace.h1[o] * trace.h1[o]);
            grad[b1 + o] += d;
            for (k, &z) in trace.input.iter().enumerate() {
                grad[w1 + o * n + k] += d * z;
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let bounds = [(w1, b1, w2), (w2, b2, w3), (w3, b3, self.theta.len())];
        let layers = self
            .layer_dims()
            .iter()
            .zip(bounds)
            .map(|(&(inputs, outputs), (w, b, end))| LayerCheckpoint {
                inputs,
                outputs,
                weights: self.theta[w..b].to_vec(),
                bias: self.theta[b..end].to_vec(),
            })
            .collect();
        Checkpoint {
            x_scale: self.x_scale,
            regimes: self.regimes,
            layers,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if ck.layers.len() != 3 {
            return Err(bad(format!("expected 3 layers, found {}", ck.layers.len())));
        }
        if !(ck.x_scale > 0.0) || ck.regimes == 0 {
            return Err(bad("x_scale must be positive and regimes nonzero".into()));
        }
        let width = ck.layers[0].outputs;
        let net = Self {
            x_scale: ck.x_scale,
            regimes: ck.regimes,
            width,
            theta: Vec::new(),
        };
        let mut theta = Vec::new();
        for (i, (layer, (inputs, outputs))) in ck.layers.iter().zip(net.layer_dims()).enumerate() {
            if (layer.inputs, layer.outputs) != (inputs, outputs) {
                return Err(bad(format!(
                    "layers[{i}] is {}x{}, expected {inputs}x{outputs}",
                    layer.inputs, layer.outputs
                )));
            }
            if layer.weights.len() != inputs * outputs || layer.bias.len() != outputs {
                return Err(bad(format!("layers[{i}] has the wrong number of weights")));
            }
            theta.extend_from_slice(&layer.weights);
            theta.extend_from_slice(&layer.bias);
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite weight".into()));
        }
        Ok(Self { theta, ..net })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ck)
    }
}

/// Serialized form of a [`PolicyNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub x_scale: f64,
    pub regimes: usize,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCheckpoint {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, one row per output.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}
