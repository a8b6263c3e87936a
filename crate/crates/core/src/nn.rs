//! Small dense feed-forward networks with piecewise-affine activations.
//!
//! Everything is `f64` and allocation-light; networks are a few hundred
//! units wide at most. Parameters are stored row-major (`out × in`) and the
//! flat parameter order used by the optimizers is, per layer, the weights
//! followed by the bias.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Activation applied on every hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Activation on the output layer. `Clamp` is a hard clip to a box, which keeps
/// the whole network piecewise affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Clamp { low: Vec<f64>, high: Vec<f64> },
}

/// One dense layer `z = W x + b` with `W` stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    /// Pre-activation `W x + b`.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *zo += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        z
    }
}

/// Dense network: ReLU (or identity) hidden layers and a configurable output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    hidden_activation: Activation,
    output_activation: OutputActivation,
}

/// Intermediate values of one forward pass, needed by [`Mlp::backward_from_trace`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `inputs[k]` is the input of layer `k`; `inputs[0]` is the network input.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pub pre_activations: Vec<Vec<f64>>,
    /// Final output after the output activation.
    pub output: Vec<f64>,
}

/// Per-parameter gradients with the same shape as the network they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradTape {
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(
        layers: Vec<Layer>,
        hidden_activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            check_len(
                "layer weights",
                layer.weights.len(),
                layer.inputs * layer.outputs,
            )?;
            check_len("layer bias", layer.bias.len(), layer.outputs)?;
            if k > 0 && layers[k - 1].outputs != layer.inputs {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but layer {} produces {}",
                    layer.inputs,
                    k - 1,
                    layers[k - 1].outputs
                )));
            }
        }
        if let OutputActivation::Clamp { low, high } = &output_activation {
            let m = layers.last().map(|l| l.outputs).unwrap_or(0);
            check_len("clamp low", low.len(), m)?;
            check_len("clamp high", high.len(), m)?;
            if low.iter().zip(high).any(|(l, h)| !(l <= h)) {
                return Err(Error::Shape("clamp bounds must satisfy low <= high".into()));
            }
        }
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    /// He-initialised network with the given layer widths `[n, h1, ..., m]`
    /// and zero biases.
    pub fn random<R: Rng + ?Sized>(
        widths: &[usize],
        hidden_activation: Activation,
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Shape("need at least input and output widths".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let mut layer = Layer::zeros(w[0], w[1]);
                layer
                    .weights
                    .iter_mut()
                    .for_each(|v| *v = normal.sample(rng));
                layer
            })
            .collect();
        Self::new(layers, hidden_activation, output_activation)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> &OutputActivation {
        &self.output_activation
    }

    pub fn set_output_activation(&mut self, output: OutputActivation) -> Result<()> {
        let rebuilt = Self::new(self.layers.clone(), self.hidden_activation, output)?;
        *self = rebuilt;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Network output including the output activation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let raw = self.forward_raw(x)?;
        Ok(self.apply_output(raw))
    }

    /// Network output before the output activation (the last affine layer).
    pub fn forward_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", x.len(), self.input_dim())?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&h);
            if k < last {
                z.iter_mut()
                    .for_each(|v| *v = self.hidden_activation.apply(*v));
            }
            h = z;
        }
        Ok(h)
    }

    fn apply_output(&self, mut raw: Vec<f64>) -> Vec<f64> {
        if let OutputActivation::Clamp { low, high } = &self.output_activation {
            for ((v, lo), hi) in raw.iter_mut().zip(low).zip(high) {
                *v = v.clamp(*lo, *hi);
            }
        }
        raw
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_len("network input", x.len(), self.input_dim())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&h);
            inputs.push(h);
            h = if k < last {
                z.iter().map(|v| self.hidden_activation.apply(*v)).collect()
            } else {
                z.clone()
            };
            pre_activations.push(z);
        }
        let output = self.apply_output(h);
        Ok(ForwardTrace {
            inputs,
            pre_activations,
            output,
        })
    }

    /// Gradient of `upstream · forward(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradTape> {
        let trace = self.forward_trace(x)?;
        let mut tape = GradTape::zeros_like(self);
        self.backward_from_trace(&trace, upstream, &mut tape)?;
        Ok(tape)
    }

    /// Accumulates the gradient of `upstream · output` into `tape` and returns
    /// the gradient with respect to the network input.
    pub fn backward_from_trace(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        tape: &mut GradTape,
    ) -> Result<Vec<f64>> {
        check_len("upstream gradient", upstream.len(), self.output_dim())?;
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = upstream.to_vec();
        if let OutputActivation::Clamp { low, high } = &self.output_activation {
            let raw = &trace.pre_activations[last];
            for (i, d) in delta.iter_mut().enumerate() {
                if raw[i] < low[i] || raw[i] > high[i] {
                    *d = 0.0;
                }
            }
        }
        self.backward_raw_from_trace(trace, &delta, tape)
    }

    /// Like [`backward_from_trace`](Self::backward_from_trace) but for the
    /// output before the output activation.
    pub fn backward_raw_from_trace(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        tape: &mut GradTape,
    ) -> Result<Vec<f64>> {
        check_len("upstream gradient", upstream.len(), self.output_dim())?;
        check_len("gradient tape", tape.layers.len(), self.layers.len())?;
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = upstream.to_vec();

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k < last {
                for (d, z) in delta.iter_mut().zip(&trace.pre_activations[k]) {
                    *d *= self.hidden_activation.derivative(*z);
                }
            }
            let input = &trace.inputs[k];
            let grad = &mut tape.layers[k];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                grad.bias[o] += d;
                let row = &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            let mut next = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Parameters flattened in optimizer order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("parameter vector", params.len(), self.param_count())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkFile {
            format: NETWORK_FORMAT.into(),
            version: NETWORK_VERSION,
            network: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        if file.format != NETWORK_FORMAT || file.version != NETWORK_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!(
                "unsupported network format {} v{}",
                file.format, file.version
            )));
        }
        let Mlp {
            layers,
            hidden_activation,
            output_activation,
        } = file.network;
        Self::new(layers, hidden_activation, output_activation)
    }
}

const NETWORK_FORMAT: &str = "policed-mlp";
const NETWORK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    format: String,
    version: u32,
    network: Mlp,
}

impl GradTape {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= factor);
            l.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &GradTape) -> Result<()> {
        check_len("gradient tape", other.layers.len(), self.layers.len())?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            check_len("gradient layer", b.weights.len(), a.weights.len())?;
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .all(|v| v.is_finite())
    }
}

/// One plain gradient-descent step, returning the updated network.
pub fn sgd_step(net: &Mlp, tape: &GradTape, lr: f64) -> Result<Mlp> {
    if !(lr > 0.0) {
        return Err(Error::Training(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !tape.is_finite() {
        return Err(Error::Training("non-finite gradient in SGD step".into()));
    }
    check_len("gradient tape", tape.layers.len(), net.layers.len())?;
    let mut out = net.clone();
    for (l, g) in out.layers.iter_mut().zip(&tape.layers) {
        check_len("gradient layer", g.weights.len(), l.weights.len())?;
        l.weights
            .iter_mut()
            .zip(&g.weights)
            .for_each(|(w, d)| *w -= lr * d);
        l.bias
            .iter_mut()
            .zip(&g.bias)
            .for_each(|(b, d)| *b -= lr * d);
    }
    Ok(out)
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, size: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; size],
            v: vec![0.0; size],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam parameters", params.len(), self.m.len())?;
        check_len("adam gradients", grads.len(), self.m.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient at flat parameter index {i}"
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
