//! Small dense networks: ReLU hidden layers, batched forward and reverse-mode
//! passes, Adam, and a central-difference gradient oracle.
//!
//! Weights are stored `out x in`, so a batch `X` (rows are samples) maps to
//! `X W^T + b`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "solarbatt-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn fresh_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// Logistic squash onto `(0, 1)`.
    Sigmoid,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
        }
    }

    /// Multiply `grad` in place by the activation derivative, given the
    /// pre-activation `z` and post-activation `a`.
    fn backprop(self, grad: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(z).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Sigmoid => Zip::from(grad).and(a).for_each(|g, &a| *g *= a * (1.0 - a)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameter-shaped container, used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }

    fn same_shape(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len())
    }
}

/// Multilayer perceptron with ReLU hidden layers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "MlpRecord", try_from = "MlpRecord")]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub output_activation: Activation,
    /// Changes whenever the parameters do; lets `backward` reject caches
    /// produced by an older parameter set.
    revision: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.output_activation == other.output_activation
    }
}

/// Activations saved by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    revision: u64,
    /// Input to each layer (the batch itself for layer 0).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Build a network with fan-in scaled uniform weights in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and zero biases.
pub fn init_mlp(layer_sizes: &[usize], output_activation: Activation, seed: u64) -> Result<Mlp> {
    if layer_sizes.len() < 2 {
        return Err(Error::config("a network needs at least an input and an output size"));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config(format!("layer sizes must be positive: {layer_sizes:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            Layer {
                weights: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    rng.random_range(-bound..bound)
                }),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(Mlp::from_layers(layers, output_activation))
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>, output_activation: Activation) -> Self {
        Mlp {
            layers,
            output_activation,
            revision: fresh_revision(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    /// Mutable access to every parameter. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.revision = fresh_revision();
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    fn check_consistent(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        if let Some((i, l)) = self
            .layers
            .iter()
            .enumerate()
            .find(|(_, l)| l.bias.len() != l.outputs())
        {
            return Err(Error::Shape(format!(
                "layer {i} bias has length {} for {} outputs",
                l.bias.len(),
                l.outputs()
            )));
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            Activation::Relu
        }
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            let mut next = z.clone();
            self.activation(i).apply(&mut next);
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(ForwardCache {
            revision: self.revision,
            inputs,
            pre,
            output: a,
        })
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let mut a = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            self.activation(i).apply(&mut z);
            a = z;
        }
        Ok(a)
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let cache = self.forward_batch(view)?;
        Ok((cache.output.row(0).to_vec(), cache))
    }

    /// Reverse-mode pass. `output_grad` is dL/d(output) with the same shape
    /// as the cached output; returns parameter gradients (summed over the
    /// batch) and dL/d(input).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.revision != self.revision || cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract(
                "forward cache was produced by a different parameter set".into(),
            ));
        }
        if output_grad.dim() != cache.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.dim(),
                cache.output.dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for i in (0..self.layers.len()).rev() {
            let post = if i + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[i + 1]
            };
            self.activation(i).backprop(&mut delta, &cache.pre[i], post);
            let weights = delta.t().dot(&cache.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            let next_delta = delta.dot(&self.layers[i].weights);
            grads.push(Layer { weights, bias });
            delta = next_delta;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}

/// Central-difference estimate of d scalar_fn(net(input)) / d params.
/// The step for parameter `p` is `1e-6 * max(1, |p|)`.
pub fn finite_diff_grad<F>(net: &Mlp, input: &[f64], scalar_fn: F) -> Result<Gradients>
where
    F: Fn(&[f64]) -> f64,
{
    finite_diff_params(net, |probe| Ok(scalar_fn(&probe.forward(input)?.0)))
}

/// Central differences of an arbitrary function of the network's
/// parameters, e.g. a batch objective routed through other networks.
pub fn finite_diff_params<F>(net: &Mlp, objective: F) -> Result<Gradients>
where
    F: Fn(&Mlp) -> Result<f64>,
{
    fn slot(net: &mut Mlp, layer: usize, j: usize) -> &mut f64 {
        let l = &mut net.layers[layer];
        let n_w = l.weights.len();
        if j < n_w {
            l.weights.iter_mut().nth(j).expect("weight index")
        } else {
            &mut l.bias[j - n_w]
        }
    }

    let mut probe = net.clone();
    let mut grads = Gradients::zeros_like(net);
    for l in 0..net.layers.len() {
        let count = net.layers[l].weights.len() + net.layers[l].bias.len();
        for j in 0..count {
            let original = *slot(&mut probe, l, j);
            let h = 1e-6 * original.abs().max(1.0);
            *slot(&mut probe, l, j) = original + h;
            let plus = objective(&probe)?;
            *slot(&mut probe, l, j) = original - h;
            let minus = objective(&probe)?;
            *slot(&mut probe, l, j) = original;
            let g = (plus - minus) / (2.0 * h);
            let target = &mut grads.layers[l];
            let n_w = target.weights.len();
            if j < n_w {
                *target.weights.iter_mut().nth(j).expect("weight index") = g;
            } else {
                target.bias[j - n_w] = g;
            }
        }
    }
    Ok(grads)
}

/// Largest entrywise relative difference, `|a - b| / max(|a|, |b|, floor)`.
/// The floor keeps entries that are zero in both (dead ReLU units) or
/// dominated by rounding from dominating the ratio.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(net: &Mlp) -> Self {
        AdamState {
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step: 0,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            epsilon: Self::EPSILON,
        }
    }
}

/// One bias-corrected Adam step, descending `grads`.
pub fn adam_update(net: &mut Mlp, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    if !grads.same_shape(net)
        || !state.first_moment.same_shape(net)
        || !state.second_moment.same_shape(net)
    {
        return Err(Error::Shape("gradient or optimizer state shape mismatch".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    net.revision = fresh_revision();
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first_moment.layers)
        .zip(&mut state.second_moment.layers)
    {
        let step = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(step);
        Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(step);
    }
    Ok(())
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(format!("tau must be in [0, 1], got {tau}")));
    }
    if target.layer_sizes() != online.layer_sizes() {
        return Err(Error::Shape(format!(
            "target {:?} and online {:?} differ in shape",
            target.layer_sizes(),
            online.layer_sizes()
        )));
    }
    target.revision = fresh_revision();
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weights)
            .and(&o.weights)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        Zip::from(&mut t.bias)
            .and(&o.bias)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Serialized form
// ---------------------------------------------------------------------------

/// Flat, self-describing form of an [`Mlp`]: layer sizes, activation tags
/// and all parameters (per layer: weights row-major, then biases).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpRecord {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub params: Vec<f64>,
}

impl From<Mlp> for MlpRecord {
    fn from(net: Mlp) -> Self {
        MlpRecord {
            layer_sizes: net.layer_sizes(),
            hidden_activation: Activation::Relu,
            output_activation: net.output_activation,
            params: net.params().copied().collect(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(rec: MlpRecord) -> Result<Self> {
        if rec.hidden_activation != Activation::Relu {
            return Err(Error::Format("only relu hidden layers are supported".into()));
        }
        if rec.layer_sizes.len() < 2 || rec.layer_sizes.contains(&0) {
            return Err(Error::Format(format!("bad layer sizes {:?}", rec.layer_sizes)));
        }
        let expected: usize = rec.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if rec.params.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} parameters for {:?}, found {}",
                rec.layer_sizes,
                rec.params.len()
            )));
        }
        let mut rest = rec.params.as_slice();
        let mut layers = Vec::new();
        for w in rec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let (wts, tail) = rest.split_at(fan_in * fan_out);
            let (bias, tail) = tail.split_at(fan_out);
            layers.push(Layer {
                weights: Array2::from_shape_vec((fan_out, fan_in), wts.to_vec())
                    .map_err(|e| Error::Format(e.to_string()))?,
                bias: Array1::from(bias.to_vec()),
            });
            rest = tail;
        }
        let net = Mlp::from_layers(layers, rec.output_activation);
        net.check_consistent()?;
        Ok(net)
    }
}

/// Versioned on-disk container for one network and its optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub format: String,
    pub version: u32,
    pub network: Mlp,
    pub optimizer: Option<AdamState>,
}

impl NetworkCheckpoint {
    pub fn new(network: Mlp, optimizer: Option<AdamState>) -> Self {
        NetworkCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            network,
            optimizer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported network container {} v{}",
                self.format, self.version
            )));
        }
        if let Some(opt) = &self.optimizer {
            if !opt.first_moment.same_shape(&self.network)
                || !opt.second_moment.same_shape(&self.network)
            {
                return Err(Error::Format("optimizer state does not match network".into()));
            }
        }
        Ok(())
    }
}
