//! Dense feed-forward regression network.
//!
//! Hidden layers use ReLU, the output layer is the identity. Weight matrices are
//! stored `fan_out x fan_in`, so a layer computes `W z + b`.
//!
//! The ReLU derivative at exactly zero is taken to be zero.

use crate::error::{Error, Result};
use crate::factors::Sample;
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Relu => x.max(F::zero()),
        }
    }

    #[inline]
    pub fn derivative<F: Scalar>(self, pre: F) -> F {
        match self {
            Activation::Relu => {
                if pre > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

/// Architecture of a network: widths, hidden activation, and initialization seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
            seed,
        }
    }

    /// Hidden layers 80-50-10 over the 80-wide factor input.
    pub fn deep_model_1(seed: u64) -> Self {
        Self::new(80, vec![80, 50, 10], 1, seed)
    }

    /// Hidden layers 80-80-50-50-10-10 over the 80-wide factor input.
    pub fn deep_model_2(seed: u64) -> Self {
        Self::new(80, vec![80, 80, 50, 50, 10, 10], 1, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidSpec("hidden_dims must be non-empty".into()));
        }
        self.validate_dims()
    }

    fn validate_dims(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec(
                "input and output dims must be positive".into(),
            ));
        }
        if let Some(pos) = self.hidden_dims.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!(
                "hidden layer {pos} has width 0"
            )));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }
}

/// One affine map `W z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Layer<F> {
    pub fn zeros(fan_out: usize, fan_in: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "NetworkFile<F>",
    into = "NetworkFile<F>",
    bound = "F: Scalar"
)]
pub struct Network<F> {
    spec: NetworkSpec,
    layers: Vec<Layer<F>>,
}

/// Intermediate values of one forward pass.
///
/// `activations[0]` is the input; `activations[l + 1]` is the activation of
/// `pre_activations[l]`, except the last, which equals the last pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<F> {
    pub pre_activations: Vec<Array1<F>>,
    pub activations: Vec<Array1<F>>,
}

impl<F: Scalar> ForwardTrace<F> {
    pub fn input(&self) -> &Array1<F> {
        &self.activations[0]
    }

    pub fn output_vector(&self) -> &Array1<F> {
        self.activations
            .last()
            .expect("trace has at least the input")
    }

    /// The scalar prediction (first output unit).
    pub fn output(&self) -> F {
        self.output_vector()[0]
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Network<F> {
    /// Builds a network from explicit layers, checking that dimensions chain.
    ///
    /// Unlike [`init_network`], a single affine layer (no hidden layers) is accepted.
    pub fn from_layers(layers: Vec<Layer<F>>, activation: Activation) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidSpec("network needs at least one layer".into()))?;
        let spec = NetworkSpec {
            input_dim: first.fan_in(),
            hidden_dims: layers[..layers.len() - 1]
                .iter()
                .map(Layer::fan_out)
                .collect(),
            output_dim: layers.last().map(Layer::fan_out).unwrap_or(0),
            activation,
            seed: 0,
        };
        Self::with_spec(spec, layers)
    }

    pub(crate) fn with_spec(spec: NetworkSpec, layers: Vec<Layer<F>>) -> Result<Self> {
        spec.validate_dims()?;
        let widths = spec.widths();
        if layers.len() + 1 != widths.len() {
            return Err(Error::InvalidSpec(format!(
                "spec implies {} layers, got {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            if layer.weights.dim() != (fan_out, fan_in) || layer.bias.len() != fan_out {
                return Err(Error::InvalidSpec(format!(
                    "layer {l}: expected W {fan_out}x{fan_in} and b {fan_out}, got W {}x{} and b {}",
                    layer.fan_out(),
                    layer.fan_in(),
                    layer.bias.len()
                )));
            }
            if !layer.is_finite() {
                return Err(Error::NonFiniteParameters("construction"));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Applies `f` to each layer and rechecks the construction invariants.
    pub fn map_layers(&self, mut f: impl FnMut(usize, &mut Layer<F>)) -> Result<Self> {
        let mut layers = self.layers.clone();
        for (l, layer) in layers.iter_mut().enumerate() {
            f(l, layer);
        }
        Self::with_spec(self.spec.clone(), layers)
    }

    pub fn forward(&self, x: &[F]) -> Result<ForwardTrace<F>> {
        forward(self, x)
    }

    /// Prediction without keeping the trace.
    pub fn predict(&self, x: &[F]) -> Result<F> {
        Ok(forward(self, x)?.output())
    }

    /// Predictions for every row of `inputs` in one batched pass.
    pub fn predict_batch(&self, inputs: &Array2<F>) -> Result<Array1<F>> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "predict_batch",
                expected: self.spec.input_dim,
                actual: inputs.ncols(),
            });
        }
        let mut a = inputs.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut p = a.dot(&layer.weights.t());
            p += &layer.bias;
            if l < last {
                let act = self.spec.activation;
                p.mapv_inplace(|v| act.apply(v));
            }
            a = p;
        }
        Ok(a.column(0).to_owned())
    }

    pub fn zero_gradients(&self) -> Gradients<F> {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_out(), l.fan_in()))
                .collect(),
        }
    }
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases, seeded by `spec.seed`.
pub fn init_network<F: Scalar>(spec: &NetworkSpec) -> Result<Network<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let widths = spec.widths();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = F::of((6.0 / fan_in as f64).sqrt());
            let weights =
                Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound));
            Layer {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Network::with_spec(spec.clone(), layers)
}

pub fn forward<F: Scalar>(net: &Network<F>, x: &[F]) -> Result<ForwardTrace<F>> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward",
            expected: net.input_dim(),
            actual: x.len(),
        });
    }
    let last = net.layers.len() - 1;
    let mut pre_activations = Vec::with_capacity(net.layers.len());
    let mut activations = Vec::with_capacity(net.layers.len() + 1);
    activations.push(Array1::from(x.to_vec()));
    for (l, layer) in net.layers.iter().enumerate() {
        let z = layer.weights.dot(&activations[l]) + &layer.bias;
        let a = if l < last {
            let act = net.spec.activation;
            z.mapv(|v| act.apply(v))
        } else {
            z.clone()
        };
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(ForwardTrace {
        pre_activations,
        activations,
    })
}

/// Mean of squared differences.
pub fn loss_mse<F: Scalar>(predictions: &[F], targets: &[F]) -> Result<F> {
    if predictions.is_empty() {
        return Err(Error::Empty("loss_mse"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "loss_mse",
            expected: predictions.len(),
            actual: targets.len(),
        });
    }
    let ss: F = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(ss / F::of_usize(predictions.len()))
}

/// Gradient of the single-sample squared error `(f(x) - target)^2`.
pub fn backward<F: Scalar>(
    net: &Network<F>,
    trace: &ForwardTrace<F>,
    target: F,
) -> Result<Gradients<F>> {
    let n = net.layers.len();
    if trace.pre_activations.len() != n || trace.activations.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            context: "backward: trace depth",
            expected: n,
            actual: trace.pre_activations.len(),
        });
    }
    for (l, layer) in net.layers.iter().enumerate() {
        if trace.pre_activations[l].len() != layer.fan_out()
            || trace.activations[l].len() != layer.fan_in()
        {
            return Err(Error::DimensionMismatch {
                context: "backward: trace width",
                expected: layer.fan_out(),
                actual: trace.pre_activations[l].len(),
            });
        }
    }
    if net.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "backward: scalar target needs output_dim 1",
            expected: 1,
            actual: net.output_dim(),
        });
    }

    let two = F::of(2.0);
    let mut delta = Array1::from_elem(1, two * (trace.output() - target));
    let mut grads = Vec::with_capacity(n);
    for l in (0..n).rev() {
        let layer = &net.layers[l];
        let a_in = &trace.activations[l];
        let gw = outer(delta.view(), a_in.view());
        let gb = delta.clone();
        if l > 0 {
            let act = net.spec.activation;
            let mut back = layer.weights.t().dot(&delta);
            Zip::from(&mut back)
                .and(&trace.pre_activations[l - 1])
                .for_each(|d, &p| *d *= act.derivative(p));
            delta = back;
        }
        grads.push(Layer {
            weights: gw,
            bias: gb,
        });
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

fn outer<F: Scalar>(a: ArrayView1<F>, b: ArrayView1<F>) -> Array2<F> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Optimizer and schedule settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_adam: 1e-8,
            epochs: 100,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon_adam > 0.0) {
            return bad("epsilon_adam must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        Ok(())
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    m: Vec<Layer<F>>,
    v: Vec<Layer<F>>,
    step: i32,
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
}

impl<F: Scalar> Adam<F> {
    pub fn new(net: &Network<F>, config: &TrainConfig) -> Self {
        let zeros = net.zero_gradients().layers;
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr: F::of(config.learning_rate),
            beta1: F::of(config.beta1),
            beta2: F::of(config.beta2),
            eps: F::of(config.epsilon_adam),
        }
    }

    /// Applies one bias-corrected Adam update in place.
    pub fn step(&mut self, layers: &mut [Layer<F>], grads: &Gradients<F>) {
        self.step += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let one = F::one();
        let c1 = one - b1.powi(self.step);
        let c2 = one - b2.powi(self.step);
        let update = |p: &mut F, g: &F, m: &mut F, v: &mut F| {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}

/// Mini-batch Adam on mean squared error. Returns the trained copy; `net` is untouched.
pub fn train<F: Scalar>(
    net: &Network<F>,
    samples: &[Sample<F>],
    config: &TrainConfig,
) -> Result<Network<F>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("train"));
    }
    let dim = net.input_dim();
    if net.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "train: output_dim",
            expected: 1,
            actual: net.output_dim(),
        });
    }
    if let Some(bad) = samples.iter().find(|s| s.input.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "train: sample input",
            expected: dim,
            actual: bad.input.len(),
        });
    }

    let n = samples.len();
    let batch_cap = config.batch_size.min(n);
    let mut layers = net.layers.clone();
    let mut adam = Adam::new(net, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut xb = Array2::<F>::zeros((batch_cap, dim));
    let mut yb = Array1::<F>::zeros(batch_cap);
    let act = net.spec.activation;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(batch_cap).enumerate() {
            let b = chunk.len();
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r)
                    .assign(&ArrayView1::from(samples[i].input.as_slice()));
                yb[r] = samples[i].target;
            }
            let x = xb.slice(ndarray::s![..b, ..]);
            let y = yb.slice(ndarray::s![..b]);
            let (loss, grads) = batch_gradients(&layers, act, x, y);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    loss: loss.to_f64_lossy(),
                });
            }
            adam.step(&mut layers, &grads);
        }
    }
    Network::with_spec(net.spec.clone(), layers).map_err(|_| Error::NonFiniteParameters("training"))
}

/// Loss and gradient of the batch-mean squared error.
pub fn batch_gradients<F: Scalar>(
    layers: &[Layer<F>],
    act: Activation,
    x: ndarray::ArrayView2<F>,
    y: ndarray::ArrayView1<F>,
) -> (F, Gradients<F>) {
    let n = layers.len();
    let b = x.nrows();
    let mut acts: Vec<Array2<F>> = Vec::with_capacity(n + 1);
    let mut pres: Vec<Array2<F>> = Vec::with_capacity(n);
    acts.push(x.to_owned());
    for (l, layer) in layers.iter().enumerate() {
        let mut p = acts[l].dot(&layer.weights.t());
        p += &layer.bias;
        let a = if l + 1 < n {
            p.mapv(|v| act.apply(v))
        } else {
            p.clone()
        };
        pres.push(p);
        acts.push(a);
    }
    let out = acts[n].column(0);
    let bf = F::of_usize(b);
    let mut loss = F::zero();
    let mut delta = Array2::<F>::zeros((b, 1));
    for r in 0..b {
        let e = out[r] - y[r];
        loss += e * e;
        delta[[r, 0]] = F::of(2.0) * e / bf;
    }
    loss /= bf;

    let mut grads = Vec::with_capacity(n);
    for l in (0..n).rev() {
        let gw = delta.t().dot(&acts[l]);
        let gb = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&layers[l].weights);
            Zip::from(&mut back)
                .and(&pres[l - 1])
                .for_each(|d, &p| *d *= act.derivative(p));
            delta = back;
        }
        grads.push(Layer {
            weights: gw,
            bias: gb,
        });
    }
    grads.reverse();
    (loss, Gradients { layers: grads })
}

/// Mean squared error of `net` over `samples`.
pub fn evaluate_mse<F: Scalar>(net: &Network<F>, samples: &[Sample<F>]) -> Result<F> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluate_mse"));
    }
    let inputs = stack_inputs(samples, net.input_dim())?;
    let preds = net.predict_batch(&inputs)?;
    let targets: Vec<F> = samples.iter().map(|s| s.target).collect();
    loss_mse(preds.as_slice().expect("contiguous"), &targets)
}

pub(crate) fn stack_inputs<F: Scalar>(samples: &[Sample<F>], dim: usize) -> Result<Array2<F>> {
    let mut x = Array2::zeros((samples.len(), dim));
    for (r, s) in samples.iter().enumerate() {
        if s.input.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "sample input",
                expected: dim,
                actual: s.input.len(),
            });
        }
        x.row_mut(r).assign(&ArrayView1::from(s.input.as_slice()));
    }
    Ok(x)
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct NetworkFile<F> {
    spec: NetworkSpec,
    layers: Vec<LayerFile<F>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct LayerFile<F> {
    w: Vec<Vec<F>>,
    b: Vec<F>,
}

impl<F: Scalar> From<Network<F>> for NetworkFile<F> {
    fn from(net: Network<F>) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerFile {
                w: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                b: l.bias.to_vec(),
            })
            .collect();
        NetworkFile {
            spec: net.spec,
            layers,
        }
    }
}

impl<F: Scalar> TryFrom<NetworkFile<F>> for Network<F> {
    type Error = Error;

    fn try_from(file: NetworkFile<F>) -> Result<Self> {
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(l, lf)| {
                let rows = lf.w.len();
                let cols = lf.w.first().map_or(0, Vec::len);
                if lf.w.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidSpec(format!("layer {l}: ragged weight rows")));
                }
                let flat: Vec<F> = lf.w.into_iter().flatten().collect();
                let weights = Array2::from_shape_vec((rows, cols), flat)
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(lf.b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::with_spec(file.spec, layers)
    }
}
