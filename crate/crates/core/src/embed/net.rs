use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::all_finite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f32) -> f32 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f32) -> f32 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected layer `act(W x + b)` with `W` stored row-major as
/// `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f32>, bias: Vec<f32>, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidParameter("layer dimensions must be positive".into()));
        }
        check_dim(in_dim * out_dim, weights.len())?;
        check_dim(out_dim, bias.len())?;
        if !all_finite(&weights) || !all_finite(&bias) {
            return Err(Error::NonFinite("layer parameter"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn pre_activation(&self, x: &[f32], z: &mut Vec<f32>) {
        z.clear();
        z.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b
        }));
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Per-layer parameter gradients (same shapes as the layer).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerGrads {
    fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn is_finite(&self) -> bool {
        all_finite(&self.weights) && all_finite(&self.bias)
    }
}

/// Gradients of a batch loss with respect to parameters and inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub inputs: Vec<Vec<f32>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `layer_inputs[l][i]`: input of layer `l` for sample `i`.
    layer_inputs: Vec<Vec<Vec<f32>>>,
    /// `pre_activations[l][i]`: `W x + b` of layer `l` for sample `i`.
    pre_activations: Vec<Vec<Vec<f32>>>,
    pub outputs: Vec<Vec<f32>>,
}

/// A stack of dense layers mapping `in_dim` inputs to `out_dim` representations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    layers: Vec<Dense>,
}

impl EmbeddingNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].out_dim, pair[1].in_dim)?;
        }
        Ok(Self { layers })
    }

    /// `in_dim -> hidden[0] (relu) -> ... -> out_dim (identity)`, He-initialised
    /// weights and zero biases.
    pub fn init(in_dim: usize, hidden: &[usize], out_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(Error::InvalidParameter("layer dimensions must be positive".into()));
            }
            let last = l == dims.len() - 2;
            let activation = if last { Activation::Identity } else { Activation::Relu };
            let gain = if last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt())
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let weights = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng) as f32).collect();
            layers.push(Dense::new(fan_in, fan_out, weights, vec![0.0; fan_out], activation)?);
        }
        Self::new(layers)
    }

    /// Single identity layer with identity weights.
    pub fn identity(dim: usize) -> Self {
        let mut layer = Dense::zeros(dim, dim, Activation::Identity);
        for i in 0..dim {
            layer.weights[i * dim + i] = 1.0;
        }
        Self { layers: vec![layer] }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        check_dim(self.in_dim(), x.len())?;
        if !all_finite(x) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    pub fn forward_one(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.pre_activation(&cur, &mut z);
            cur.clear();
            cur.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        Ok(cur)
    }

    pub fn forward<V: AsRef<[f32]>>(&self, inputs: &[V]) -> Result<Vec<Vec<f32>>> {
        inputs.iter().map(|x| self.forward_one(x.as_ref())).collect()
    }

    pub fn forward_trace<V: AsRef<[f32]>>(&self, inputs: &[V]) -> Result<ForwardTrace> {
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current: Vec<Vec<f32>> = Vec::with_capacity(inputs.len());
        for x in inputs {
            self.check_input(x.as_ref())?;
            current.push(x.as_ref().to_vec());
        }
        for layer in &self.layers {
            let mut zs = Vec::with_capacity(current.len());
            let mut next = Vec::with_capacity(current.len());
            for x in &current {
                let mut z = Vec::with_capacity(layer.out_dim);
                layer.pre_activation(x, &mut z);
                next.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
                zs.push(z);
            }
            layer_inputs.push(std::mem::replace(&mut current, next));
            pre_activations.push(zs);
        }
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
            outputs: current,
        })
    }

    /// Backpropagates per-sample output gradients through a recorded forward
    /// pass. Parameter gradients are summed over the batch.
    pub fn backward(&self, trace: &ForwardTrace, output_grads: &[Vec<f32>]) -> Result<Gradients> {
        check_dim(trace.outputs.len(), output_grads.len())?;
        let mut layer_grads: Vec<LayerGrads> = self.layers.iter().map(LayerGrads::zeros_like).collect();
        let mut upstream: Vec<Vec<f32>> = Vec::with_capacity(output_grads.len());
        for g in output_grads {
            check_dim(self.out_dim(), g.len())?;
            if !all_finite(g) {
                return Err(Error::NonFinite("representation gradient"));
            }
            upstream.push(g.clone());
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let grads = &mut layer_grads[l];
            let mut downstream = Vec::with_capacity(upstream.len());
            for (i, up) in upstream.iter().enumerate() {
                let x = &trace.layer_inputs[l][i];
                let z = &trace.pre_activations[l][i];
                let delta: Vec<f32> = up
                    .iter()
                    .zip(z)
                    .map(|(&u, &zv)| u * layer.activation.derivative(zv))
                    .collect();
                let mut dx = vec![0.0f32; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grads.bias[o] += d;
                    let row = o * layer.in_dim;
                    let w_row = &layer.weights[row..row + layer.in_dim];
                    let g_row = &mut grads.weights[row..row + layer.in_dim];
                    for j in 0..layer.in_dim {
                        g_row[j] += d * x[j];
                        dx[j] += d * w_row[j];
                    }
                }
                downstream.push(dx);
            }
            upstream = downstream;
        }
        Ok(Gradients {
            layers: layer_grads,
            inputs: upstream,
        })
    }
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v <- momentum * v + (grad + weight_decay * w)`, `w <- w - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Option<Vec<LayerGrads>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if weight_decay.is_nan() || weight_decay < 0.0 {
            return Err(Error::InvalidParameter(format!("weight decay must be nonnegative, got {weight_decay}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: None,
        })
    }

    pub fn step(&mut self, net: &mut EmbeddingNet, grads: &Gradients) -> Result<()> {
        check_dim(net.layers.len(), grads.layers.len())?;
        if !grads.layers.iter().all(LayerGrads::is_finite) {
            return Err(Error::NonFinite("parameter gradient"));
        }
        let (lr, momentum, weight_decay) = (self.lr, self.momentum, self.weight_decay);
        let velocity = self
            .velocity
            .get_or_insert_with(|| net.layers.iter().map(LayerGrads::zeros_like).collect());
        for ((layer, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(velocity.iter_mut()) {
            let update = |params: &mut [f32], grad: &[f32], vel: &mut [f32]| {
                for ((p, &g), v) in params.iter_mut().zip(grad).zip(vel.iter_mut()) {
                    *v = momentum * *v + g + weight_decay * *p;
                    *p -= lr * *v;
                }
            };
            update(&mut layer.weights, &g.weights, &mut v.weights);
            update(&mut layer.bias, &g.bias, &mut v.bias);
        }
        if !net.layers.iter().all(|l| all_finite(&l.weights) && all_finite(&l.bias)) {
            return Err(Error::NonFinite("parameters after update"));
        }
        Ok(())
    }
}

/// Forward, backpropagate `representation_grads` and take one optimizer step.
pub fn backward_apply<V: AsRef<[f32]>>(
    net: &mut EmbeddingNet,
    inputs: &[V],
    representation_grads: &[Vec<f32>],
    optimizer: &mut Sgd,
) -> Result<Gradients> {
    let trace = net.forward_trace(inputs)?;
    let grads = net.backward(&trace, representation_grads)?;
    optimizer.step(net, &grads)?;
    Ok(grads)
}
