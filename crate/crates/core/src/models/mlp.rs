//! Fully connected networks with explicit backpropagation.
//!
//! Hidden layers share one activation; the last layer is linear and emits
//! raw logits. Losses live with the families that use them.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" | "linear" => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Identity => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity]
            .into_iter()
            .find(|a| a.code() == code)
    }

    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::Identity => z.clone(),
        }
    }

    /// Multiplies `grad` in place by the derivative at pre-activation `z`
    /// (`a` is the activation output).
    fn backprop(self, grad: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(z, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(a, |g, &t| *g *= 1.0 - t * t),
            Activation::Sigmoid => grad.zip_mut_with(a, |g, &s| *g *= s * (1.0 - s)),
            Activation::Identity => {}
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..limit));
        Dense {
            w,
            b: Array1::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
}

/// Per-layer activations kept for the backward pass.
pub struct Forward {
    /// `inputs[l]` feeds layer `l`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations; the last entry is the logits.
    pre: Vec<Array2<f64>>,
}

impl Forward {
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrad {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.w.iter().chain(g.b.iter()).copied())
            .collect()
    }
}

impl Mlp {
    /// `sizes` lists every layer width including input and output.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let layers = sizes.windows(2).map(|p| Dense::init(p[0], p[1], rng)).collect();
        Mlp { layers, hidden }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.ncols())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_width()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Forward {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.w) + &layer.b;
            let next = if l == last { z.clone() } else { self.hidden.apply(&z) };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Forward { inputs, pre }
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.w) + &layer.b;
            a = if l == last { z } else { self.hidden.apply(&z) };
        }
        a
    }

    /// Gradients of the loss given its gradient w.r.t. the logits. Also
    /// returns the gradient w.r.t. the network input.
    pub fn backward(&self, fwd: &Forward, dlogits: Array2<f64>) -> (MlpGrad, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &fwd.inputs[l];
            grads.push(DenseGrad {
                w: input.t().dot(&delta),
                b: delta.sum_axis(Axis(0)),
            });
            let mut dinput = delta.dot(&layer.w.t());
            if l > 0 {
                // inputs[l] is the activation of pre[l - 1]
                self.hidden.backprop(&mut dinput, &fwd.pre[l - 1], input);
            }
            delta = dinput;
        }
        grads.reverse();
        (MlpGrad { layers: grads }, delta)
    }

    /// Adds `l2 * W` to the weight gradients and returns `l2/2 * |W|^2`.
    pub fn apply_l2(&self, grad: &mut MlpGrad, l2: f64) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        let mut penalty = 0.0;
        for (layer, g) in self.layers.iter().zip(grad.layers.iter_mut()) {
            penalty += layer.w.iter().map(|v| v * v).sum::<f64>();
            g.w.scaled_add(l2, &layer.w);
        }
        0.5 * l2 * penalty
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
    }
}

/// Plain SGD with classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<DenseGrad>,
}

impl Sgd {
    pub fn new(net: &Mlp, learning_rate: f64, momentum: f64) -> Self {
        let velocity = net
            .layers
            .iter()
            .map(|l| DenseGrad {
                w: Array2::zeros(l.w.raw_dim()),
                b: Array1::zeros(l.b.raw_dim()),
            })
            .collect();
        Sgd {
            learning_rate,
            momentum,
            velocity,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &MlpGrad) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((layer, g), v) in net.layers.iter_mut().zip(&grad.layers).zip(&mut self.velocity) {
            v.w.zip_mut_with(&g.w, |v, &g| *v = mu * *v - lr * g);
            v.b.zip_mut_with(&g.b, |v, &g| *v = mu * *v - lr * g);
            layer.w += &v.w;
            layer.b += &v.b;
        }
    }
}

/// Mean binary cross-entropy on single-logit outputs and its gradient
/// w.r.t. the logits.
pub fn binary_cross_entropy(logits: &Array2<f64>, y: &[u8]) -> (f64, Array2<f64>) {
    let n = y.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, &label) in y.iter().enumerate() {
        let z = logits[[i, 0]];
        let t = f64::from(label);
        loss += softplus(z) - t * z;
        grad[[i, 0]] = (sigmoid(z) - t) / n;
    }
    (loss / n, grad)
}

/// Binary objective of a single-output network: mean cross-entropy plus
/// `l2/2 * |W|^2`, with its gradient.
pub fn binary_objective(net: &Mlp, x: ArrayView2<f64>, y: &[u8], l2: f64) -> (f64, MlpGrad) {
    let fwd = net.forward(x);
    let (loss, dlogits) = binary_cross_entropy(fwd.logits(), y);
    let (mut grad, _) = net.backward(&fwd, dlogits);
    let penalty = net.apply_l2(&mut grad, l2);
    (loss + penalty, grad)
}
