//! Fully connected ε-prediction network with sinusoidal time conditioning
//! and hand-written reverse-mode gradients.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `z · sigmoid(z)`
    #[default]
    Silu,
    Softplus,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Softplus => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Softplus),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "silu" => Some(Activation::Silu),
            "softplus" => Some(Activation::Softplus),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let sg = 1.0 / (1.0 + (-z).exp());
                sg * (1.0 + z * (1.0 - sg))
            }
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => {
                let th = z.tanh();
                1.0 - th * th
            }
        }
    }
}

/// Sinusoidal embedding of the integer step `t`: `dim/2` sines followed by
/// `dim/2` cosines at geometrically spaced frequencies `10000^(−k/(dim/2))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub dim: usize,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "time embedding dimension {dim} must be even and positive"
            )));
        }
        Ok(TimeEmbedding { dim })
    }

    pub fn embed_into(&self, t: usize, out: &mut [f64]) {
        let half = self.dim / 2;
        for k in 0..half {
            let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            out[k] = arg.sin();
            out[half + k] = arg.cos();
        }
    }

    pub fn embed(&self, t: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.embed_into(t, &mut v);
        v
    }
}

/// Affine layer `z = a Wᵀ + b`, weights stored `(out, in)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn forward(&self, a: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = a.dot(&self.weight.t());
        z += &self.bias;
        z
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameter gradients, one `(dW, db)` pair per layer.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    data_dim: usize,
    embedding: TimeEmbedding,
    activation: Activation,
    layers: Vec<Dense>,
}

impl DenoiserNet {
    /// Random initialization, weights and biases uniform in `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        hidden: &[usize],
        embedding: TimeEmbedding,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::invalid("data dimension must be at least 1"));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        let mut widths = vec![data_dim + embedding.dim];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound));
                let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..bound));
                Dense { weight, bias }
            })
            .collect();
        Ok(DenoiserNet {
            data_dim,
            embedding,
            activation,
            layers,
        })
    }

    pub fn from_layers(
        data_dim: usize,
        embedding: TimeEmbedding,
        activation: Activation,
        layers: Vec<Dense>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut expected_in = data_dim + embedding.dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != expected_in || layer.bias.len() != layer.out_dim() {
                return Err(Error::invalid(format!("layer {i} has inconsistent shape")));
            }
            expected_in = layer.out_dim();
        }
        if expected_in != data_dim {
            return Err(Error::invalid("output width must equal the data dimension"));
        }
        let net = DenoiserNet {
            data_dim,
            embedding,
            activation,
            layers,
        };
        if !net.params().iter().all(|p| p.is_finite()) {
            return Err(Error::invalid("non-finite network parameter"));
        }
        Ok(net)
    }

    /// Zeroes the output layer so the network predicts `ε ≡ 0`.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter count");
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = params[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[k];
                k += 1;
            }
        }
    }

    /// Parameters in the same flattened order as [`DenoiserNet::params`].
    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    fn input(&self, xs: &ArrayView2<f64>, ts: &[usize]) -> Array2<f64> {
        let (rows, d) = xs.dim();
        let mut input = Array2::zeros((rows, d + self.embedding.dim));
        input.slice_mut(s![.., ..d]).assign(xs);
        let mut cached_t = usize::MAX;
        let mut emb = vec![0.0; self.embedding.dim];
        for (i, &t) in ts.iter().enumerate() {
            if t != cached_t {
                self.embedding.embed_into(t, &mut emb);
                cached_t = t;
            }
            for (dst, src) in input.slice_mut(s![i, d..]).iter_mut().zip(&emb) {
                *dst = *src;
            }
        }
        input
    }

    /// Predicted noise for each row of `xs` at the matching step in `ts`.
    pub fn forward(&self, xs: &ArrayView2<f64>, ts: &[usize]) -> Array2<f64> {
        debug_assert_eq!(xs.nrows(), ts.len());
        let mut a = self.input(xs, ts);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&a.view());
            if i < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        a
    }

    /// Sum over rows of `‖ε_net(x, t) − ε‖²`, divided by `normalizer`, and its
    /// parameter gradient.
    pub fn loss_and_grad(
        &self,
        xs: &ArrayView2<f64>,
        ts: &[usize],
        targets: &ArrayView2<f64>,
        normalizer: f64,
    ) -> (f64, Gradients) {
        let act = self.activation;
        let last = self.layers.len() - 1;
        // activations[i] is the input to layer i; pre[i] its pre-activation
        let mut activations = vec![self.input(xs, ts)];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&activations[i].view());
            if i < last {
                activations.push(z.mapv(|v| act.apply(v)));
            }
            pre.push(z);
        }
        let residual = &pre[last] - targets;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / normalizer;

        let mut delta = residual * (2.0 / normalizer);
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let dw = delta.t().dot(&activations[i]);
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut da = delta.dot(&self.layers[i].weight);
                Zip::from(&mut da)
                    .and(&pre[i - 1])
                    .for_each(|g, &z| *g *= act.derivative(z));
                delta = da;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }
}
