//! A small fully connected network with batch normalization, trained with
//! hand-written reverse-mode gradients.

mod checkpoint;
mod optim;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{train_epochs, OptimizerKind, OptimizerState, TrainConfig, TrainReport};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::None => 0,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out × in
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub batchnorm: Option<BatchNorm>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        weights: Array2<f64>,
        bias: Array1<f64>,
        batchnorm: Option<BatchNorm>,
        activation: Activation,
    ) -> Result<Self> {
        let out = weights.nrows();
        if bias.len() != out || batchnorm.as_ref().is_some_and(|b| b.gamma.len() != out) {
            return Err(Error::DimensionMismatch(format!(
                "layer with {out} outputs has mismatched bias or batch-norm width"
            )));
        }
        Ok(Self {
            weights,
            bias,
            batchnorm,
            activation,
        })
    }

    /// Uniform init in ±√(6/(fan_in+fan_out)), zero bias.
    pub fn init<R: Rng>(
        fan_in: usize,
        fan_out: usize,
        batchnorm: bool,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-a..a));
        Self {
            weights,
            bias: Array1::zeros(fan_out),
            batchnorm: batchnorm.then(|| BatchNorm::new(fan_out)),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn param_count(&self) -> usize {
        let bn = self.batchnorm.as_ref().map_or(0, |b| 2 * b.gamma.len());
        self.weights.len() + self.bias.len() + bn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    pub mode: Mode,
    generation: u64,
}

struct LayerCache {
    input: Array2<f64>,
    /// Normalized pre-activations (BN layers only) and 1/√(var+ε).
    xhat: Option<(Array2<f64>, Array1<f64>)>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
    /// Value fed into the activation.
    pre_act: Array2<f64>,
    output: Array2<f64>,
}

/// Activations recorded by a train-mode forward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    generation: u64,
    batch: usize,
}

/// Gradients with respect to all parameters (flat, in [`MlpModel::params`]
/// order) and to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("model layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer output {} does not feed input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            mode: Mode::Train,
            generation: 0,
        })
    }

    /// Hidden layers linear → BN → ReLU, then a linear sigmoid head with one
    /// output. `depth` counts all linear layers.
    pub fn point_seg_mlp<R: Rng>(in_dim: usize, hidden: usize, depth: usize, rng: &mut R) -> Result<Self> {
        if depth == 0 || in_dim == 0 || hidden == 0 {
            return Err(Error::Config("mlp needs positive depth and widths".into()));
        }
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = in_dim;
        for _ in 0..depth - 1 {
            layers.push(Layer::init(fan_in, hidden, true, Activation::Relu, rng));
            fan_in = hidden;
        }
        layers.push(Layer::init(fan_in, 1, false, Activation::Sigmoid, rng));
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Trainable parameters: per layer W (row-major), b, then γ, β.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
            if let Some(bn) = &l.batchnorm {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                left: params.len(),
                right: self.param_count(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = it.next().unwrap_or_default());
            l.bias.iter_mut().for_each(|v| *v = it.next().unwrap_or_default());
            if let Some(bn) = &mut l.batchnorm {
                bn.gamma.iter_mut().for_each(|v| *v = it.next().unwrap_or_default());
                bn.beta.iter_mut().for_each(|v| *v = it.next().unwrap_or_default());
            }
        }
        self.generation += 1;
        Ok(())
    }

    fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| l.batchnorm.is_some())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input width {} but model expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass in the current mode.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self.mode {
            Mode::Train => Ok(self.forward_train(x)?.0),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Uses running statistics; a pure function of parameters and input.
    pub fn forward_eval(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.weights.t()) + &l.bias;
            if let Some(bn) = &l.batchnorm {
                let inv = bn.running_var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                z = (z - &bn.running_mean) * &inv * &bn.gamma + &bn.beta;
            }
            h = activate(l.activation, &z);
        }
        Ok(h)
    }

    /// Uses batch statistics and records what backward needs. Does not touch
    /// the running statistics; see [`MlpModel::update_running_stats`].
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let n = x.nrows();
        if n < 2 && self.has_batchnorm() {
            return Err(Error::Domain("train-mode batch norm needs at least 2 rows".into()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &self.layers {
            let z = h.dot(&l.weights.t()) + &l.bias;
            let (pre_act, xhat, mean, var) = match &l.batchnorm {
                Some(bn) => {
                    let mean = z.mean_axis(Axis(0)).ok_or(Error::Empty("batch"))?;
                    let centered = &z - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).ok_or(Error::Empty("batch"))?;
                    let inv = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let xhat = centered * &inv;
                    let y = &xhat * &bn.gamma + &bn.beta;
                    (y, Some((xhat, inv)), Some(mean), Some(var))
                }
                None => (z, None, None, None),
            };
            let out = activate(l.activation, &pre_act);
            caches.push(LayerCache {
                input: h,
                xhat,
                batch_mean: mean,
                batch_var: var,
                pre_act,
                output: out.clone(),
            });
            h = out;
        }
        Ok((
            h,
            ForwardCache {
                layers: caches,
                generation: self.generation,
                batch: n,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// averages (unbiased variance).
    pub fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let n = cache.batch as f64;
        for (l, c) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(mean), Some(var)) = (&mut l.batchnorm, &c.batch_mean, &c.batch_var) {
                let m = bn.momentum;
                bn.running_mean = &bn.running_mean * (1.0 - m) + mean * m;
                let unbiased = var * (n / (n - 1.0));
                bn.running_var = &bn.running_var * (1.0 - m) + unbiased * m;
            }
        }
        Ok(())
    }

    /// Reverse pass for a cache produced by [`MlpModel::forward_train`] on the
    /// current parameters.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<Gradients> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let last = &cache.layers[cache.layers.len() - 1].output;
        if grad_out.dim() != last.dim() {
            return Err(Error::DimensionMismatch(format!(
                "output gradient {:?} vs output {:?}",
                grad_out.dim(),
                last.dim()
            )));
        }
        let n = cache.batch as f64;
        let mut per_layer: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            let du = match l.activation {
                Activation::Relu => {
                    let mut du = g;
                    du.zip_mut_with(&c.pre_act, |d, u| {
                        if *u <= 0.0 {
                            *d = 0.0
                        }
                    });
                    du
                }
                Activation::Sigmoid => &g * &c.output.mapv(|s| s * (1.0 - s)),
                Activation::None => g,
            };
            let mut bn_grads: Vec<f64> = Vec::new();
            let dz = match (&l.batchnorm, &c.xhat) {
                (Some(bn), Some((xhat, inv))) => {
                    let dgamma = (&du * xhat).sum_axis(Axis(0));
                    let dbeta = du.sum_axis(Axis(0));
                    let dxhat = &du * &bn.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                    let dz = (dxhat * n - &sum_dxhat - xhat * &sum_dxhat_xhat) * inv / n;
                    bn_grads.extend(dgamma.iter());
                    bn_grads.extend(dbeta.iter());
                    dz
                }
                _ => du,
            };
            let dw = dz.t().dot(&c.input);
            let db = dz.sum_axis(Axis(0));
            let mut flat: Vec<f64> = dw.iter().copied().collect();
            flat.extend(db.iter());
            flat.extend(bn_grads);
            per_layer.push(flat);
            g = dz.dot(&l.weights);
        }
        per_layer.reverse();
        Ok(Gradients {
            params: per_layer.concat(),
            input: g,
        })
    }
}

fn activate(a: Activation, z: &Array2<f64>) -> Array2<f64> {
    match a {
        Activation::Relu => z.mapv(|v| v.max(0.0)),
        Activation::Sigmoid => z.mapv(sigmoid),
        Activation::None => z.clone(),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
