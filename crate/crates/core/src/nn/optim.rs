use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MlpModel;
use crate::error::{Error, Result};
use crate::losses::bce_loss;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}` (sgd, adam)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {learning_rate}")));
        }
        let moments = if kind == OptimizerKind::Adam { param_count } else { 0 };
        Ok(Self {
            kind,
            learning_rate,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            step: 0,
        })
    }

    /// Applies one update to a flat parameter vector.
    pub fn step_params(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::LengthMismatch {
                what: "parameters vs gradients",
                left: params.len(),
                right: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::LengthMismatch {
                        what: "adam moments vs parameters",
                        left: self.m.len(),
                        right: params.len(),
                    });
                }
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &[f64]) -> Result<()> {
        let mut p = model.params();
        self.step_params(&mut p, grads)?;
        model.set_params(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean BCE over the samples seen in each epoch.
    pub loss_trace: Vec<f64>,
    /// Only one label value was present.
    pub single_class: bool,
}

/// Minibatch BCE training of a sigmoid-output model on binary labels.
pub fn train_epochs(
    model: &mut MlpModel,
    features: ArrayView2<f64>,
    labels: &[f64],
    opt: &mut OptimizerState,
    cfg: TrainConfig,
) -> Result<TrainReport> {
    if features.nrows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if features.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "features vs labels",
            left: features.nrows(),
            right: labels.len(),
        });
    }
    if model.out_dim() != 1 {
        return Err(Error::DimensionMismatch("binary training needs one output".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    let positives = labels.iter().filter(|y| **y > 0.5).count();
    let single_class = positives == 0 || positives == labels.len();
    if single_class {
        log::warn!("training set has a single label value");
    }
    model.mode = super::Mode::Train;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let x: Array2<f64> = features.select(Axis(0), chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let (out, cache) = model.forward_train(x.view())?;
            let pred: Vec<f64> = out.iter().copied().collect();
            let loss = bce_loss(&pred, &y)?;
            let go = Array2::from_shape_vec((chunk.len(), 1), loss.gradient)
                .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
            let grads = model.backward(&cache, go.view())?;
            model.update_running_stats(&cache)?;
            opt.step(model, &grads.params)?;
            total += loss.value * chunk.len() as f64;
            seen += chunk.len();
        }
        trace.push(if seen == 0 { 0.0 } else { total / seen as f64 });
    }
    model.mode = super::Mode::Eval;
    Ok(TrainReport {
        loss_trace: trace,
        single_class,
    })
}
