//! Binary model files: magic, version, layer table, then little-endian f64
//! values (per layer W, b, and for batch-norm layers γ, β, running mean,
//! running variance, momentum, ε).

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, BatchNorm, Layer, MlpModel, Mode};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MPNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
        out.push(u8::from(l.batchnorm.is_some()));
        out.push(l.activation.code());
    }
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for l in &model.layers {
        l.weights.iter().for_each(|v| put(*v));
        l.bias.iter().for_each(|v| put(*v));
        if let Some(bn) = &l.batchnorm {
            bn.gamma.iter().for_each(|v| put(*v));
            bn.beta.iter().for_each(|v| put(*v));
            bn.running_mean.iter().for_each(|v| put(*v));
            bn.running_var.iter().for_each(|v| put(*v));
            put(bn.momentum);
            put(bn.eps);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap_or_default()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap_or_default()))
    }

    fn vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn model_from_bytes(buf: &[u8]) -> Result<MlpModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_layers = r.u32()? as usize;
    let mut table = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let bn = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad batch-norm flag {b}"))),
        };
        let act = Activation::from_code(r.u8()?)
            .ok_or_else(|| Error::Checkpoint("bad activation code".into()))?;
        table.push((fan_in, fan_out, bn, act));
    }
    let mut layers = Vec::with_capacity(table.len());
    for (fan_in, fan_out, bn, act) in table {
        let w = Array2::from_shape_vec((fan_out, fan_in), r.vec(fan_in * fan_out)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let b = Array1::from(r.vec(fan_out)?);
        let batchnorm = if bn {
            let gamma = Array1::from(r.vec(fan_out)?);
            let beta = Array1::from(r.vec(fan_out)?);
            let running_mean = Array1::from(r.vec(fan_out)?);
            let running_var = Array1::from(r.vec(fan_out)?);
            if running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Checkpoint("running variance must be positive".into()));
            }
            Some(BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                momentum: r.f64()?,
                eps: r.f64()?,
            })
        } else {
            None
        };
        layers.push(Layer::new(w, b, batchnorm, act).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let mut model = MlpModel::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if model.params().iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    model.mode = Mode::Eval;
    Ok(model)
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

/// Loads a model in eval mode.
pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&buf)
}
