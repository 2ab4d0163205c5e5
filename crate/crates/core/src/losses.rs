//! Training objectives with analytic gradients. All reductions are sequential
//! so results are bit-stable.

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// d value / d prediction, same layout as the prediction.
    pub gradient: Vec<f64>,
    /// Nothing contributed (e.g. every voxel masked out).
    pub empty: bool,
}

impl LossValue {
    fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            gradient: vec![0.0; n],
            empty: true,
        }
    }
}

fn same_len(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { what, left: a, right: b });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 2.0, beta: 4.0 }
    }
}

/// Penalty-reduced focal loss over heatmaps. Cells with target exactly 1 are
/// positives; the sum is divided by the positive count (at least 1).
pub fn focal_loss(pred: &[f64], target: &[f64], params: FocalParams) -> Result<LossValue> {
    same_len("focal pred vs target", pred.len(), target.len())?;
    if pred.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::Domain("focal prediction outside (0, 1)".into()));
    }
    if target.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::Domain("focal target outside [0, 1]".into()));
    }
    let FocalParams { alpha, beta } = params;
    let positives = target.iter().filter(|y| **y == 1.0).count();
    let norm = positives.max(1) as f64;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let (l, g) = if y == 1.0 {
            let q = 1.0 - p;
            (
                -q.powf(alpha) * p.ln(),
                alpha * q.powf(alpha - 1.0) * p.ln() - q.powf(alpha) / p,
            )
        } else {
            let w = (1.0 - y).powf(beta);
            let lq = (1.0 - p).ln();
            (
                -w * p.powf(alpha) * lq,
                -w * (alpha * p.powf(alpha - 1.0) * lq - p.powf(alpha) / (1.0 - p)),
            )
        };
        value += l;
        gradient.push(g / norm);
    }
    Ok(LossValue {
        value: value / norm,
        gradient,
        empty: false,
    })
}

/// Mean softmax cross-entropy over voxels that are both masked in and carry a
/// target (`None` = ignore). `logits` is row-major `n × k`.
pub fn masked_cross_entropy(
    logits: &[f64],
    k: usize,
    target: &[Option<usize>],
    mask: &[bool],
) -> Result<LossValue> {
    if k == 0 {
        return Err(Error::DimensionMismatch("cross-entropy with zero classes".into()));
    }
    same_len("logits vs targets", logits.len(), target.len() * k)?;
    same_len("targets vs mask", target.len(), mask.len())?;
    let mut gradient = vec![0.0; logits.len()];
    let mut value = 0.0;
    let mut count = 0usize;
    for (i, (t, m)) in target.iter().zip(mask).enumerate() {
        let (Some(t), true) = (t, *m) else { continue };
        if *t >= k {
            return Err(Error::Domain(format!("class slot {t} >= {k}")));
        }
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row {
            z += (v - max).exp();
        }
        let log_z = z.ln() + max;
        value += log_z - row[*t];
        for (c, v) in row.iter().enumerate() {
            gradient[i * k + c] = (v - log_z).exp();
        }
        gradient[i * k + t] -= 1.0;
        count += 1;
    }
    if count == 0 {
        return Ok(LossValue::zero(logits.len()));
    }
    let n = count as f64;
    for g in &mut gradient {
        *g /= n;
    }
    Ok(LossValue {
        value: value / n,
        gradient,
        empty: false,
    })
}

/// Mean absolute error over masked entries; subgradient 0 at equality.
pub fn l1_loss(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<LossValue> {
    same_len("l1 pred vs target", pred.len(), target.len())?;
    same_len("l1 pred vs mask", pred.len(), mask.len())?;
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::Empty("l1 mask"));
    }
    let n = count as f64;
    let mut value = 0.0;
    let mut gradient = vec![0.0; pred.len()];
    for (i, ((p, y), m)) in pred.iter().zip(target).zip(mask).enumerate() {
        if !*m {
            continue;
        }
        let d = p - y;
        value += d.abs();
        gradient[i] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(LossValue {
        value: value / n,
        gradient,
        empty: false,
    })
}

/// Mean binary cross-entropy with probabilities clamped to [ε, 1−ε].
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<LossValue> {
    same_len("bce pred vs target", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::Empty("bce batch"));
    }
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("bce prediction"));
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        value += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        gradient.push((-(y / p) + (1.0 - y) / (1.0 - p)) / n);
    }
    Ok(LossValue {
        value: value / n,
        gradient,
        empty: false,
    })
}

/// Loss terms of one step; `track` is absent in single-scan mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub det: f64,
    pub seg: f64,
    pub mem: f64,
    pub track: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub det: f64,
    pub seg: f64,
    pub mem: f64,
    pub track: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            det: 1.0,
            seg: 1.0,
            mem: 1.0,
            track: 1.0,
        }
    }
}

pub fn total_loss(parts: LossParts, weights: LossWeights) -> Result<f64> {
    let track = parts.track.unwrap_or(0.0);
    for v in [parts.det, parts.seg, parts.mem, track] {
        if !v.is_finite() {
            return Err(Error::NonFinite("loss part"));
        }
    }
    Ok(weights.det * parts.det + weights.seg * parts.seg + weights.mem * parts.mem + weights.track * track)
}
