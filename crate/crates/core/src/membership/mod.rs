//! Point-to-center instance membership: RoI gathering, pair features, the
//! learned membership MLP and the nearest-center baseline.

mod train;

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

pub use train::{
    build_training_pairs, jittered_detections, train_membership_stage2, Stage2Config, TrainingSweep,
};

use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::registry::Registry;
use crate::targets::Vec3;
use crate::types::{Point, Taxonomy};
use crate::voxel::{interpolate_bev, BevMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub center: Vec3,
    pub confidence: f64,
    pub class_id: u16,
    /// Per-axis RoI half-extent around `center`.
    pub extent: Vec3,
}

/// RoI inflation: per axis max(ratio · r, floor).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiMargin {
    pub ratio: f64,
    pub floor: f64,
}

impl RoiMargin {
    pub const NONE: RoiMargin = RoiMargin { ratio: 0.0, floor: 0.0 };

    pub fn apply(&self, extent: Vec3) -> Vec3 {
        if self.ratio == 0.0 && self.floor == 0.0 {
            return extent;
        }
        extent.map(|r| r + (self.ratio * r).max(self.floor))
    }
}

impl Default for RoiMargin {
    fn default() -> Self {
        Self { ratio: 0.1, floor: 0.1 }
    }
}

pub fn in_roi(p: Vec3, det: &Detection, margin: RoiMargin) -> bool {
    let r = margin.apply(det.extent);
    (0..3).all(|a| (p[a] - det.center[a]).abs() < r[a])
}

/// Indices of points strictly inside the (inflated) axis-aligned box.
pub fn roi_points(det: &Detection, points: &[Point], margin: RoiMargin) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| in_roi(p.xyz(), det, margin))
        .map(|(i, _)| i)
        .collect()
}

/// Per-point features (N × P) and the BEV feature raster (B channels).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFeatures {
    pub point: Array2<f64>,
    pub bev: BevMap,
}

impl SweepFeatures {
    pub fn point_dims(&self) -> usize {
        self.point.ncols()
    }

    pub fn bev_dims(&self) -> usize {
        self.bev.channels
    }
}

/// Which blocks enter the pair vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureVariant {
    /// Positions and classes only.
    Geometric,
    /// Adds BEV features at the point and the center.
    GeometricBev,
    /// Adds per-point features as well.
    Full,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 3] = [
        FeatureVariant::Geometric,
        FeatureVariant::GeometricBev,
        FeatureVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::Geometric => "geometric",
            FeatureVariant::GeometricBev => "geometric+bev",
            FeatureVariant::Full => "full",
        }
    }

    pub fn uses_bev(self) -> bool {
        !matches!(self, FeatureVariant::Geometric)
    }

    pub fn uses_point(self) -> bool {
        matches!(self, FeatureVariant::Full)
    }
}

impl std::str::FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature variant `{s}` (geometric, geometric+bev, full)")))
    }
}

/// Block sizes of the pair vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLayout {
    pub variant: FeatureVariant,
    pub point_dims: usize,
    pub bev_dims: usize,
    pub classes: usize,
}

impl PairLayout {
    pub fn new(variant: FeatureVariant, features: &SweepFeatures, taxonomy: &Taxonomy) -> Self {
        Self {
            variant,
            point_dims: if variant.uses_point() { features.point_dims() } else { 0 },
            bev_dims: if variant.uses_bev() { features.bev_dims() } else { 0 },
            classes: taxonomy.evaluated_ids().len(),
        }
    }

    pub fn point_block(&self) -> usize {
        3 + self.point_dims + self.bev_dims + self.classes
    }

    pub fn center_block(&self) -> usize {
        3 + self.bev_dims + self.classes
    }

    pub fn width(&self) -> usize {
        self.point_block() + self.center_block()
    }
}

/// Class id → one-hot slot, cached per taxonomy.
#[derive(Debug, Clone)]
pub struct ClassSlots(HashMap<u16, usize>, usize);

impl ClassSlots {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        let ids = taxonomy.evaluated_ids();
        let n = ids.len();
        Self(ids.into_iter().enumerate().map(|(i, c)| (c, i)).collect(), n)
    }

    fn write(&self, class: u16, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + self.1, 0.0);
        if let Some(&s) = self.0.get(&class) {
            out[start + s] = 1.0;
        }
    }
}

/// Center block shared by every pair of one detection.
pub fn center_block(
    det: &Detection,
    features: &SweepFeatures,
    layout: &PairLayout,
    slots: &ClassSlots,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(layout.center_block());
    out.extend_from_slice(&det.center);
    if layout.bev_dims > 0 {
        out.extend(interpolate_bev(&features.bev, [det.center[0], det.center[1]])?);
    }
    slots.write(det.class_id, &mut out);
    Ok(out)
}

/// Pair vector for point `i` and detection `det`:
/// `[p − û; F^point; F^bev(p); onehot(O^point) | û; F^bev(û); onehot(k̂)]`.
/// The point position is stored relative to the center; with `û` present in
/// the center block this carries the same information as the absolute point.
pub fn assemble_pair_features(
    points: &[Point],
    sem: &[u16],
    i: usize,
    center: &[f64],
    det: &Detection,
    features: &SweepFeatures,
    layout: &PairLayout,
    slots: &ClassSlots,
    out: &mut Vec<f64>,
) -> Result<()> {
    let p = points[i].xyz();
    out.extend((0..3).map(|a| p[a] - det.center[a]));
    if layout.point_dims > 0 {
        out.extend(features.point.row(i).iter());
    }
    if layout.bev_dims > 0 {
        out.extend(interpolate_bev(&features.bev, [p[0], p[1]])?);
    }
    slots.write(sem[i], out);
    out.extend_from_slice(center);
    Ok(())
}

/// Pair matrix (one row per RoI point).
pub fn pair_matrix(
    points: &[Point],
    sem: &[u16],
    roi: &[usize],
    det: &Detection,
    features: &SweepFeatures,
    layout: &PairLayout,
    slots: &ClassSlots,
) -> Result<Array2<f64>> {
    if features.point.nrows() != points.len() {
        return Err(Error::LengthMismatch {
            what: "point features vs points",
            left: features.point.nrows(),
            right: points.len(),
        });
    }
    let center = center_block(det, features, layout, slots)?;
    let mut data = Vec::with_capacity(roi.len() * layout.width());
    for &i in roi {
        assemble_pair_features(points, sem, i, &center, det, features, layout, slots, &mut data)?;
    }
    Array2::from_shape_vec((roi.len(), layout.width()), data).map_err(|e| Error::DimensionMismatch(e.to_string()))
}

/// Sigmoid outputs of an eval-mode model, one per pair row.
pub fn predict_membership(model: &MlpModel, pairs: ArrayView2<f64>) -> Result<Vec<f64>> {
    if model.in_dim() != pairs.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "pair width {} but model expects {}",
            pairs.ncols(),
            model.in_dim()
        )));
    }
    if pairs.nrows() == 0 {
        return Ok(Vec::new());
    }
    Ok(model.forward_eval(pairs)?.iter().copied().collect())
}

/// Everything a membership function may look at for one sweep.
pub struct MembershipQuery<'a> {
    pub points: &'a [Point],
    /// Predicted semantic class per point.
    pub sem: &'a [u16],
    pub features: &'a SweepFeatures,
    pub taxonomy: &'a Taxonomy,
    /// All detections of the sweep, in processing order.
    pub detections: &'a [Detection],
    pub margin: RoiMargin,
}

/// Scores RoI points of one detection; a score above 0.5 means "member".
pub trait MembershipFunction: Send + Sync {
    fn name(&self) -> &'static str;

    fn score(&self, query: &MembershipQuery<'_>, det: usize, roi: &[usize]) -> Result<Vec<f64>>;
}

/// Score 1 for the detection whose center is nearest among the same-class
/// detections whose RoI contains the point (ties: higher confidence, then
/// lower index), 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestCenter;

impl NearestCenter {
    /// Index of the winning detection for one point, if any.
    pub fn owner(query: &MembershipQuery<'_>, i: usize) -> Option<usize> {
        let p = query.points[i].xyz();
        let class = query.sem[i];
        let mut best: Option<(f64, f64, usize)> = None;
        for (d, det) in query.detections.iter().enumerate() {
            if det.class_id != class || !in_roi(p, det, query.margin) {
                continue;
            }
            let dist = (0..3).map(|a| (p[a] - det.center[a]).powi(2)).sum::<f64>().sqrt();
            let better = match best {
                None => true,
                Some((bd, bc, _)) => dist < bd || (dist == bd && det.confidence > bc),
            };
            if better {
                best = Some((dist, det.confidence, d));
            }
        }
        best.map(|b| b.2)
    }
}

impl MembershipFunction for NearestCenter {
    fn name(&self) -> &'static str {
        "nn"
    }

    fn score(&self, query: &MembershipQuery<'_>, det: usize, roi: &[usize]) -> Result<Vec<f64>> {
        Ok(roi
            .iter()
            .map(|&i| if Self::owner(query, i) == Some(det) { 1.0 } else { 0.0 })
            .collect())
    }
}

/// Per-point assignment of the nearest-center baseline.
pub fn nn_baseline(
    points: &[Point],
    sem: &[u16],
    detections: &[Detection],
    margin: RoiMargin,
    taxonomy: &Taxonomy,
    features: &SweepFeatures,
) -> Vec<Option<usize>> {
    let q = MembershipQuery {
        points,
        sem,
        features,
        taxonomy,
        detections,
        margin,
    };
    (0..points.len()).map(|i| NearestCenter::owner(&q, i)).collect()
}

/// The learned membership function.
#[derive(Debug, Clone)]
pub struct MlpMembership {
    pub model: MlpModel,
    pub variant: FeatureVariant,
}

impl MembershipFunction for MlpMembership {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn score(&self, q: &MembershipQuery<'_>, det: usize, roi: &[usize]) -> Result<Vec<f64>> {
        let layout = PairLayout::new(self.variant, q.features, q.taxonomy);
        let slots = ClassSlots::new(q.taxonomy);
        let pairs = pair_matrix(q.points, q.sem, roi, &q.detections[det], q.features, &layout, &slots)?;
        predict_membership(&self.model, pairs.view())
    }
}

/// Construction parameters for membership functions.
#[derive(Debug, Clone, Default)]
pub struct MembershipParams {
    pub model: Option<MlpModel>,
    pub variant: Option<FeatureVariant>,
}

pub type MembershipRegistry = Registry<dyn MembershipFunction, MembershipParams>;

/// Registry holding `nn` and `mlp`.
pub fn builtin_membership_functions() -> MembershipRegistry {
    let mut r = Registry::new("membership function");
    r.register("nn", |_: &MembershipParams| Ok(Box::new(NearestCenter) as Box<dyn MembershipFunction>));
    r.register("mlp", |p: &MembershipParams| {
        let model = p.model.clone().ok_or(Error::MissingParameter {
            strategy: "mlp",
            param: "model",
        })?;
        let mut model = model;
        model.mode = crate::nn::Mode::Eval;
        Ok(Box::new(MlpMembership {
            model,
            variant: p.variant.unwrap_or(FeatureVariant::Full),
        }) as Box<dyn MembershipFunction>)
    });
    r
}
