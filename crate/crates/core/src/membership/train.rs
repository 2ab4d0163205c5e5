use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::{pair_matrix, roi_points, ClassSlots, Detection, FeatureVariant, PairLayout, RoiMargin, SweepFeatures};
use crate::error::{Error, Result};
use crate::nn::{train_epochs, MlpModel, OptimizerKind, OptimizerState, TrainConfig, TrainReport};
use crate::targets::{membership_target, ModalInstance, Vec3};
use crate::types::{Point, Taxonomy};

/// One sweep's worth of supervision for the membership head.
pub struct TrainingSweep<'a> {
    pub points: &'a [Point],
    /// Semantic classes fed to the features (predicted or ground truth).
    pub sem: &'a [u16],
    pub features: &'a SweepFeatures,
    /// Ground-truth instance id per point.
    pub inst: &'a [u32],
    /// Detections paired with the ground-truth instance they stand for.
    pub detections: Vec<(Detection, u32)>,
}

/// Detections placed at ground-truth modal centers with planar Gaussian
/// jitter; `sizes` are training half-sizes per instance.
pub fn jittered_detections<R: Rng>(
    instances: &[ModalInstance],
    sizes: &[Vec3],
    jitter: f64,
    rng: &mut R,
) -> Result<Vec<(Detection, u32)>> {
    if instances.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            what: "instances vs sizes",
            left: instances.len(),
            right: sizes.len(),
        });
    }
    let normal = Normal::new(0.0, jitter).map_err(|e| Error::Config(format!("jitter: {e}")))?;
    Ok(instances
        .iter()
        .zip(sizes)
        .map(|(inst, size)| {
            let mut center = inst.center;
            center[0] += normal.sample(rng);
            center[1] += normal.sample(rng);
            let det = Detection {
                center,
                confidence: 1.0,
                class_id: inst.class_id,
                extent: inst.roi_extent(*size),
            };
            (det, inst.instance_id)
        })
        .collect())
}

/// Pair features and binary labels over the uninflated, class-filtered RoIs.
pub fn build_training_pairs(
    sweeps: &[TrainingSweep<'_>],
    variant: FeatureVariant,
    taxonomy: &Taxonomy,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let slots = ClassSlots::new(taxonomy);
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for s in sweeps {
        let layout = PairLayout::new(variant, s.features, taxonomy);
        if *width.get_or_insert(layout.width()) != layout.width() {
            return Err(Error::DimensionMismatch("pair width differs between sweeps".into()));
        }
        for (det, inst_id) in &s.detections {
            let roi: Vec<usize> = roi_points(det, s.points, RoiMargin::NONE)
                .into_iter()
                .filter(|&i| s.sem[i] == det.class_id)
                .collect();
            if roi.is_empty() {
                continue;
            }
            let members: Vec<usize> = roi.iter().copied().filter(|&i| s.inst[i] == *inst_id).collect();
            let pairs = pair_matrix(s.points, s.sem, &roi, det, s.features, &layout, &slots)?;
            rows.extend(pairs.iter());
            labels.extend(membership_target(&members, &roi).into_iter().map(f64::from));
        }
    }
    let width = width.ok_or(Error::Empty("training sweeps"))?;
    let x = Array2::from_shape_vec((labels.len(), width), rows).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok((x, labels))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Config {
    pub hidden: usize,
    /// Number of linear layers.
    pub depth: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            hidden: 64,
            depth: 4,
            epochs: 20,
            learning_rate: 5e-4,
            optimizer: OptimizerKind::Sgd,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Trains a fresh membership MLP on prepared pairs.
pub fn train_membership_stage2(
    x: &Array2<f64>,
    labels: &[f64],
    cfg: &Stage2Config,
) -> Result<(MlpModel, TrainReport)> {
    if labels.is_empty() {
        return Err(Error::Empty("membership training pairs"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::point_seg_mlp(x.ncols(), cfg.hidden, cfg.depth, &mut rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, model.param_count())?;
    let report = train_epochs(
        &mut model,
        x.view(),
        labels,
        &mut opt,
        TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed.wrapping_add(1),
        },
    )?;
    Ok((model, report))
}
