use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{hand_crafted_features, FeatureConfig, GroundTruth};
use crate::error::{Error, Result};
use crate::inference::PredictedMaps;
use crate::membership::SweepFeatures;
use crate::targets::{render_instances, sweep_instances, ExtentStrategy, InstanceTrajectory, RenderInstance, Vec3};
use crate::types::{SweepSequence, Taxonomy};
use crate::voxel::GridSpec;

/// Corruptions applied by the simulated detector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorNoise {
    /// Planar σ added to each detected center, meters.
    pub center_jitter: f64,
    /// σ of the confidence drop below 1.
    pub confidence_noise: f64,
    pub drop_prob: f64,
    pub sem_flip_prob: f64,
    /// Planar σ added to the velocity, m/s.
    pub velocity_noise: f64,
}

impl DetectorNoise {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("drop_prob", self.drop_prob), ("sem_flip_prob", self.sem_flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        for (name, s) in [
            ("center_jitter", self.center_jitter),
            ("confidence_noise", self.confidence_noise),
            ("velocity_noise", self.velocity_noise),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} = {s} must be a non-negative σ")));
            }
        }
        Ok(())
    }
}

/// Box half-size the simulated regressor outputs per (instance, sweep);
/// `None` means the detector does not fire.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictedExtents(pub BTreeMap<(u32, usize), Option<Vec3>>);

/// What a size regressor trained on `strategy`'s targets outputs. Its input
/// accumulates several sweeps, so it cannot tell which faces happen to be
/// visible right now; it outputs the mean of the trajectory's (non-excluded)
/// training sizes. Excluded records are never detected.
pub fn predicted_extents(trajectories: &[InstanceTrajectory], strategy: &dyn ExtentStrategy) -> PredictedExtents {
    let mut out = BTreeMap::new();
    for t in trajectories {
        let targets = strategy.training_extents(t);
        let kept: Vec<Vec3> = targets.iter().filter(|e| !e.excluded).map(|e| e.size).collect();
        let mean = (!kept.is_empty()).then(|| {
            let mut m = [0.0; 3];
            for s in &kept {
                (0..3).for_each(|a| m[a] += s[a]);
            }
            m.map(|v| v / kept.len() as f64)
        });
        for (r, e) in t.records.iter().zip(&targets) {
            out.insert((t.instance_id, r.sweep_index), if e.excluded { None } else { mean });
        }
    }
    PredictedExtents(out)
}

fn sweep_rng(seed: u64, sweep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sweep as u64);
    rng
}

/// Backbone outputs for every sweep: ground-truth semantics with random
/// flips, Gaussian heatmaps at jittered modal centers scaled by a noisy
/// confidence, true velocities plus noise, the predicted extents, and the
/// hand-crafted features (or zero-width features when `features` is None).
pub fn simulate_detector(
    seq: &SweepSequence,
    gt: &GroundTruth,
    taxonomy: &Taxonomy,
    spec: &GridSpec,
    noise: &DetectorNoise,
    extents: &PredictedExtents,
    features: Option<&FeatureConfig>,
    seed: u64,
) -> Result<Vec<PredictedMaps>> {
    noise.validate()?;
    let jitter = Normal::new(0.0, noise.center_jitter).map_err(|e| Error::Config(e.to_string()))?;
    let conf = Normal::new(0.0, noise.confidence_noise).map_err(|e| Error::Config(e.to_string()))?;
    let vel = Normal::new(0.0, noise.velocity_noise).map_err(|e| Error::Config(e.to_string()))?;
    let evaluated = taxonomy.evaluated_ids();
    let channels = taxonomy.thing_ids().len();
    let mut out = Vec::with_capacity(seq.sweeps.len());
    for (k, sweep) in seq.sweeps.iter().enumerate() {
        let mut rng = sweep_rng(seed, k);
        let mut items = Vec::new();
        for inst in sweep_instances(sweep, taxonomy, k)? {
            // Fixed draw order keeps streams aligned across noise settings.
            let dropped = rng.random::<f64>() < noise.drop_prob;
            let (jx, jy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
            let peak = (1.0 - conf.sample(&mut rng).abs()).clamp(0.05, 1.0);
            let (vx, vy) = (vel.sample(&mut rng), vel.sample(&mut rng));
            let size = extents
                .0
                .get(&(inst.instance_id, k))
                .ok_or_else(|| Error::Config(format!("no predicted extent for instance {} in sweep {k}", inst.instance_id)))?;
            let Some(size) = size else { continue };
            if dropped {
                continue;
            }
            let center = [inst.center[0] + jx, inst.center[1] + jy, inst.center[2]];
            if center[0].hypot(center[1]) > spec.range {
                continue;
            }
            let v = gt.get(inst.instance_id).map_or([0.0; 2], |b| b.velocity);
            items.push(RenderInstance {
                channel: taxonomy.thing_channel(inst.class_id).ok_or(Error::UnknownClass(inst.class_id))?,
                center,
                planar_extent: [size[0], size[1]],
                roi_extent: inst.roi_extent(*size),
                velocity: [v[0] + vx, v[1] + vy],
                peak,
            });
        }
        let t = render_instances(&items, spec, channels)?;
        let sem: Vec<u16> = sweep
            .sem_labels
            .iter()
            .map(|&s| {
                let flip = rng.random::<f64>() < noise.sem_flip_prob;
                let pick = rng.random_range(0..evaluated.len().max(2) - 1);
                if flip && taxonomy.is_evaluated(s) && evaluated.len() > 1 {
                    let others: Vec<u16> = evaluated.iter().copied().filter(|&c| c != s).collect();
                    others[pick % others.len()]
                } else {
                    s
                }
            })
            .collect();
        let features = match features {
            Some(cfg) => hand_crafted_features(&sweep.points, &sem, taxonomy, spec, cfg)?,
            None => SweepFeatures {
                point: Array2::zeros((sweep.points.len(), 0)),
                bev: spec.bev_raster(0)?,
            },
        };
        out.push(PredictedMaps {
            heatmaps: t.heatmaps,
            height: t.height,
            velocity: t.velocity,
            offset: Some(t.offset),
            extent: Some(t.extent),
            sem,
            features,
        });
    }
    Ok(out)
}
