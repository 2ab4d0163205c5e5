//! Turning predicted maps into panoptic labels with temporally stable ids.

mod fusion;
mod tracking;

use std::collections::BTreeMap;

pub use fusion::{fuse_panoptic, ConflictRule, FuseConfig, FusionOutput};
pub use tracking::{greedy_associate, Tracker, TrackerConfig, Tracklet, MAX_TRACK_ID};

use crate::error::{Error, Result};
use crate::membership::{Detection, MembershipFunction, SweepFeatures};
use crate::targets::Vec3;
use crate::types::{PanopticLabeling, Point, Taxonomy};
use crate::voxel::BevMap;

/// Per-sweep network outputs (or their simulation).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMaps {
    /// One channel per thing class, values in [0, 1].
    pub heatmaps: BevMap,
    pub height: BevMap,
    pub velocity: BevMap,
    /// Sub-cell center offset (2 channels), when predicted.
    pub offset: Option<BevMap>,
    /// RoI half-extent (3 channels), when predicted.
    pub extent: Option<BevMap>,
    /// Predicted semantic class per point.
    pub sem: Vec<u16>,
    pub features: SweepFeatures,
}

impl PredictedMaps {
    pub fn validate(&self, points: usize) -> Result<()> {
        if self.sem.len() != points {
            return Err(Error::LengthMismatch {
                what: "semantic predictions vs points",
                left: self.sem.len(),
                right: points,
            });
        }
        if self.heatmaps.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("heatmap value outside [0, 1]".into()));
        }
        let dims = (self.heatmaps.width, self.heatmaps.depth);
        let maps = [Some(&self.height), Some(&self.velocity), self.offset.as_ref(), self.extent.as_ref()];
        for m in maps.into_iter().flatten() {
            if (m.width, m.depth) != dims {
                return Err(Error::DimensionMismatch("prediction rasters differ in size".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub threshold: f64,
    pub max_dets: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            max_dets: 500,
        }
    }
}

/// Where detection extents come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtentSource {
    /// The extent map when present, otherwise the per-class table.
    Predicted(BTreeMap<u16, Vec3>),
    /// Always the per-class table.
    ClassTable(BTreeMap<u16, Vec3>),
}

impl Default for ExtentSource {
    fn default() -> Self {
        ExtentSource::Predicted(BTreeMap::new())
    }
}

/// A detection together with the heatmap cell it was read from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub detection: Detection,
    pub cell: (usize, usize),
}

/// Local maxima of the 3×3 neighbourhood above `threshold`, strongest first
/// (ties broken by channel, then cell index), capped at `max_dets`.
pub fn nms_detect(
    maps: &PredictedMaps,
    taxonomy: &Taxonomy,
    cfg: NmsConfig,
    extents: &ExtentSource,
) -> Result<Vec<Peak>> {
    let hm = &maps.heatmaps;
    let things = taxonomy.thing_ids();
    if hm.channels != things.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} heatmap channels for {} thing classes",
            hm.channels,
            things.len()
        )));
    }
    let mut found: Vec<(f64, usize, usize, usize)> = Vec::new();
    for c in 0..hm.channels {
        for ix in 0..hm.width {
            for iy in 0..hm.depth {
                let v = hm.get(ix, iy, c);
                if v <= cfg.threshold {
                    continue;
                }
                let mut is_max = true;
                'n: for jx in ix.saturating_sub(1)..=(ix + 1).min(hm.width - 1) {
                    for jy in iy.saturating_sub(1)..=(iy + 1).min(hm.depth - 1) {
                        if hm.get(jx, jy, c) > v {
                            is_max = false;
                            break 'n;
                        }
                    }
                }
                if is_max {
                    found.push((v, c, ix, iy));
                }
            }
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    found.truncate(cfg.max_dets);
    found
        .into_iter()
        .map(|(v, c, ix, iy)| {
            let class_id = things[c];
            let cc = hm.cell_center(ix, iy);
            let (dx, dy) = maps
                .offset
                .as_ref()
                .map_or((0.0, 0.0), |o| (o.get(ix, iy, 0), o.get(ix, iy, 1)));
            let table_extent = |t: &BTreeMap<u16, Vec3>| {
                t.get(&class_id)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no extent known for class {class_id}")))
            };
            let extent = match (extents, &maps.extent) {
                (ExtentSource::Predicted(_), Some(e)) => [e.get(ix, iy, 0), e.get(ix, iy, 1), e.get(ix, iy, 2)],
                (ExtentSource::Predicted(t), None) | (ExtentSource::ClassTable(t), _) => table_extent(t)?,
            };
            Ok(Peak {
                detection: Detection {
                    center: [cc[0] + dx, cc[1] + dy, maps.height.get(ix, iy, 0)],
                    confidence: v,
                    class_id,
                    extent,
                },
                cell: (ix, iy),
            })
        })
        .collect()
}

/// One sweep handed to the sequence pipeline.
pub struct SweepInput<'a> {
    pub points: &'a [Point],
    pub maps: &'a PredictedMaps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub nms: NmsConfig,
    pub extents: ExtentSource,
    pub fuse: FuseConfig,
    pub tracker: TrackerConfig,
    /// Seconds between sweeps.
    pub period: f64,
}

/// Detection, fusion and tracking per sweep; output instance ids are track
/// ids.
pub fn panoptic_track_sequence(
    sweeps: &[SweepInput<'_>],
    membership: &dyn MembershipFunction,
    taxonomy: &Taxonomy,
    cfg: &PipelineConfig,
) -> Result<Vec<PanopticLabeling>> {
    let mut tracker = Tracker::new(cfg.tracker.clone())?;
    let mut out = Vec::with_capacity(sweeps.len());
    for s in sweeps {
        s.maps.validate(s.points.len())?;
        let peaks = nms_detect(s.maps, taxonomy, cfg.nms, &cfg.extents)?;
        let dets: Vec<Detection> = peaks.iter().map(|p| p.detection).collect();
        let velocities: Vec<[f64; 2]> = peaks
            .iter()
            .map(|p| [s.maps.velocity.get(p.cell.0, p.cell.1, 0), s.maps.velocity.get(p.cell.0, p.cell.1, 1)])
            .collect();
        let fused = fuse_panoptic(s.points, &s.maps.sem, &dets, membership, &s.maps.features, taxonomy, &cfg.fuse)?;
        let track_ids = tracker.step(&dets, &velocities, cfg.period)?;
        let mut labeling = fused.labeling;
        for (inst, owner) in labeling.inst.iter_mut().zip(&fused.assigned) {
            if let Some(d) = owner {
                *inst = track_ids[*d];
            }
        }
        out.push(labeling);
    }
    Ok(out)
}
