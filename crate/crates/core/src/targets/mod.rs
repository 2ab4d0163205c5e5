//! Ground-truth target generation from point-level (modal) labels.
//!
//! An instance observed in one sweep is summarized by its modal center (mean
//! of its visible points) and the tight axis-aligned box around those points.
//! Per-sweep boxes are aggregated over the instance trajectory by an
//! [`ExtentStrategy`] before being rendered into BEV training targets.

mod extent;
mod render;

use std::collections::BTreeMap;
use std::path::Path;

pub use extent::{
    builtin_extent_strategies, ClassWiseMean, CwmStats, DropSmallBoxes, ExtentStrategy,
    ExtentStrategyRegistry, MaxOverTime, ShrinkWrap, StrategyParams, TrainingExtent,
    DEFAULT_CWM_SMALL_RATIO,
};
pub use render::{render_bev_targets, render_instances, BevTargets, RenderInstance, SIGMA_MIN_CELLS};

use crate::error::{Error, Result};
use crate::types::{SweepSequence, Taxonomy, NO_INSTANCE};

pub type Vec3 = [f64; 3];

/// One instance as seen in one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalInstance {
    pub instance_id: u32,
    pub class_id: u16,
    /// Mean of the visible points.
    pub center: Vec3,
    /// Middle of the tight axis-aligned box around the visible points.
    pub box_center: Vec3,
    /// Per-axis half-extent of that tight box.
    pub extent: Vec3,
    pub point_count: usize,
    pub sweep_index: usize,
    pub sweep_timestamp: f64,
}

impl ModalInstance {
    pub fn from_points(
        instance_id: u32,
        class_id: u16,
        points: &[Vec3],
        sweep_index: usize,
        sweep_timestamp: f64,
    ) -> Result<Self> {
        let center = modal_center(points)?;
        let (box_center, extent) = shrink_wrap(points)?;
        Ok(Self {
            instance_id,
            class_id,
            center,
            box_center,
            extent,
            point_count: points.len(),
            sweep_index,
            sweep_timestamp,
        })
    }

    /// Half-extent of a box of half-size `size` placed on this sweep's tight
    /// box, measured from the modal center. For `size == self.extent` this is
    /// exactly the largest per-axis distance of a visible point from the
    /// modal center.
    pub fn roi_extent(&self, size: Vec3) -> Vec3 {
        std::array::from_fn(|a| size[a] + (self.box_center[a] - self.center[a]).abs())
    }
}

/// Arithmetic mean of a non-empty point set.
pub fn modal_center(points: &[Vec3]) -> Result<Vec3> {
    if points.is_empty() {
        return Err(Error::Empty("instance point set"));
    }
    let mut acc = [0.0; 3];
    for p in points {
        for a in 0..3 {
            acc[a] += p[a];
        }
    }
    let n = points.len() as f64;
    Ok(acc.map(|v| v / n))
}

/// Componentwise max of |p − center| over the set.
pub fn extent_sw(points: &[Vec3], center: Vec3) -> Result<Vec3> {
    if points.is_empty() {
        return Err(Error::Empty("instance point set"));
    }
    let mut r = [0.0f64; 3];
    for p in points {
        for a in 0..3 {
            r[a] = r[a].max((p[a] - center[a]).abs());
        }
    }
    Ok(r)
}

/// Tight axis-aligned box: (box middle, half-extent).
pub fn shrink_wrap(points: &[Vec3]) -> Result<(Vec3, Vec3)> {
    if points.is_empty() {
        return Err(Error::Empty("instance point set"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mid: Vec3 = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]));
    Ok((mid, extent_sw(points, mid)?))
}

/// All per-sweep observations of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTrajectory {
    pub instance_id: u32,
    pub class_id: u16,
    /// Ordered by sweep index.
    pub records: Vec<ModalInstance>,
    /// Componentwise max of the per-sweep extents.
    pub aggregated_extent: Vec3,
}

impl InstanceTrajectory {
    pub fn new(mut records: Vec<ModalInstance>) -> Result<Self> {
        let first = records.first().ok_or(Error::Empty("trajectory"))?;
        let (instance_id, class_id) = (first.instance_id, first.class_id);
        if records.iter().any(|r| r.instance_id != instance_id || r.class_id != class_id) {
            return Err(Error::Invariant(
                "trajectory records mix instances or classes".into(),
            ));
        }
        records.sort_by_key(|r| r.sweep_index);
        let mut agg = [0.0f64; 3];
        for r in &records {
            for a in 0..3 {
                agg[a] = agg[a].max(r.extent[a]);
            }
        }
        Ok(Self {
            instance_id,
            class_id,
            records,
            aggregated_extent: agg,
        })
    }

    pub fn record_at(&self, sweep_index: usize) -> Option<&ModalInstance> {
        self.records
            .binary_search_by_key(&sweep_index, |r| r.sweep_index)
            .ok()
            .map(|i| &self.records[i])
    }
}

/// Groups labeled thing points of every sweep into per-instance trajectories,
/// ordered by instance id.
pub fn trajectories_from_sequence(
    seq: &SweepSequence,
    taxonomy: &Taxonomy,
) -> Result<Vec<InstanceTrajectory>> {
    let mut per_instance: BTreeMap<u32, Vec<ModalInstance>> = BTreeMap::new();
    for (si, sweep) in seq.sweeps.iter().enumerate() {
        for inst in sweep_instances(sweep, taxonomy, si)? {
            per_instance.entry(inst.instance_id).or_default().push(inst);
        }
    }
    per_instance.into_values().map(InstanceTrajectory::new).collect()
}

/// Modal instances of a single sweep, ordered by instance id.
pub fn sweep_instances(
    sweep: &crate::types::PointCloudSweep,
    taxonomy: &Taxonomy,
    sweep_index: usize,
) -> Result<Vec<ModalInstance>> {
    let mut groups: BTreeMap<u32, (u16, Vec<Vec3>)> = BTreeMap::new();
    for ((p, &sem), &inst) in sweep.points.iter().zip(&sweep.sem_labels).zip(&sweep.inst_labels) {
        if inst == NO_INSTANCE || !taxonomy.is_thing(sem) {
            continue;
        }
        let entry = groups.entry(inst).or_insert_with(|| (sem, Vec::new()));
        if entry.0 != sem {
            return Err(Error::Invariant(format!(
                "instance {inst} spans classes {} and {sem}",
                entry.0
            )));
        }
        entry.1.push(p.xyz());
    }
    groups
        .into_iter()
        .map(|(id, (class, pts))| ModalInstance::from_points(id, class, &pts, sweep_index, sweep.timestamp))
        .collect()
}

/// Planar velocity target at `sweep_index`: centered difference of modal
/// centers when both neighbouring sweeps observe the instance, a one-sided
/// difference at trajectory ends, zero for a single observation.
pub fn velocity_target(traj: &InstanceTrajectory, sweep_index: usize, period: f64) -> [f64; 2] {
    let here = match traj.record_at(sweep_index) {
        Some(r) => r,
        None => return [0.0, 0.0],
    };
    let prev = sweep_index.checked_sub(1).and_then(|i| traj.record_at(i));
    let next = traj.record_at(sweep_index + 1);
    let diff = |a: &ModalInstance, b: &ModalInstance, span: f64| {
        [
            (b.center[0] - a.center[0]) / span,
            (b.center[1] - a.center[1]) / span,
        ]
    };
    match (prev, next) {
        (Some(p), Some(n)) => diff(p, n, 2.0 * period),
        (None, Some(n)) => diff(here, n, period),
        (Some(p), None) => diff(p, here, period),
        (None, None) => [0.0, 0.0],
    }
}

/// Binary membership labels over the RoI points: 1 iff the point belongs to
/// the instance.
pub fn membership_target(instance_points: &[usize], roi_points: &[usize]) -> Vec<u8> {
    let members: std::collections::HashSet<usize> = instance_points.iter().copied().collect();
    roi_points.iter().map(|i| u8::from(members.contains(i))).collect()
}

/// Per-class mean of per-trajectory aggregated (MAX) extents.
pub fn class_wise_mean_extents<'a>(
    trajectories: impl IntoIterator<Item = &'a InstanceTrajectory>,
    taxonomy: &Taxonomy,
) -> CwmStats {
    let mut acc: BTreeMap<u16, ([f64; 3], usize)> = BTreeMap::new();
    for t in trajectories {
        if !taxonomy.is_thing(t.class_id) {
            continue;
        }
        let e = acc.entry(t.class_id).or_insert(([0.0; 3], 0));
        for a in 0..3 {
            e.0[a] += t.aggregated_extent[a];
        }
        e.1 += 1;
    }
    CwmStats(
        acc.into_iter()
            .map(|(c, (s, n))| (c, s.map(|v| v / n as f64)))
            .collect(),
    )
}

impl CwmStats {
    pub fn to_text(&self) -> String {
        self.0
            .iter()
            .map(|(c, r)| format!("{c}\t{}\t{}\t{}\n", r[0], r[1], r[2]))
            .collect()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let loc = || format!("{origin}:{}", n + 1);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::parse(loc(), "expected `class_id<TAB>rx<TAB>ry<TAB>rz`"));
            }
            let class = f[0].trim().parse::<u16>().map_err(|e| Error::parse(loc(), e.to_string()))?;
            let mut r = [0.0; 3];
            for a in 0..3 {
                r[a] = f[a + 1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(loc(), e.to_string()))?;
            }
            out.insert(class, r);
        }
        Ok(CwmStats(out))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
