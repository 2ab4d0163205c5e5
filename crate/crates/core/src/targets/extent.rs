use std::collections::BTreeMap;

use super::{InstanceTrajectory, Vec3};
use crate::error::Error;
use crate::registry::Registry;

/// Replacement threshold for CWM: a sweep's box is "small" when its largest
/// component is below this fraction of the class mean's largest component.
pub const DEFAULT_CWM_SMALL_RATIO: f64 = 0.25;

/// Per-class mean extent, keyed by class id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CwmStats(pub BTreeMap<u16, Vec3>);

/// Box size used to supervise one sweep of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingExtent {
    /// Per-axis half-size placed on the sweep's tight box.
    pub size: Vec3,
    /// Instance left out of detection training.
    pub excluded: bool,
}

/// Turns per-sweep observations into per-sweep training box sizes.
pub trait ExtentStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// One entry per trajectory record, in record order.
    fn training_extents(&self, trajectory: &InstanceTrajectory) -> Vec<TrainingExtent>;
}

/// Shared construction parameters; each strategy takes what it needs.
#[derive(Debug, Clone)]
pub struct StrategyParams {
    pub cwm_stats: Option<CwmStats>,
    pub cwm_small_ratio: f64,
    pub dsb_min_points: Option<usize>,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            cwm_stats: None,
            cwm_small_ratio: DEFAULT_CWM_SMALL_RATIO,
            dsb_min_points: None,
        }
    }
}

pub type ExtentStrategyRegistry = Registry<dyn ExtentStrategy, StrategyParams>;

/// Registry holding `sw`, `max`, `cwm` and `dsb`.
pub fn builtin_extent_strategies() -> ExtentStrategyRegistry {
    let mut r = Registry::new("extent strategy");
    r.register("sw", |_: &StrategyParams| Ok(Box::new(ShrinkWrap) as Box<dyn ExtentStrategy>));
    r.register("max", |_: &StrategyParams| Ok(Box::new(MaxOverTime) as Box<dyn ExtentStrategy>));
    r.register("cwm", |p: &StrategyParams| {
        let stats = p.cwm_stats.clone().ok_or(Error::MissingParameter {
            strategy: "cwm",
            param: "cwm_stats",
        })?;
        if !(p.cwm_small_ratio > 0.0 && p.cwm_small_ratio.is_finite()) {
            return Err(Error::Config(format!("cwm small ratio {} must be positive", p.cwm_small_ratio)));
        }
        Ok(Box::new(ClassWiseMean {
            stats,
            small_ratio: p.cwm_small_ratio,
        }) as Box<dyn ExtentStrategy>)
    });
    r.register("dsb", |p: &StrategyParams| {
        let min_points = p.dsb_min_points.ok_or(Error::MissingParameter {
            strategy: "dsb",
            param: "dsb_min_points",
        })?;
        Ok(Box::new(DropSmallBoxes { min_points }) as Box<dyn ExtentStrategy>)
    });
    r
}

/// Each sweep keeps its own tight box.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShrinkWrap;

impl ExtentStrategy for ShrinkWrap {
    fn name(&self) -> &'static str {
        "sw"
    }

    fn training_extents(&self, t: &InstanceTrajectory) -> Vec<TrainingExtent> {
        t.records
            .iter()
            .map(|r| TrainingExtent {
                size: r.extent,
                excluded: false,
            })
            .collect()
    }
}

/// Every sweep gets the componentwise max over the trajectory.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxOverTime;

impl ExtentStrategy for MaxOverTime {
    fn name(&self) -> &'static str {
        "max"
    }

    fn training_extents(&self, t: &InstanceTrajectory) -> Vec<TrainingExtent> {
        vec![
            TrainingExtent {
                size: t.aggregated_extent,
                excluded: false,
            };
            t.records.len()
        ]
    }
}

/// Small per-sweep boxes are replaced by the class mean.
#[derive(Debug, Clone)]
pub struct ClassWiseMean {
    pub stats: CwmStats,
    pub small_ratio: f64,
}

impl ExtentStrategy for ClassWiseMean {
    fn name(&self) -> &'static str {
        "cwm"
    }

    fn training_extents(&self, t: &InstanceTrajectory) -> Vec<TrainingExtent> {
        let mean = self.stats.0.get(&t.class_id);
        t.records
            .iter()
            .map(|r| {
                let size = match mean {
                    Some(m) if max3(r.extent) < self.small_ratio * max3(*m) => *m,
                    _ => r.extent,
                };
                TrainingExtent { size, excluded: false }
            })
            .collect()
    }
}

/// Sweeps with fewer than `min_points` visible points are excluded.
#[derive(Debug, Clone, Copy)]
pub struct DropSmallBoxes {
    pub min_points: usize,
}

impl ExtentStrategy for DropSmallBoxes {
    fn name(&self) -> &'static str {
        "dsb"
    }

    fn training_extents(&self, t: &InstanceTrajectory) -> Vec<TrainingExtent> {
        t.records
            .iter()
            .map(|r| TrainingExtent {
                size: r.extent,
                excluded: r.point_count < self.min_points,
            })
            .collect()
    }
}

fn max3(v: Vec3) -> f64 {
    v[0].max(v[1]).max(v[2])
}
