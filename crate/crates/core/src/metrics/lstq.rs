use std::collections::HashMap;

use super::MiouAccumulator;
use crate::error::{Error, Result};
use crate::types::{PanopticLabeling, Taxonomy, NO_INSTANCE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstqReport {
    pub s_assoc: f64,
    pub s_cls: f64,
    pub lstq: f64,
}

/// Tube statistics pooled over whole sequences. Association is class-agnostic:
/// ground-truth tubes are thing points sharing an instance id, predicted tubes
/// are points predicted as a thing class sharing an instance id. Points whose
/// ground-truth class is not evaluated are dropped.
#[derive(Debug, Clone, Default)]
pub struct LstqAccumulator {
    /// Per ground-truth tube over all sequences: its size and overlaps as
    /// (intersection, predicted tube size).
    gt_tubes: Vec<(u64, Vec<(u64, u64)>)>,
    cls: MiouAccumulator,
}

impl LstqAccumulator {
    /// Adds one sequence; ids are only compared within it.
    pub fn add_sequence(
        &mut self,
        gt: &[PanopticLabeling],
        pred: &[PanopticLabeling],
        taxonomy: &Taxonomy,
    ) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::LengthMismatch {
                what: "ground-truth vs predicted sweeps",
                left: gt.len(),
                right: pred.len(),
            });
        }
        let mut g_size: HashMap<u32, u64> = HashMap::new();
        let mut p_size: HashMap<u32, u64> = HashMap::new();
        let mut inter: HashMap<(u32, u32), u64> = HashMap::new();
        for (g, p) in gt.iter().zip(pred) {
            if g.len() != p.len() {
                return Err(Error::LengthMismatch {
                    what: "ground-truth vs predicted points",
                    left: g.len(),
                    right: p.len(),
                });
            }
            self.cls.add(&g.sem, &p.sem, taxonomy)?;
            for k in 0..g.len() {
                if !taxonomy.is_evaluated(g.sem[k]) {
                    continue;
                }
                let gid = (taxonomy.is_thing(g.sem[k]) && g.inst[k] != NO_INSTANCE).then_some(g.inst[k]);
                let pid = (taxonomy.is_thing(p.sem[k]) && p.inst[k] != NO_INSTANCE).then_some(p.inst[k]);
                if let Some(gi) = gid {
                    *g_size.entry(gi).or_default() += 1;
                }
                if let Some(pi) = pid {
                    *p_size.entry(pi).or_default() += 1;
                }
                if let (Some(gi), Some(pi)) = (gid, pid) {
                    *inter.entry((gi, pi)).or_default() += 1;
                }
            }
        }
        let mut by_gt: HashMap<u32, Vec<(u64, u64)>> = HashMap::new();
        for ((gi, pi), n) in inter {
            by_gt.entry(gi).or_default().push((n, p_size[&pi]));
        }
        let mut ids: Vec<u32> = g_size.keys().copied().collect();
        ids.sort_unstable();
        for gi in ids {
            self.gt_tubes.push((g_size[&gi], by_gt.remove(&gi).unwrap_or_default()));
        }
        Ok(())
    }

    pub fn report(&self) -> LstqReport {
        let s_assoc = if self.gt_tubes.is_empty() {
            0.0
        } else {
            let total: f64 = self
                .gt_tubes
                .iter()
                .map(|(gs, overlaps)| {
                    overlaps
                        .iter()
                        .map(|&(tpa, ps)| {
                            let iou = tpa as f64 / (ps + gs - tpa) as f64;
                            tpa as f64 * iou
                        })
                        .sum::<f64>()
                        / *gs as f64
                })
                .sum();
            total / self.gt_tubes.len() as f64
        };
        let s_cls = self.cls.report().mean;
        LstqReport {
            s_assoc,
            s_cls,
            lstq: (s_assoc * s_cls).sqrt(),
        }
    }
}

/// LSTQ of a single sequence.
pub fn compute_lstq(gt: &[PanopticLabeling], pred: &[PanopticLabeling], taxonomy: &Taxonomy) -> Result<LstqReport> {
    let mut acc = LstqAccumulator::default();
    acc.add_sequence(gt, pred, taxonomy)?;
    Ok(acc.report())
}
