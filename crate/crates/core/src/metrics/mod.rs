//! Panoptic quality, semantic IoU, LSTQ and membership accuracy.

mod lstq;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

pub use lstq::{compute_lstq, LstqAccumulator, LstqReport};

use crate::error::{Error, Result};
use crate::membership::Detection;
use crate::targets::Vec3;
use crate::types::{ClassKind, PanopticLabeling, Taxonomy, NO_INSTANCE};

/// Raw per-class counts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassCounts {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Point-level semantic intersection and union.
    pub inter: u64,
    pub union: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub class_id: u16,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub iou: f64,
    pub counts: ClassCounts,
}

impl ClassScores {
    fn from_counts(class_id: u16, c: ClassCounts) -> Self {
        let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
        let denom = tp + 0.5 * fp + 0.5 * fn_;
        let sq = if c.tp > 0 { c.iou_sum / tp } else { 0.0 };
        let rq = if denom > 0.0 { tp / denom } else { 0.0 };
        let iou = if c.union > 0 { c.inter as f64 / c.union as f64 } else { 0.0 };
        Self {
            class_id,
            pq: sq * rq,
            sq,
            rq,
            iou,
            counts: c,
        }
    }
}

/// Means over a class subset; `None` when the subset is empty.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Aggregate {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub iou: f64,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqReport {
    /// Classes with at least one segment in ground truth or prediction.
    pub classes: Vec<ClassScores>,
    pub all: Aggregate,
    pub things: Aggregate,
    pub stuff: Aggregate,
    /// Thing PQ and stuff IoU averaged together.
    pub pq_dagger: f64,
}

/// Per-class PQ statistics accumulated over many frames.
#[derive(Debug, Clone)]
pub struct PqAccumulator {
    taxonomy: Taxonomy,
    counts: BTreeMap<u16, ClassCounts>,
}

/// Segment key: (class, instance id); stuff uses instance 0.
type SegKey = (u16, u32);

impl PqAccumulator {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        Self {
            taxonomy: taxonomy.clone(),
            counts: BTreeMap::new(),
        }
    }

    /// Adds one frame.
    pub fn add(&mut self, gt: &PanopticLabeling, pred: &PanopticLabeling) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::LengthMismatch {
                what: "ground truth vs prediction points",
                left: gt.len(),
                right: pred.len(),
            });
        }
        let tax = &self.taxonomy;
        let mut gt_sizes: HashMap<SegKey, u64> = HashMap::new();
        for (&s, &i) in gt.sem.iter().zip(&gt.inst) {
            if tax.is_thing(s) && i != NO_INSTANCE {
                *gt_sizes.entry((s, i)).or_default() += 1;
            }
        }
        let min = tax.min_instance_points as u64;
        let gt_key = |s: u16, i: u32| -> Option<SegKey> {
            match tax.kind(s) {
                ClassKind::Stuff => Some((s, 0)),
                ClassKind::Thing if i != NO_INSTANCE && gt_sizes[&(s, i)] >= min => Some((s, i)),
                _ => None,
            }
        };
        let pred_key = |s: u16, i: u32| -> Option<SegKey> {
            match tax.kind(s) {
                ClassKind::Stuff => Some((s, 0)),
                ClassKind::Thing if i != NO_INSTANCE => Some((s, i)),
                _ => None,
            }
        };
        let mut g_area: HashMap<SegKey, u64> = HashMap::new();
        let mut p_area: HashMap<SegKey, u64> = HashMap::new();
        let mut inter: HashMap<(SegKey, SegKey), u64> = HashMap::new();
        for k in 0..gt.len() {
            let Some(g) = gt_key(gt.sem[k], gt.inst[k]) else { continue };
            *g_area.entry(g).or_default() += 1;
            let ps = pred.sem[k];
            let entry = self.counts.entry(g.0).or_default();
            if ps == g.0 {
                entry.inter += 1;
                entry.union += 1;
            } else {
                entry.union += 1;
                if tax.is_evaluated(ps) {
                    self.counts.entry(ps).or_default().union += 1;
                }
            }
            if let Some(p) = pred_key(ps, pred.inst[k]) {
                *p_area.entry(p).or_default() += 1;
                if p.0 == g.0 {
                    *inter.entry((g, p)).or_default() += 1;
                }
            }
        }
        let mut g_matched: HashMap<SegKey, bool> = g_area.keys().map(|k| (*k, false)).collect();
        let mut p_matched: HashMap<SegKey, bool> = p_area.keys().map(|k| (*k, false)).collect();
        let mut pairs: Vec<_> = inter.into_iter().collect();
        pairs.sort_unstable_by_key(|(k, _)| *k);
        for ((g, p), i) in pairs {
            let union = g_area[&g] + p_area[&p] - i;
            let iou = i as f64 / union as f64;
            if iou > 0.5 {
                let c = self.counts.entry(g.0).or_default();
                c.tp += 1;
                c.iou_sum += iou;
                g_matched.insert(g, true);
                p_matched.insert(p, true);
            }
        }
        let mut g_keys: Vec<_> = g_matched.into_iter().filter(|(_, m)| !m).map(|(k, _)| k).collect();
        g_keys.sort_unstable();
        for g in g_keys {
            self.counts.entry(g.0).or_default().fn_ += 1;
        }
        let mut p_keys: Vec<_> = p_matched.into_iter().filter(|(_, m)| !m).map(|(k, _)| k).collect();
        p_keys.sort_unstable();
        for p in p_keys {
            self.counts.entry(p.0).or_default().fp += 1;
        }
        Ok(())
    }

    pub fn counts(&self) -> &BTreeMap<u16, ClassCounts> {
        &self.counts
    }

    pub fn report(&self) -> PqReport {
        let tax = &self.taxonomy;
        let classes: Vec<ClassScores> = self
            .counts
            .iter()
            .filter(|(c, n)| tax.is_evaluated(**c) && n.tp + n.fp + n.fn_ > 0)
            .map(|(c, n)| ClassScores::from_counts(*c, *n))
            .collect();
        let agg = |pick: &dyn Fn(u16) -> bool| {
            let sel: Vec<&ClassScores> = classes.iter().filter(|c| pick(c.class_id)).collect();
            if sel.is_empty() {
                return Aggregate::default();
            }
            let n = sel.len() as f64;
            Aggregate {
                pq: sel.iter().map(|c| c.pq).sum::<f64>() / n,
                sq: sel.iter().map(|c| c.sq).sum::<f64>() / n,
                rq: sel.iter().map(|c| c.rq).sum::<f64>() / n,
                iou: sel.iter().map(|c| c.iou).sum::<f64>() / n,
                classes: sel.len(),
            }
        };
        let all = agg(&|_| true);
        let things = agg(&|c| tax.is_thing(c));
        let stuff = agg(&|c| tax.is_stuff(c));
        let dagger_terms: Vec<f64> = classes
            .iter()
            .map(|c| if tax.is_thing(c.class_id) { c.pq } else { c.iou })
            .collect();
        let pq_dagger = if dagger_terms.is_empty() {
            0.0
        } else {
            dagger_terms.iter().sum::<f64>() / dagger_terms.len() as f64
        };
        PqReport {
            classes,
            all,
            things,
            stuff,
            pq_dagger,
        }
    }
}

/// PQ of a single frame.
pub fn compute_pq(gt: &PanopticLabeling, pred: &PanopticLabeling, taxonomy: &Taxonomy) -> Result<PqReport> {
    let mut acc = PqAccumulator::new(taxonomy);
    acc.add(gt, pred)?;
    Ok(acc.report())
}

impl PqReport {
    pub const CSV_HEADER: &'static str = "class,pq,sq,rq,iou,tp,fp,fn";

    pub fn to_csv(&self, taxonomy: &Taxonomy) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", Self::CSV_HEADER);
        let mut totals = ClassCounts::default();
        for c in &self.classes {
            let n = c.counts;
            totals.tp += n.tp;
            totals.fp += n.fp;
            totals.fn_ += n.fn_;
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
                taxonomy.name(c.class_id),
                c.pq,
                c.sq,
                c.rq,
                c.iou,
                n.tp,
                n.fp,
                n.fn_
            );
        }
        for (name, a) in [("all", self.all), ("things", self.things), ("stuff", self.stuff)] {
            let _ = writeln!(s, "{name},{:.6},{:.6},{:.6},{:.6},,,", a.pq, a.sq, a.rq, a.iou);
        }
        let _ = writeln!(s, "pq_dagger,{:.6},,,,,,", self.pq_dagger);
        let _ = writeln!(s, "total,,,,,{},{},{}", totals.tp, totals.fp, totals.fn_);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    /// (class, IoU) for classes present in ground truth or prediction.
    pub per_class: Vec<(u16, f64)>,
    pub mean: f64,
}

/// Semantic IoU over points whose ground-truth class is evaluated.
pub fn compute_miou(gt: &[u16], pred: &[u16], taxonomy: &Taxonomy) -> Result<MiouReport> {
    let mut acc = MiouAccumulator::default();
    acc.add(gt, pred, taxonomy)?;
    Ok(acc.report())
}

#[derive(Debug, Clone, Default)]
pub struct MiouAccumulator {
    /// class → (tp, fp, fn)
    counts: BTreeMap<u16, (u64, u64, u64)>,
}

impl MiouAccumulator {
    pub fn add(&mut self, gt: &[u16], pred: &[u16], taxonomy: &Taxonomy) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::LengthMismatch {
                what: "ground truth vs prediction classes",
                left: gt.len(),
                right: pred.len(),
            });
        }
        for (&g, &p) in gt.iter().zip(pred) {
            if !taxonomy.is_evaluated(g) {
                continue;
            }
            if g == p {
                self.counts.entry(g).or_default().0 += 1;
            } else {
                self.counts.entry(g).or_default().2 += 1;
                if taxonomy.is_evaluated(p) {
                    self.counts.entry(p).or_default().1 += 1;
                }
            }
        }
        Ok(())
    }

    pub fn report(&self) -> MiouReport {
        let per_class: Vec<(u16, f64)> = self
            .counts
            .iter()
            .filter(|(_, c)| c.0 + c.1 + c.2 > 0)
            .map(|(k, c)| (*k, c.0 as f64 / (c.0 + c.1 + c.2) as f64))
            .collect();
        let mean = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(|c| c.1).sum::<f64>() / per_class.len() as f64
        };
        MiouReport { per_class, mean }
    }
}

/// A ground-truth instance as seen by the membership metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtCenter {
    pub instance_id: u32,
    pub class_id: u16,
    pub center: Vec3,
}

/// One-to-one greedy matching of detections to ground-truth instances of the
/// same class by increasing center distance.
pub fn match_detections(detections: &[Detection], gt: &[GtCenter]) -> Vec<Option<u32>> {
    let mut pairs = Vec::new();
    for (d, det) in detections.iter().enumerate() {
        for (g, inst) in gt.iter().enumerate() {
            if inst.class_id == det.class_id {
                let dist: f64 = (0..3).map(|a| (det.center[a] - inst.center[a]).powi(2)).sum::<f64>().sqrt();
                pairs.push((dist, d, g));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut out = vec![None; detections.len()];
    let mut used = vec![false; gt.len()];
    for (_, d, g) in pairs {
        if out[d].is_none() && !used[g] {
            out[d] = Some(gt[g].instance_id);
            used[g] = true;
        }
    }
    out
}

/// Fraction of evaluated points assigned correctly. `evaluated[i]` marks
/// points inside at least one RoI; `det_to_gt` maps detections to their
/// matched ground-truth instance. A point of instance `g` is correct iff its
/// detection maps to `g`; a point of no instance is correct iff unassigned.
/// Returns (correct, evaluated).
pub fn membership_accuracy(
    assigned: &[Option<usize>],
    gt_inst: &[u32],
    evaluated: &[bool],
    det_to_gt: &[Option<u32>],
) -> Result<(u64, u64)> {
    if assigned.len() != gt_inst.len() || assigned.len() != evaluated.len() {
        return Err(Error::LengthMismatch {
            what: "assignment vs labels",
            left: assigned.len(),
            right: gt_inst.len().min(evaluated.len()),
        });
    }
    let mut correct = 0;
    let mut total = 0;
    for i in 0..assigned.len() {
        if !evaluated[i] {
            continue;
        }
        total += 1;
        let ok = match (gt_inst[i], assigned[i]) {
            (NO_INSTANCE, None) => true,
            (NO_INSTANCE, Some(_)) => false,
            (_, None) => false,
            (g, Some(d)) => det_to_gt.get(d).copied().flatten() == Some(g),
        };
        if ok {
            correct += 1;
        }
    }
    Ok((correct, total))
}
