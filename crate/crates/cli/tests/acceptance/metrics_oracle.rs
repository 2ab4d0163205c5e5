//! PQ and LSTQ against a brute-force re-derivation that walks every
//! (ground-truth segment, predicted segment) pair point by point.

use std::collections::BTreeMap;

use modal_panoptic::metrics::{compute_lstq, LstqAccumulator, PqAccumulator, PqReport};
use modal_panoptic::types::{PanopticLabeling, Taxonomy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Verdict;

const CASES: u64 = 200;
const TOL: f64 = 1e-12;

type Key = (u16, u32);
type Sequence = (Vec<PanopticLabeling>, Vec<PanopticLabeling>);

fn taxonomy() -> Taxonomy {
    Taxonomy::parse(
        "min_instance_points=3\n0\tunlabeled\tignore\n1\tcar\tthing\n2\tped\tthing\n3\troad\tstuff\n4\tveg\tstuff\n",
        "oracle",
    )
    .expect("taxonomy")
}

fn lab(sem: Vec<u16>, inst: Vec<u32>) -> PanopticLabeling {
    PanopticLabeling::new(sem, inst).expect("labeling")
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
    inter: u64,
    union: u64,
    iou_sum: f64,
}

fn gt_segment(tax: &Taxonomy, gt: &PanopticLabeling, k: usize) -> Option<Key> {
    let (s, i) = (gt.sem[k], gt.inst[k]);
    if tax.is_stuff(s) {
        return Some((s, 0));
    }
    if tax.is_thing(s) && i != 0 {
        let size = (0..gt.len()).filter(|&j| gt.sem[j] == s && gt.inst[j] == i).count();
        if size >= tax.min_instance_points {
            return Some((s, i));
        }
    }
    None
}

fn pred_segment(tax: &Taxonomy, pred: &PanopticLabeling, k: usize) -> Option<Key> {
    let (s, i) = (pred.sem[k], pred.inst[k]);
    if tax.is_stuff(s) {
        Some((s, 0))
    } else if tax.is_thing(s) && i != 0 {
        Some((s, i))
    } else {
        None
    }
}

fn oracle_pq_frame(tax: &Taxonomy, gt: &PanopticLabeling, pred: &PanopticLabeling, counts: &mut BTreeMap<u16, Counts>) {
    let n = gt.len();
    let gseg: Vec<Option<Key>> = (0..n).map(|k| gt_segment(tax, gt, k)).collect();
    let kept: Vec<usize> = (0..n).filter(|&k| gseg[k].is_some()).collect();
    let pseg: Vec<Option<Key>> = (0..n).map(|k| pred_segment(tax, pred, k)).collect();
    for c in tax.evaluated_ids() {
        let mut gs: Vec<Key> = kept.iter().filter_map(|&k| gseg[k]).filter(|s| s.0 == c).collect();
        gs.sort_unstable();
        gs.dedup();
        let mut ps: Vec<Key> = kept.iter().filter_map(|&k| pseg[k]).filter(|s| s.0 == c).collect();
        ps.sort_unstable();
        ps.dedup();
        let entry = counts.entry(c).or_default();
        let mut g_hit = vec![false; gs.len()];
        let mut p_hit = vec![false; ps.len()];
        for (a, g) in gs.iter().enumerate() {
            for (b, p) in ps.iter().enumerate() {
                let inter = kept.iter().filter(|&&k| gseg[k] == Some(*g) && pseg[k] == Some(*p)).count();
                let g_size = kept.iter().filter(|&&k| gseg[k] == Some(*g)).count();
                let p_size = kept.iter().filter(|&&k| pseg[k] == Some(*p)).count();
                let iou = inter as f64 / (g_size + p_size - inter) as f64;
                if iou > 0.5 {
                    assert!(!g_hit[a] && !p_hit[b], "segment matched twice");
                    g_hit[a] = true;
                    p_hit[b] = true;
                    entry.tp += 1;
                    entry.iou_sum += iou;
                }
            }
        }
        entry.fn_ += g_hit.iter().filter(|h| !**h).count() as u64;
        entry.fp += p_hit.iter().filter(|h| !**h).count() as u64;
        entry.inter += kept.iter().filter(|&&k| gt.sem[k] == c && pred.sem[k] == c).count() as u64;
        entry.union += kept.iter().filter(|&&k| gt.sem[k] == c || pred.sem[k] == c).count() as u64;
    }
}

/// (pq, sq, rq, iou) of one class.
fn oracle_scores(c: &Counts) -> [f64; 4] {
    let denom = c.tp as f64 + 0.5 * c.fp as f64 + 0.5 * c.fn_ as f64;
    let pq = if denom > 0.0 { c.iou_sum / denom } else { 0.0 };
    let sq = if c.tp > 0 { c.iou_sum / c.tp as f64 } else { 0.0 };
    let rq = if denom > 0.0 { c.tp as f64 / denom } else { 0.0 };
    let iou = if c.union > 0 { c.inter as f64 / c.union as f64 } else { 0.0 };
    [pq, sq, rq, iou]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// Compares counts exactly and every score to `TOL`; returns a reason on
/// mismatch.
fn compare_pq(tax: &Taxonomy, acc: &PqAccumulator, report: &PqReport, oracle: &BTreeMap<u16, Counts>) -> Result<(), String> {
    for c in tax.evaluated_ids() {
        let o = oracle.get(&c).copied().unwrap_or_default();
        let m = acc.counts().get(&c).copied().unwrap_or_default();
        if (m.tp, m.fp, m.fn_, m.inter, m.union) != (o.tp, o.fp, o.fn_, o.inter, o.union) || !close(m.iou_sum, o.iou_sum) {
            return Err(format!("class {c}: counts {m:?} vs oracle {o:?}"));
        }
    }
    let present: Vec<u16> = oracle
        .iter()
        .filter(|(_, c)| c.tp + c.fp + c.fn_ > 0)
        .map(|(k, _)| *k)
        .collect();
    let reported: Vec<u16> = report.classes.iter().map(|c| c.class_id).collect();
    if present != reported {
        return Err(format!("reported classes {reported:?} vs oracle {present:?}"));
    }
    for c in &report.classes {
        let o = oracle_scores(&oracle[&c.class_id]);
        if !(close(c.pq, o[0]) && close(c.sq, o[1]) && close(c.rq, o[2]) && close(c.iou, o[3])) {
            return Err(format!("class {} scores {:?} vs oracle {o:?}", c.class_id, [c.pq, c.sq, c.rq, c.iou]));
        }
    }
    let mean = |pick: &dyn Fn(u16) -> bool, field: usize| {
        let v: Vec<f64> = present.iter().filter(|c| pick(**c)).map(|c| oracle_scores(&oracle[c])[field]).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let groups: [(&str, &dyn Fn(u16) -> bool, _); 3] = [
        ("all", &|_| true, report.all),
        ("things", &|c| tax.is_thing(c), report.things),
        ("stuff", &|c| tax.is_stuff(c), report.stuff),
    ];
    for (name, pick, agg) in groups {
        let want = [mean(pick, 0), mean(pick, 1), mean(pick, 2), mean(pick, 3)];
        let got = [agg.pq, agg.sq, agg.rq, agg.iou];
        if !(0..4).all(|i| close(got[i], want[i])) {
            return Err(format!("{name} aggregate {got:?} vs oracle {want:?}"));
        }
    }
    let dagger: Vec<f64> = present
        .iter()
        .map(|c| {
            let s = oracle_scores(&oracle[c]);
            if tax.is_thing(*c) {
                s[0]
            } else {
                s[3]
            }
        })
        .collect();
    let want = if dagger.is_empty() {
        0.0
    } else {
        dagger.iter().sum::<f64>() / dagger.len() as f64
    };
    if !close(report.pq_dagger, want) {
        return Err(format!("PQ-dagger {} vs oracle {want}", report.pq_dagger));
    }
    Ok(())
}

/// (S_assoc, S_cls, LSTQ) pooled over sequences.
fn oracle_lstq(tax: &Taxonomy, seqs: &[Sequence]) -> [f64; 3] {
    let mut tubes = Vec::new();
    let mut cls_points: Vec<(u16, u16)> = Vec::new();
    for (gts, preds) in seqs {
        let mut pts: Vec<(Option<u32>, Option<u32>)> = Vec::new();
        for (g, p) in gts.iter().zip(preds) {
            for k in 0..g.len() {
                if !tax.is_evaluated(g.sem[k]) {
                    continue;
                }
                cls_points.push((g.sem[k], p.sem[k]));
                let gid = (tax.is_thing(g.sem[k]) && g.inst[k] != 0).then_some(g.inst[k]);
                let pid = (tax.is_thing(p.sem[k]) && p.inst[k] != 0).then_some(p.inst[k]);
                pts.push((gid, pid));
            }
        }
        let mut gids: Vec<u32> = pts.iter().filter_map(|p| p.0).collect();
        gids.sort_unstable();
        gids.dedup();
        let mut pids: Vec<u32> = pts.iter().filter_map(|p| p.1).collect();
        pids.sort_unstable();
        pids.dedup();
        for g in gids {
            let g_size = pts.iter().filter(|p| p.0 == Some(g)).count() as f64;
            let mut sum = 0.0;
            for &p in &pids {
                let tpa = pts.iter().filter(|q| q.0 == Some(g) && q.1 == Some(p)).count() as f64;
                if tpa > 0.0 {
                    let p_size = pts.iter().filter(|q| q.1 == Some(p)).count() as f64;
                    sum += tpa * tpa / (g_size + p_size - tpa);
                }
            }
            tubes.push(sum / g_size);
        }
    }
    let s_assoc = if tubes.is_empty() {
        0.0
    } else {
        tubes.iter().sum::<f64>() / tubes.len() as f64
    };
    let ious: Vec<f64> = tax
        .evaluated_ids()
        .into_iter()
        .filter_map(|c| {
            let tp = cls_points.iter().filter(|(g, p)| *g == c && *p == c).count();
            let any = cls_points.iter().filter(|(g, p)| *g == c || *p == c).count();
            (any > 0).then(|| tp as f64 / any as f64)
        })
        .collect();
    let s_cls = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    [s_assoc, s_cls, (s_assoc * s_cls).sqrt()]
}

fn random_frame(rng: &mut ChaCha8Rng, n: usize, instances: &[(u16, u32, f64)]) -> PanopticLabeling {
    let present: Vec<&(u16, u32, f64)> = instances.iter().filter(|_| rng.random_bool(0.8)).collect();
    let total: f64 = present.iter().map(|i| i.2).sum();
    let mut sem = Vec::with_capacity(n);
    let mut inst = Vec::with_capacity(n);
    for _ in 0..n {
        let r: f64 = rng.random();
        if r < 0.08 {
            sem.push(0);
            inst.push(if rng.random_bool(0.5) { 0 } else { rng.random_range(1..60) });
        } else if r < 0.35 || present.is_empty() {
            sem.push(rng.random_range(3..=4));
            inst.push(0);
        } else if r < 0.39 {
            sem.push(rng.random_range(1..=2));
            inst.push(0);
        } else {
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = present[present.len() - 1];
            for p in &present {
                if pick < p.2 {
                    chosen = p;
                    break;
                }
                pick -= p.2;
            }
            sem.push(chosen.0);
            inst.push(chosen.1);
        }
    }
    lab(sem, inst)
}

/// Prediction derived from the ground truth by splits, merges, id switches,
/// dropped instances, point noise and an id relabeling.
fn perturb(rng: &mut ChaCha8Rng, gts: &[PanopticLabeling]) -> Vec<PanopticLabeling> {
    let mut preds: Vec<PanopticLabeling> = gts.to_vec();
    let ids: Vec<u32> = {
        let mut v: Vec<u32> = gts.iter().flat_map(|g| g.inst.iter().copied()).filter(|i| *i != 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut fresh = 100u32;
    for _ in 0..rng.random_range(0..4) {
        if ids.is_empty() {
            break;
        }
        let a = ids[rng.random_range(0..ids.len())];
        match rng.random_range(0..4) {
            0 => {
                let frac = rng.random_range(0.2..0.6);
                fresh += 1;
                for p in &mut preds {
                    for k in 0..p.len() {
                        if p.inst[k] == a && rng.random_bool(frac) {
                            p.inst[k] = fresh;
                        }
                    }
                }
            }
            1 => {
                let b = ids[rng.random_range(0..ids.len())];
                for p in &mut preds {
                    let class = (0..p.len()).find(|&k| p.inst[k] == a).map(|k| p.sem[k]);
                    for k in 0..p.len() {
                        if p.inst[k] == b {
                            p.inst[k] = a;
                            if let Some(c) = class {
                                p.sem[k] = c;
                            }
                        }
                    }
                }
            }
            2 => {
                fresh += 1;
                let from = rng.random_range(0..preds.len());
                for p in &mut preds[from..] {
                    p.inst.iter_mut().filter(|i| **i == a).for_each(|i| *i = fresh);
                }
            }
            _ => {
                for p in &mut preds {
                    for k in 0..p.len() {
                        if p.inst[k] == a {
                            p.inst[k] = 0;
                            if rng.random_bool(0.5) {
                                p.sem[k] = 3;
                            }
                        }
                    }
                }
            }
        }
    }
    let noise = rng.random_range(0.0..0.05);
    for p in &mut preds {
        for k in 0..p.len() {
            if rng.random_bool(noise) {
                p.sem[k] = rng.random_range(0..=4);
                p.inst[k] = rng.random_range(0..8);
            }
        }
    }
    let mut perm: Vec<u32> = (1..=200).collect();
    perm.shuffle(rng);
    for p in &mut preds {
        p.inst.iter_mut().filter(|i| **i != 0).for_each(|i| *i = perm[(*i as usize - 1) % 200]);
    }
    preds
}

fn random_case(seed: u64) -> Vec<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_seq = rng.random_range(1..=2);
    let frames: Vec<usize> = (0..n_seq).map(|_| rng.random_range(1..=3)).collect();
    let per_frame = 2000 / frames.iter().sum::<usize>();
    let mut out = Vec::new();
    for f in frames {
        let n_inst = rng.random_range(0..=8);
        let instances: Vec<(u16, u32, f64)> = (0..n_inst)
            .map(|j| {
                let weight = [0.02, 0.3, 1.0, 3.0][rng.random_range(0..4)];
                (rng.random_range(1..=2), j as u32 + 1, weight)
            })
            .collect();
        let gts: Vec<PanopticLabeling> = (0..f)
            .map(|_| {
                let n = rng.random_range(10..=per_frame);
                random_frame(&mut rng, n, &instances)
            })
            .collect();
        let preds = perturb(&mut rng, &gts);
        out.push((gts, preds));
    }
    out
}

fn check_case(tax: &Taxonomy, seqs: &[Sequence]) -> Result<(), String> {
    let mut acc = PqAccumulator::new(tax);
    let mut oracle = BTreeMap::new();
    let mut lstq = LstqAccumulator::default();
    for (gts, preds) in seqs {
        for (g, p) in gts.iter().zip(preds) {
            acc.add(g, p).map_err(|e| e.to_string())?;
            oracle_pq_frame(tax, g, p, &mut oracle);
        }
        lstq.add_sequence(gts, preds, tax).map_err(|e| e.to_string())?;
    }
    compare_pq(tax, &acc, &acc.report(), &oracle)?;
    let got = lstq.report();
    let want = oracle_lstq(tax, seqs);
    let got = [got.s_assoc, got.s_cls, got.lstq];
    if !(0..3).all(|i| close(got[i], want[i])) {
        return Err(format!("LSTQ {got:?} vs oracle {want:?}"));
    }
    Ok(())
}

/// Hand-built split, merge and id-switch scenes with known scores.
fn named_cases(tax: &Taxonomy) -> Result<(), String> {
    let road = |n: usize| (vec![3u16; n], vec![0u32; n]);
    let frame = |cars: &[(u32, usize)], n_road: usize| {
        let (mut sem, mut inst) = road(n_road);
        for &(id, n) in cars {
            sem.extend(std::iter::repeat_n(1u16, n));
            inst.extend(std::iter::repeat_n(id, n));
        }
        lab(sem, inst)
    };

    // One car seen twice; the prediction changes its id between sweeps.
    let gts = vec![frame(&[(7, 10)], 5), frame(&[(7, 10)], 5)];
    let preds = vec![frame(&[(1, 10)], 5), frame(&[(2, 10)], 5)];
    let r = compute_lstq(&gts, &preds, tax).map_err(|e| e.to_string())?;
    if !close(r.s_assoc, 0.5) {
        return Err(format!("id switch S_assoc {} != 0.5", r.s_assoc));
    }
    check_case(tax, &[(gts, preds)])?;

    // Split 6/4: a match at IoU 0.6 and a false positive.
    let gt = frame(&[(1, 10)], 5);
    let split = frame(&[(1, 6), (2, 4)], 5);
    let mut acc = PqAccumulator::new(tax);
    acc.add(&gt, &split).map_err(|e| e.to_string())?;
    let car = acc.counts()[&1];
    if (car.tp, car.fp, car.fn_) != (1, 1, 0) || !close(acc.report().classes[0].pq, 0.6 / 1.5) {
        return Err(format!("split counts {car:?}"));
    }
    check_case(tax, &[(vec![gt], vec![split])])?;

    // Merge of a 6- and a 4-point car: the larger one matches, the other is
    // missed.
    let gt = frame(&[(1, 6), (2, 4)], 5);
    let merged = frame(&[(9, 10)], 5);
    let mut acc = PqAccumulator::new(tax);
    acc.add(&gt, &merged).map_err(|e| e.to_string())?;
    let car = acc.counts()[&1];
    if (car.tp, car.fp, car.fn_) != (1, 0, 1) || !close(car.iou_sum, 0.6) {
        return Err(format!("merge counts {car:?}"));
    }
    check_case(tax, &[(vec![gt], vec![merged])])
}

pub fn run() -> Verdict {
    let tax = taxonomy();
    if let Err(e) = named_cases(&tax) {
        return Verdict::new(false, e);
    }
    let mut points = 0;
    for seed in 0..CASES {
        let case = random_case(seed);
        points += case.iter().flat_map(|s| s.0.iter()).map(|g| g.len()).sum::<usize>();
        if let Err(e) = check_case(&tax, &case) {
            return Verdict::new(false, format!("scene {seed}: {e}"));
        }
    }
    Verdict::new(
        true,
        format!("split, merge and id-switch scenes plus {CASES} random scenes ({points} points) agree with the brute-force oracle"),
    )
}
