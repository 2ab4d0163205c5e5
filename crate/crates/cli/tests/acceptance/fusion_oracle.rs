//! Panoptic fusion against a per-point re-derivation of the assignment rules.
//! Coordinates, extents and margins are multiples of 1/4 so RoI boundary
//! comparisons are exact.

use modal_panoptic::inference::{fuse_panoptic, ConflictRule, FuseConfig};
use modal_panoptic::membership::{Detection, MembershipFunction, MembershipQuery, RoiMargin, SweepFeatures};
use modal_panoptic::synth::synth_taxonomy;
use modal_panoptic::types::{Point, Taxonomy};
use modal_panoptic::voxel::GridSpec;
use modal_panoptic::Result;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Verdict;

const CASES: u64 = 100;

/// Fixed score per (detection, point).
struct Table(Vec<Vec<f64>>);

impl MembershipFunction for Table {
    fn name(&self) -> &'static str {
        "table"
    }

    fn score(&self, _: &MembershipQuery<'_>, det: usize, roi: &[usize]) -> Result<Vec<f64>> {
        Ok(roi.iter().map(|&i| self.0[det][i]).collect())
    }
}

struct Case {
    points: Vec<Point>,
    sem: Vec<u16>,
    dets: Vec<Detection>,
    scores: Vec<Vec<f64>>,
    cfg: FuseConfig,
}

fn quarter(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    f64::from(rng.random_range(lo..=hi)) * 0.25
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=60);
    let points: Vec<Point> = (0..n)
        .map(|_| Point::new(quarter(&mut rng, -10, 10), quarter(&mut rng, -10, 10), quarter(&mut rng, -4, 4)))
        .collect();
    let sem: Vec<u16> = (0..n).map(|_| [0, 1, 1, 1, 2, 2, 2, 3][rng.random_range(0..8)]).collect();
    let m = rng.random_range(0..=5);
    let mut conf: Vec<f64> = (0..m).map(|_| [0.3, 0.5, 0.5, 0.8, 0.9][rng.random_range(0..5)]).collect();
    conf.sort_by(|a, b| b.total_cmp(a));
    let dets: Vec<Detection> = conf
        .iter()
        .map(|&c| Detection {
            center: [quarter(&mut rng, -6, 6), quarter(&mut rng, -6, 6), quarter(&mut rng, -2, 2)],
            confidence: c,
            class_id: rng.random_range(1..=2),
            extent: [quarter(&mut rng, 1, 12), quarter(&mut rng, 1, 12), quarter(&mut rng, 1, 8)],
        })
        .collect();
    let scores: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| match rng.random_range(0..5) {
                    0 => 0.5,
                    1 => 0.5 + 1e-12,
                    2 => 1.0,
                    _ => rng.random(),
                })
                .collect()
        })
        .collect();
    let margin = [
        RoiMargin::NONE,
        RoiMargin::default(),
        RoiMargin { ratio: 0.5, floor: 0.25 },
        RoiMargin { ratio: 0.0, floor: 0.25 },
    ][rng.random_range(0..4)];
    let conflict = if rng.random_bool(0.5) {
        ConflictRule::FirstWins
    } else {
        ConflictRule::Argmax
    };
    Case {
        points,
        sem,
        dets,
        scores,
        cfg: FuseConfig { margin, conflict },
    }
}

/// Owner of point `i`: among detections of the point's class whose inflated
/// box strictly contains it and whose score is strictly above 1/2, the first
/// (first-wins) or the highest scoring, earliest on ties (argmax).
fn oracle_owner(c: &Case, i: usize) -> Option<usize> {
    let p = c.points[i].xyz();
    let m = c.cfg.margin;
    let mut best: Option<(usize, f64)> = None;
    for (d, det) in c.dets.iter().enumerate() {
        if det.class_id != c.sem[i] {
            continue;
        }
        let inside = (0..3).all(|a| {
            let r = det.extent[a] + (m.ratio * det.extent[a]).max(m.floor);
            (p[a] - det.center[a]).abs() < r
        });
        let s = c.scores[d][i];
        if !inside || s <= 0.5 {
            continue;
        }
        match c.cfg.conflict {
            ConflictRule::FirstWins => return Some(d),
            ConflictRule::Argmax => {
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((d, s));
                }
            }
        }
    }
    best.map(|b| b.0)
}

fn check(c: &Case, tax: &Taxonomy) -> std::result::Result<(), String> {
    let features = SweepFeatures {
        point: Array2::zeros((c.points.len(), 1)),
        bev: GridSpec::default().bev_raster(1).expect("raster"),
    };
    let out = fuse_panoptic(&c.points, &c.sem, &c.dets, &Table(c.scores.clone()), &features, tax, &c.cfg)
        .map_err(|e| e.to_string())?;
    for i in 0..c.points.len() {
        let owner = oracle_owner(c, i);
        let want_inst = owner.map_or(0, |d| d as u32 + 1);
        let want_sem = owner.map_or(c.sem[i], |d| c.dets[d].class_id);
        if out.assigned[i] != owner || out.labeling.inst[i] != want_inst || out.labeling.sem[i] != want_sem {
            return Err(format!(
                "point {i}: got {:?}/{}/{} want {owner:?}/{want_inst}/{want_sem}",
                out.assigned[i], out.labeling.inst[i], out.labeling.sem[i]
            ));
        }
    }
    Ok(())
}

pub fn run() -> Verdict {
    let tax = synth_taxonomy();
    let mut assigned = 0;
    let mut boundary = 0;
    for seed in 0..CASES {
        let c = random_case(seed);
        if let Err(e) = check(&c, &tax) {
            return Verdict::new(false, format!("case {seed} ({}): {e}", c.cfg.conflict.name()));
        }
        assigned += (0..c.points.len()).filter(|&i| oracle_owner(&c, i).is_some()).count();
        boundary += c.scores.iter().flatten().filter(|s| **s == 0.5).count();
    }
    Verdict::new(
        true,
        format!("{CASES} random scenes agree point by point ({assigned} assigned points, {boundary} scores at exactly 0.5)"),
    )
}
