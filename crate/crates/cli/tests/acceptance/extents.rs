//! Extent strategies on the scattered corpus: panoptic quality ordering and
//! the size error on heavily occluded observations.

use std::time::Instant;

use modal_panoptic::inference::{
    panoptic_track_sequence, ExtentSource, FuseConfig, NmsConfig, PipelineConfig, SweepInput, TrackerConfig,
};
use modal_panoptic::membership::NearestCenter;
use modal_panoptic::metrics::PqAccumulator;
use modal_panoptic::synth::{generate_sequence, predicted_extents, simulate_detector, synth_taxonomy, DetectorNoise, SceneConfig};
use modal_panoptic::targets::{
    builtin_extent_strategies, class_wise_mean_extents, trajectories_from_sequence, StrategyParams, Vec3,
};
use modal_panoptic::voxel::GridSpec;

use crate::Verdict;

const SEQUENCES: u64 = 50;
const BUDGET_SECS: f64 = 300.0;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Largest per-axis relative error of a half-extent against the true one.
fn rel_error(est: Vec3, truth: Vec3) -> f64 {
    (0..3).map(|a| ((est[a] - truth[a]) / truth[a]).abs()).fold(0.0, f64::max)
}

pub fn run() -> Verdict {
    let t0 = Instant::now();
    let tax = synth_taxonomy();
    let spec = GridSpec::default();
    let mut corpus = Vec::new();
    for seed in 0..SEQUENCES {
        let (seq, gt) = generate_sequence(&SceneConfig {
            seed,
            ..Default::default()
        })
        .expect("scene");
        let trajs = trajectories_from_sequence(&seq, &tax).expect("trajectories");
        corpus.push((seq, gt, trajs));
    }

    let mut max_err = Vec::new();
    let mut sw_err = Vec::new();
    for (_, gt, trajs) in &corpus {
        for t in trajs {
            let truth = gt.get(t.instance_id).expect("box").half_extent;
            for r in &t.records {
                if gt.visible_lateral_faces(t.instance_id, r.sweep_index) == 1 {
                    max_err.push(rel_error(t.aggregated_extent, truth));
                    sw_err.push(rel_error(r.extent, truth));
                }
            }
        }
    }
    let heavy = max_err.len();
    let (med_max, med_sw) = (median(max_err), median(sw_err));

    let stats = class_wise_mean_extents(corpus.iter().flat_map(|c| c.2.iter()), &tax);
    let params = StrategyParams {
        cwm_stats: Some(stats),
        dsb_min_points: Some(40),
        ..Default::default()
    };
    let registry = builtin_extent_strategies();
    let noise = DetectorNoise {
        center_jitter: 0.1,
        confidence_noise: 0.05,
        ..Default::default()
    };
    let mut pq = Vec::new();
    for name in ["max", "cwm", "sw", "dsb"] {
        let strategy = registry.create(name, &params).expect("strategy");
        let mut acc = PqAccumulator::new(&tax);
        for (i, (seq, gt, trajs)) in corpus.iter().enumerate() {
            let ext = predicted_extents(trajs, strategy.as_ref());
            let maps = simulate_detector(seq, gt, &tax, &spec, &noise, &ext, None, i as u64).expect("detector");
            let inputs: Vec<SweepInput> = seq
                .sweeps
                .iter()
                .zip(&maps)
                .map(|(s, m)| SweepInput { points: &s.points, maps: m })
                .collect();
            let cfg = PipelineConfig {
                nms: NmsConfig::default(),
                extents: ExtentSource::default(),
                fuse: FuseConfig::default(),
                tracker: TrackerConfig::default(),
                period: seq.period,
            };
            let out = panoptic_track_sequence(&inputs, &NearestCenter, &tax, &cfg).expect("pipeline");
            for (s, p) in seq.sweeps.iter().zip(&out) {
                acc.add(&s.ground_truth(), p).expect("pq");
            }
        }
        pq.push(acc.report().all.pq);
    }
    let secs = t0.elapsed().as_secs_f64();
    let order = pq[0] > pq[1] && pq[1] >= pq[2] && pq[2] > pq[3];
    let pass = order && med_max < 0.05 && med_sw > 0.20 && secs < BUDGET_SECS;
    Verdict::new(
        pass,
        format!(
            "PQ max {:.4} cwm {:.4} sw {:.4} dsb {:.4}; {heavy} one-face records, median size error max {:.3} sw {:.3}; {secs:.0}s of {BUDGET_SECS:.0}s",
            pq[0], pq[1], pq[2], pq[3], med_max, med_sw
        ),
    )
}
