//! A noiseless detector with MAX extents and nearest-center membership must
//! reproduce the ground truth exactly.

use modal_panoptic::inference::{
    panoptic_track_sequence, ExtentSource, FuseConfig, NmsConfig, PipelineConfig, SweepInput, TrackerConfig,
};
use modal_panoptic::membership::NearestCenter;
use modal_panoptic::metrics::{compute_lstq, PqAccumulator};
use modal_panoptic::synth::{generate_sequence, predicted_extents, simulate_detector, synth_taxonomy, DetectorNoise, SceneConfig};
use modal_panoptic::targets::{trajectories_from_sequence, MaxOverTime};
use modal_panoptic::voxel::GridSpec;

use crate::Verdict;

const TOL: f64 = 1e-9;

pub fn run() -> Verdict {
    let tax = synth_taxonomy();
    let spec = GridSpec::default();
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for seed in 0..20u64 {
        let (seq, gt) = generate_sequence(&SceneConfig {
            seed,
            ..Default::default()
        })
        .expect("scene");
        let trajs = trajectories_from_sequence(&seq, &tax).expect("trajectories");
        let ext = predicted_extents(&trajs, &MaxOverTime);
        let maps = simulate_detector(&seq, &gt, &tax, &spec, &DetectorNoise::default(), &ext, None, seed).expect("detector");
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
        let gts: Vec<_> = seq.sweeps.iter().map(|s| s.ground_truth()).collect();
        let mut acc = PqAccumulator::new(&tax);
        for (g, p) in gts.iter().zip(&out) {
            acc.add(g, p).expect("pq");
        }
        let pq = acc.report();
        let lstq = compute_lstq(&gts, &out, &tax).expect("lstq");
        let mut scores = vec![pq.all.pq, lstq.s_assoc, lstq.lstq];
        scores.extend(pq.classes.iter().map(|c| c.pq));
        let dev = scores.iter().map(|s| (1.0 - s).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        if dev > TOL {
            bad.push(seed);
        }
    }
    Verdict::new(
        bad.is_empty(),
        format!("20 sequences, worst deviation of PQ, S_assoc, LSTQ from 1 is {worst:.1e}; failing seeds {bad:?}"),
    )
}
