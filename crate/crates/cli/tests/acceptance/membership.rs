//! Learned membership against the nearest-center baseline on rows of parked
//! cars, where modal centers of neighbours sit close together.

use std::time::Instant;

use modal_panoptic::inference::{fuse_panoptic, nms_detect, ExtentSource, FuseConfig, NmsConfig};
use modal_panoptic::membership::{
    build_training_pairs, in_roi, jittered_detections, train_membership_stage2, Detection, FeatureVariant,
    MembershipFunction, MlpMembership, NearestCenter, Stage2Config, TrainingSweep,
};
use modal_panoptic::metrics::{match_detections, membership_accuracy, GtCenter};
use modal_panoptic::synth::{
    generate_sequence, hand_crafted_features, predicted_extents, simulate_detector, synth_taxonomy, DetectorNoise,
    FeatureConfig, GroundTruth, Layout, SceneConfig,
};
use modal_panoptic::targets::{sweep_instances, trajectories_from_sequence, InstanceTrajectory, MaxOverTime, Vec3};
use modal_panoptic::types::SweepSequence;
use modal_panoptic::voxel::GridSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Verdict;

const TRAIN_SEEDS: std::ops::Range<u64> = 1000..1030;
const TEST_SEEDS: std::ops::Range<u64> = 2000..2010;
const JITTER: f64 = 0.1;
const TRAIN_BUDGET_SECS: f64 = 600.0;

type Scene = (SweepSequence, GroundTruth, Vec<InstanceTrajectory>);

fn scene(seed: u64) -> Scene {
    let mut classes = SceneConfig::default().classes;
    classes.truncate(1);
    let (seq, gt) = generate_sequence(&SceneConfig {
        seed,
        classes,
        layout: Layout::Ambiguous,
        instance_count: [2, 3],
        placement_range: [6.0, 30.0],
        density: 60.0,
        ..Default::default()
    })
    .expect("scene");
    let trajs = trajectories_from_sequence(&seq, &synth_taxonomy()).expect("trajectories");
    (seq, gt, trajs)
}

fn train(train_set: &[Scene], variant: FeatureVariant, fcfg: &FeatureConfig, spec: &GridSpec) -> MlpMembership {
    let tax = synth_taxonomy();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut prepared = Vec::new();
    for (seq, _, trajs) in train_set {
        for (k, s) in seq.sweeps.iter().enumerate() {
            let f = hand_crafted_features(&s.points, &s.sem_labels, &tax, spec, fcfg).expect("features");
            let insts = sweep_instances(s, &tax, k).expect("instances");
            let sizes: Vec<Vec3> = insts
                .iter()
                .map(|i| {
                    trajs
                        .iter()
                        .find(|t| t.instance_id == i.instance_id)
                        .expect("trajectory")
                        .aggregated_extent
                })
                .collect();
            let dets = jittered_detections(&insts, &sizes, JITTER, &mut rng).expect("detections");
            prepared.push((s, f, dets));
        }
    }
    let sweeps: Vec<TrainingSweep> = prepared
        .iter()
        .map(|(s, f, dets)| TrainingSweep {
            points: &s.points,
            sem: &s.sem_labels,
            features: f,
            inst: &s.inst_labels,
            detections: dets.clone(),
        })
        .collect();
    let (x, y) = build_training_pairs(&sweeps, variant, &tax).expect("pairs");
    let (model, _) = train_membership_stage2(&x, &y, &Stage2Config::default()).expect("training");
    MlpMembership { model, variant }
}

pub fn run() -> Verdict {
    let spec = GridSpec::default();
    let tax = synth_taxonomy();
    let fcfg = FeatureConfig::default();
    let train_set: Vec<Scene> = TRAIN_SEEDS.map(scene).collect();
    let test_set: Vec<Scene> = TEST_SEEDS.map(scene).collect();

    let t0 = Instant::now();
    let geometric = train(&train_set, FeatureVariant::Geometric, &fcfg, &spec);
    let full = train(&train_set, FeatureVariant::Full, &fcfg, &spec);
    let train_secs = t0.elapsed().as_secs_f64();

    let noise = DetectorNoise {
        center_jitter: JITTER,
        confidence_noise: 0.1,
        ..Default::default()
    };
    let fuse = FuseConfig::default();
    let functions: [&dyn MembershipFunction; 3] = [&NearestCenter, &geometric, &full];
    let mut tally = [(0u64, 0u64); 3];
    for (i, (seq, gt, trajs)) in test_set.iter().enumerate() {
        let ext = predicted_extents(trajs, &MaxOverTime);
        let maps = simulate_detector(seq, gt, &tax, &spec, &noise, &ext, Some(&fcfg), 77 + i as u64).expect("detector");
        for (k, (s, m)) in seq.sweeps.iter().zip(&maps).enumerate() {
            let peaks = nms_detect(m, &tax, NmsConfig::default(), &ExtentSource::default()).expect("nms");
            let dets: Vec<Detection> = peaks.iter().map(|p| p.detection).collect();
            let gtc: Vec<GtCenter> = sweep_instances(s, &tax, k)
                .expect("instances")
                .iter()
                .map(|i| GtCenter {
                    instance_id: i.instance_id,
                    class_id: i.class_id,
                    center: i.center,
                })
                .collect();
            let d2g = match_detections(&dets, &gtc);
            let evaluated: Vec<bool> = s
                .points
                .iter()
                .enumerate()
                .map(|(j, p)| dets.iter().any(|d| d.class_id == m.sem[j] && in_roi(p.xyz(), d, fuse.margin)))
                .collect();
            for (f, t) in functions.iter().zip(&mut tally) {
                let out = fuse_panoptic(&s.points, &m.sem, &dets, *f, &m.features, &tax, &fuse).expect("fusion");
                let (c, n) = membership_accuracy(&out.assigned, &s.inst_labels, &evaluated, &d2g).expect("accuracy");
                t.0 += c;
                t.1 += n;
            }
        }
    }
    let acc: Vec<f64> = tally.iter().map(|(c, n)| *c as f64 / *n as f64).collect();
    let pass = acc[2] >= acc[0] + 0.05 && acc[2] >= acc[1] && train_secs < TRAIN_BUDGET_SECS;
    Verdict::new(
        pass,
        format!(
            "accuracy nn {:.4} geometric {:.4} full {:.4} over {} points; training {train_secs:.0}s of {TRAIN_BUDGET_SECS:.0}s",
            acc[0], acc[1], acc[2], tally[0].1
        ),
    )
}
