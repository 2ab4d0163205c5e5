use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use modal_panoptic::inference::{fuse_panoptic, nms_detect, ExtentSource, FuseConfig};
use modal_panoptic::io::{write_labels, DatasetLayout, LabelSource};
use modal_panoptic::membership::{builtin_membership_functions, FeatureVariant, MembershipParams};
use modal_panoptic::nn::load_checkpoint;
use modal_panoptic::synth::{predicted_extents, simulate_detector, FeatureConfig, GroundTruth};
use modal_panoptic::targets::trajectories_from_sequence;

use crate::common::{
    boxes_path, copy_timing, cwm_stats_for, detections_path, existing_layout, extent_strategy, load_config, par_map,
    write_detections, DetectionRecord,
};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Dataset with ground-truth labels and `boxes.json`; the detector is
    /// simulated from them.
    #[arg(long)]
    data: PathBuf,
    /// Extent strategy the simulated size regressor was trained with.
    #[arg(long)]
    strategy: Option<String>,
    /// `nn` or `mlp`; defaults to `membership`.
    #[arg(long)]
    membership: Option<String>,
    /// Membership checkpoint; defaults to `membership.model`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    variant: Option<FeatureVariant>,
    #[arg(long)]
    cwm: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Writes `predictions/` (instance id = detection index + 1) and
/// `detections/` per sweep. Sequence `i` simulates with seed `seed + i`.
pub fn run(global: &GlobalArgs, args: InferArgs) -> Result<()> {
    let cfg = load_config(global)?;
    let (data, taxonomy, seqs) = existing_layout(&args.data)?;
    let sequences = par_map(global.jobs, &seqs, |_, s| Ok(data.read_sequence(s, LabelSource::GroundTruth)?))?;
    let stats = cwm_stats_for(args.cwm.as_deref(), &sequences, &taxonomy)?;
    let strategy = extent_strategy(&cfg, args.strategy.as_deref().unwrap_or(&cfg.strategy), Some(stats))?;
    let name = args.membership.unwrap_or_else(|| cfg.membership.clone());
    let model_path = args.model.or_else(|| cfg.model.clone());
    let params = MembershipParams {
        model: match (&*name, model_path) {
            ("mlp", Some(p)) => Some(load_checkpoint(&p)?),
            _ => None,
        },
        variant: Some(args.variant.unwrap_or(cfg.variant)),
    };
    let membership = builtin_membership_functions().create(&name, &params)?;
    let features = (name != "nn").then(FeatureConfig::default);
    let fuse = FuseConfig {
        margin: cfg.roi_margin,
        conflict: cfg.conflict,
    };
    let out = DatasetLayout::new(&args.out);
    let jobs: Vec<(usize, &String)> = seqs.iter().enumerate().collect();
    par_map(global.jobs, &jobs, |_, (si, seq_name)| {
        let seq = &sequences[*si];
        let gt = GroundTruth::load(&boxes_path(&data, seq_name))?;
        let trajs = trajectories_from_sequence(seq, &taxonomy)?;
        let extents = predicted_extents(&trajs, strategy.as_ref());
        let seed = cfg.seed.wrapping_add(*si as u64);
        let maps = simulate_detector(seq, &gt, &taxonomy, &cfg.grid, &cfg.noise, &extents, features.as_ref(), seed)?;
        for (k, (sweep, m)) in seq.sweeps.iter().zip(&maps).enumerate() {
            let peaks = nms_detect(m, &taxonomy, cfg.nms, &ExtentSource::default())?;
            let dets: Vec<_> = peaks.iter().map(|p| p.detection).collect();
            let fused = fuse_panoptic(&sweep.points, &m.sem, &dets, membership.as_ref(), &m.features, &taxonomy, &fuse)?;
            let l = &fused.labeling;
            write_labels(&out.labels_path(seq_name, k, LabelSource::Predictions), &l.sem, &l.inst)?;
            let records: Vec<DetectionRecord> = peaks
                .iter()
                .enumerate()
                .map(|(d, p)| DetectionRecord {
                    id: d as u32 + 1,
                    detection: p.detection,
                    velocity: [m.velocity.get(p.cell.0, p.cell.1, 0), m.velocity.get(p.cell.0, p.cell.1, 1)],
                })
                .collect();
            write_detections(&detections_path(&out, seq_name, k), &records)?;
        }
        copy_timing(&data, &out, seq_name)
    })?;
    out.write_taxonomy(&taxonomy)?;
    Ok(())
}
