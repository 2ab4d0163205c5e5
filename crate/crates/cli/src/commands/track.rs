use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use modal_panoptic::inference::{Tracker, TrackerConfig};
use modal_panoptic::io::{read_labels, read_times, write_labels, DatasetLayout, LabelSource, DEFAULT_PERIOD};
use modal_panoptic::Error;

use crate::common::{copy_timing, detections_path, existing_layout, load_config, par_map, read_detections, write_detections};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Output directory of `infer`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Relabels every prediction with the id of the track its detection joined.
pub fn run(global: &GlobalArgs, args: TrackArgs) -> Result<()> {
    let cfg = load_config(global)?;
    let (pred, taxonomy, seqs) = existing_layout(&args.pred)?;
    let out = DatasetLayout::new(&args.out);
    let tracker_cfg = TrackerConfig {
        gate: BTreeMap::new(),
        default_gate: cfg.track_gate,
        max_age: cfg.track_max_age,
    };
    par_map(global.jobs, &seqs, |_, seq| {
        let frames = pred.label_frames(seq, LabelSource::Predictions)?;
        let times = read_times(&pred.times_path(seq))?;
        let period = if times.len() > 1 {
            (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
        } else {
            DEFAULT_PERIOD
        };
        let mut tracker = Tracker::new(tracker_cfg.clone())?;
        for k in 0..frames {
            let mut records = read_detections(&detections_path(&pred, seq, k))?;
            let dets: Vec<_> = records.iter().map(|r| r.detection).collect();
            let vels: Vec<_> = records.iter().map(|r| r.velocity).collect();
            let ids = tracker.step(&dets, &vels, period)?;
            let remap: BTreeMap<u32, u32> = records.iter().zip(&ids).map(|(r, t)| (r.id, *t)).collect();
            let (sem, mut inst) = read_labels(&pred.labels_path(seq, k, LabelSource::Predictions))?;
            for v in inst.iter_mut().filter(|v| **v != 0) {
                *v = *remap
                    .get(v)
                    .ok_or_else(|| Error::Invariant(format!("{seq}/{k}: instance {v} has no detection")))?;
            }
            write_labels(&out.labels_path(seq, k, LabelSource::Predictions), &sem, &inst)?;
            for (r, t) in records.iter_mut().zip(&ids) {
                r.id = *t;
            }
            write_detections(&detections_path(&out, seq, k), &records)?;
        }
        copy_timing(&pred, &out, seq)
    })?;
    out.write_taxonomy(&taxonomy)?;
    Ok(())
}
