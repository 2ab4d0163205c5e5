use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use modal_panoptic::io::{frame_name, DatasetLayout, LabelSource};
use modal_panoptic::membership::{roi_points, Detection, RoiMargin};
use modal_panoptic::targets::{render_bev_targets, sweep_instances, trajectories_from_sequence, velocity_target, BevTargets};
use modal_panoptic::voxel::BevMap;
use serde_json::json;

use crate::common::{cwm_stats_for, existing_layout, extent_strategy, load_config, par_map, write_text};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct TargetsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Extent strategy (`sw`, `max`, `cwm`, `dsb`); defaults to `strategy`.
    #[arg(long)]
    strategy: Option<String>,
    /// Class-mean extents to use instead of computing them from `--data`.
    #[arg(long)]
    cwm: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

const INSTANCE_HEADER: &str = "frame,instance,class,points,cx,cy,cz,sx,sy,sz,excluded,vx,vy,roi_points,members";

fn channel_names(things: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..things).map(|k| format!("heatmap{k}")).collect();
    names.extend(
        ["height", "vx", "vy", "offset_x", "offset_y", "extent_x", "extent_y", "extent_z", "valid"]
            .map(String::from),
    );
    names
}

/// Channel-major little-endian f32 planes, each ix-major.
fn bev_bytes(t: &BevTargets) -> Vec<u8> {
    let mut out = Vec::new();
    let mut plane = |m: &BevMap| {
        for c in 0..m.channels {
            for v in m.channel(c) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    };
    for m in [&t.heatmaps, &t.height, &t.velocity, &t.offset, &t.extent] {
        plane(m);
    }
    for v in &t.valid_mask {
        out.extend_from_slice(&(if *v { 1.0f32 } else { 0.0 }).to_le_bytes());
    }
    out
}

pub fn run(global: &GlobalArgs, args: TargetsArgs) -> Result<()> {
    let cfg = load_config(global)?;
    let (data, taxonomy, seqs) = existing_layout(&args.data)?;
    let sequences = par_map(global.jobs, &seqs, |_, s| Ok(data.read_sequence(s, LabelSource::GroundTruth)?))?;
    let stats = cwm_stats_for(args.cwm.as_deref(), &sequences, &taxonomy)?;
    let name = args.strategy.unwrap_or_else(|| cfg.strategy.clone());
    let strategy = extent_strategy(&cfg, &name, Some(stats.clone()))?;
    let out = DatasetLayout::new(&args.out);
    let [width, depth] = cfg.grid.bev_dims()?;
    let meta = json!({
        "strategy": name,
        "width": width,
        "depth": depth,
        "cell_size": cfg.grid.bev_cell_size(),
        "dtype": "f32le",
        "order": "channel, ix, iy",
        "channels": channel_names(taxonomy.thing_ids().len()),
    });
    write_text(&args.out.join("bev_layout.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    write_text(&args.out.join("cwm_stats.txt"), &stats.to_text())?;

    let jobs: Vec<(usize, &String)> = seqs.iter().enumerate().collect();
    par_map(global.jobs, &jobs, |_, (si, seq_name)| {
        let seq = &sequences[*si];
        let trajs = trajectories_from_sequence(seq, &taxonomy)?;
        let extents: Vec<_> = trajs.iter().map(|t| strategy.training_extents(t)).collect();
        let mut csv = String::from(INSTANCE_HEADER);
        csv.push('\n');
        for (k, sweep) in seq.sweeps.iter().enumerate() {
            let (mut kept, mut sizes, mut vels) = (Vec::new(), Vec::new(), Vec::new());
            for inst in sweep_instances(sweep, &taxonomy, k)? {
                let missing = || modal_panoptic::Error::Invariant(format!("no trajectory record for instance {} in sweep {k}", inst.instance_id));
                let ti = trajs.iter().position(|t| t.instance_id == inst.instance_id).ok_or_else(missing)?;
                let ri = trajs[ti].records.iter().position(|r| r.sweep_index == k).ok_or_else(missing)?;
                let te = extents[ti][ri];
                let v = velocity_target(&trajs[ti], k, seq.period);
                let det = Detection {
                    center: inst.center,
                    confidence: 1.0,
                    class_id: inst.class_id,
                    extent: inst.roi_extent(te.size),
                };
                let roi: Vec<usize> = roi_points(&det, &sweep.points, RoiMargin::NONE)
                    .into_iter()
                    .filter(|&i| sweep.sem_labels[i] == inst.class_id)
                    .collect();
                let members = roi.iter().filter(|&&i| sweep.inst_labels[i] == inst.instance_id).count();
                let c = inst.center;
                let s = te.size;
                writeln!(
                    csv,
                    "{k},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?},{:?},{},{members}",
                    inst.instance_id,
                    inst.class_id,
                    inst.point_count,
                    c[0],
                    c[1],
                    c[2],
                    s[0],
                    s[1],
                    s[2],
                    u8::from(te.excluded),
                    v[0],
                    v[1],
                    roi.len()
                )?;
                if !te.excluded {
                    kept.push(inst);
                    sizes.push(te.size);
                    vels.push(v);
                }
            }
            let t = render_bev_targets(&kept, &sizes, &vels, &cfg.grid, &taxonomy)?;
            let path = out.sequence_dir(seq_name).join("bev").join(frame_name(k) + ".bin");
            std::fs::create_dir_all(path.parent().expect("bev dir"))?;
            std::fs::write(&path, bev_bytes(&t))?;
        }
        write_text(&out.sequence_dir(seq_name).join("instances.csv"), &csv)
    })?;
    Ok(())
}
