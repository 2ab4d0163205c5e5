use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use modal_panoptic::io::DatasetLayout;
use modal_panoptic::synth::{generate_sequence, synth_taxonomy, Layout, SceneConfig};

use crate::common::{boxes_path, load_config, par_map, write_text};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Overrides the config (and environment) seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    sweeps: usize,
    #[arg(long, default_value_t = 1)]
    sequences: usize,
    /// `scattered` or `ambiguous`; defaults to `scene.layout`.
    #[arg(long)]
    layout: Option<Layout>,
    #[arg(long)]
    out: PathBuf,
}

/// Sequence `i` is generated from seed `seed + i`.
pub fn run(global: &GlobalArgs, args: SynthArgs) -> Result<()> {
    let cfg = load_config(global)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let base = SceneConfig {
        sweep_count: args.sweeps,
        layout: args.layout.unwrap_or(cfg.layout),
        density: cfg.density,
        instance_count: cfg.instance_count,
        occlusion: cfg.occlusion,
        ..Default::default()
    };
    let layout = DatasetLayout::new(&args.out);
    let taxonomy = synth_taxonomy();
    let names: Vec<String> = (0..args.sequences).map(|i| format!("{i:02}")).collect();
    par_map(global.jobs, &names, |i, name| {
        let scene = SceneConfig {
            seed: seed.wrapping_add(i as u64),
            ..base.clone()
        };
        let (seq, gt) = generate_sequence(&scene)?;
        seq.validate(&taxonomy)?;
        layout.write_sequence(name, &seq)?;
        write_text(&boxes_path(&layout, name), &gt.to_json())
    })?;
    layout.write_taxonomy(&taxonomy)?;
    log::info!("wrote {} sequences to {}", names.len(), args.out.display());
    Ok(())
}
