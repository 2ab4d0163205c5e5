use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use modal_panoptic::io::LabelSource;
use modal_panoptic::losses::{total_loss, LossParts};
use modal_panoptic::membership::{build_training_pairs, jittered_detections, train_membership_stage2, FeatureVariant, Stage2Config, TrainingSweep};
use modal_panoptic::nn::save_checkpoint;
use modal_panoptic::synth::{hand_crafted_features, FeatureConfig};
use modal_panoptic::targets::{sweep_instances, trajectories_from_sequence};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{cwm_stats_for, existing_layout, extent_strategy, load_config, par_map, write_text};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Extent strategy that sizes the training RoIs; defaults to `strategy`.
    #[arg(long)]
    strategy: Option<String>,
    /// Feature variant; defaults to `membership.variant`.
    #[arg(long)]
    variant: Option<FeatureVariant>,
    #[arg(long)]
    cwm: Option<PathBuf>,
    /// Output directory for `model.ckpt` and `loss.csv`.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(global: &GlobalArgs, args: TrainArgs) -> Result<()> {
    let cfg = load_config(global)?;
    let (data, taxonomy, seqs) = existing_layout(&args.data)?;
    let sequences = par_map(global.jobs, &seqs, |_, s| Ok(data.read_sequence(s, LabelSource::GroundTruth)?))?;
    let stats = cwm_stats_for(args.cwm.as_deref(), &sequences, &taxonomy)?;
    let strategy = extent_strategy(&cfg, args.strategy.as_deref().unwrap_or(&cfg.strategy), Some(stats))?;
    let variant = args.variant.unwrap_or(cfg.variant);
    let fcfg = FeatureConfig::default();

    // Features and jittered detections per sweep; each sequence draws from
    // its own stream so the result does not depend on --jobs.
    let prepared = par_map(global.jobs, &sequences, |si, seq| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(si as u64);
        let trajs = trajectories_from_sequence(seq, &taxonomy)?;
        let mut out = Vec::with_capacity(seq.sweeps.len());
        for (k, sweep) in seq.sweeps.iter().enumerate() {
            let feats = hand_crafted_features(&sweep.points, &sweep.sem_labels, &taxonomy, &cfg.grid, &fcfg)?;
            let (mut insts, mut sizes) = (Vec::new(), Vec::new());
            for inst in sweep_instances(sweep, &taxonomy, k)? {
                let t = trajs.iter().find(|t| t.instance_id == inst.instance_id);
                let ext = t.and_then(|t| {
                    let ri = t.records.iter().position(|r| r.sweep_index == k)?;
                    Some(strategy.training_extents(t)[ri])
                });
                if let Some(e) = ext.filter(|e| !e.excluded) {
                    insts.push(inst);
                    sizes.push(e.size);
                }
            }
            let dets = jittered_detections(&insts, &sizes, cfg.train_jitter, &mut rng)?;
            out.push((feats, dets));
        }
        Ok(out)
    })?;
    let sweeps: Vec<TrainingSweep<'_>> = sequences
        .iter()
        .zip(&prepared)
        .flat_map(|(seq, prep)| {
            seq.sweeps.iter().zip(prep).map(|(s, (f, d))| TrainingSweep {
                points: &s.points,
                sem: &s.sem_labels,
                features: f,
                inst: &s.inst_labels,
                detections: d.clone(),
            })
        })
        .collect();
    let (x, y) = build_training_pairs(&sweeps, variant, &taxonomy)?;
    let stage2 = Stage2Config {
        hidden: cfg.hidden,
        depth: cfg.depth,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        optimizer: cfg.optimizer,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let (model, report) = train_membership_stage2(&x, &y, &stage2)?;
    if report.single_class {
        log::warn!("membership training saw a single label value");
    }
    std::fs::create_dir_all(&args.out).map_err(|e| modal_panoptic::Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    save_checkpoint(&model, &args.out.join("model.ckpt"))?;
    let mut csv = String::from("epoch,bce,weighted\n");
    for (e, l) in report.loss_trace.iter().enumerate() {
        let parts = LossParts {
            det: 0.0,
            seg: 0.0,
            mem: *l,
            track: None,
        };
        writeln!(csv, "{},{:?},{:?}", e + 1, l, total_loss(parts, cfg.loss)?)?;
    }
    write_text(&args.out.join("loss.csv"), &csv)?;
    log::info!("trained {} on {} pairs", variant.name(), y.len());
    Ok(())
}
