use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use modal_panoptic::io::{DatasetLayout, LabelSource};
use modal_panoptic::membership::in_roi;
use modal_panoptic::metrics::{match_detections, membership_accuracy, GtCenter, LstqAccumulator, MiouAccumulator, PqAccumulator};
use modal_panoptic::targets::sweep_instances;
use modal_panoptic::types::{PanopticLabeling, Pose, Taxonomy};
use modal_panoptic::Error;

use crate::common::{detections_path, existing_layout, load_config, par_map, read_detections, write_text};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset with ground-truth labels.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction tree; reads `predictions/` when present, else `labels/`.
    #[arg(long)]
    pred: PathBuf,
    /// Directory for pq.csv, lstq.csv, miou.csv and membership.csv.
    #[arg(long)]
    out: PathBuf,
}

struct SequenceEval {
    gt: Vec<PanopticLabeling>,
    pred: Vec<PanopticLabeling>,
    /// (correct, evaluated) points when detections were written.
    membership: Option<(u64, u64)>,
}

fn labelings(layout: &DatasetLayout, seq: &str, source: LabelSource) -> Result<Vec<PanopticLabeling>> {
    layout
        .read_label_frames(seq, source)?
        .into_iter()
        .map(|(s, i)| Ok(PanopticLabeling::new(s, i)?))
        .collect()
}

/// Membership accuracy of one sequence: a point counts when it lies in the
/// RoI of a detection of its predicted class.
fn sequence_membership(
    gt_layout: &DatasetLayout,
    pred_layout: &DatasetLayout,
    seq: &str,
    pred: &[PanopticLabeling],
    taxonomy: &Taxonomy,
    margin: modal_panoptic::membership::RoiMargin,
) -> Result<(u64, u64)> {
    let (mut correct, mut total) = (0, 0);
    for (k, p) in pred.iter().enumerate() {
        let sweep = gt_layout.read_sweep(seq, k, LabelSource::GroundTruth, Pose::identity(), 0.0)?;
        let records = read_detections(&detections_path(pred_layout, seq, k))?;
        let by_id: BTreeMap<u32, usize> = records.iter().enumerate().map(|(d, r)| (r.id, d)).collect();
        let assigned = p
            .inst
            .iter()
            .map(|&i| match i {
                0 => Ok(None),
                i => by_id
                    .get(&i)
                    .map(|d| Some(*d))
                    .ok_or_else(|| Error::Invariant(format!("{seq}/{k}: instance {i} has no detection"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dets: Vec<_> = records.iter().map(|r| r.detection).collect();
        let centers: Vec<GtCenter> = sweep_instances(&sweep, taxonomy, k)?
            .into_iter()
            .map(|m| GtCenter {
                instance_id: m.instance_id,
                class_id: m.class_id,
                center: m.center,
            })
            .collect();
        let det_to_gt = match_detections(&dets, &centers);
        let evaluated: Vec<bool> = sweep
            .points
            .iter()
            .zip(&p.sem)
            .map(|(pt, s)| dets.iter().any(|d| d.class_id == *s && in_roi(pt.xyz(), d, margin)))
            .collect();
        let (c, t) = membership_accuracy(&assigned, &sweep.inst_labels, &evaluated, &det_to_gt)?;
        correct += c;
        total += t;
    }
    Ok((correct, total))
}

pub fn run(global: &GlobalArgs, args: EvalArgs) -> Result<()> {
    let cfg = load_config(global)?;
    let (gt_layout, taxonomy, gt_seqs) = existing_layout(&args.gt)?;
    if !args.pred.is_dir() {
        return Err(Error::MissingInput(args.pred.clone()).into());
    }
    let pred_layout = DatasetLayout::new(&args.pred);
    let seqs = pred_layout.sequences()?;
    if seqs.is_empty() {
        return Err(Error::MissingInput(pred_layout.sequences_dir()).into());
    }
    for s in &seqs {
        if !gt_seqs.contains(s) {
            return Err(Error::MissingInput(gt_layout.sequence_dir(s)).into());
        }
    }
    let evals = par_map(global.jobs, &seqs, |_, seq| {
        let source = if pred_layout.sequence_dir(seq).join("predictions").is_dir() {
            LabelSource::Predictions
        } else {
            LabelSource::GroundTruth
        };
        let gt = labelings(&gt_layout, seq, LabelSource::GroundTruth)?;
        let pred = labelings(&pred_layout, seq, source)?;
        if gt.len() != pred.len() {
            return Err(Error::LengthMismatch {
                what: "ground-truth vs predicted sweeps",
                left: gt.len(),
                right: pred.len(),
            }
            .into());
        }
        let membership = if pred_layout.sequence_dir(seq).join("detections").is_dir() {
            Some(sequence_membership(&gt_layout, &pred_layout, seq, &pred, &taxonomy, cfg.roi_margin)?)
        } else {
            None
        };
        Ok(SequenceEval { gt, pred, membership })
    })?;

    let mut pq = PqAccumulator::new(&taxonomy);
    let mut lstq = LstqAccumulator::default();
    let mut miou = MiouAccumulator::default();
    let mut mem: Option<(u64, u64)> = None;
    for e in &evals {
        for (g, p) in e.gt.iter().zip(&e.pred) {
            pq.add(g, p)?;
            miou.add(&g.sem, &p.sem, &taxonomy)?;
        }
        lstq.add_sequence(&e.gt, &e.pred, &taxonomy)?;
        if let Some((c, t)) = e.membership {
            let m = mem.get_or_insert((0, 0));
            m.0 += c;
            m.1 += t;
        }
    }
    let pq = pq.report();
    let lstq = lstq.report();
    let miou = miou.report();
    write_text(&args.out.join("pq.csv"), &pq.to_csv(&taxonomy))?;
    write_text(
        &args.out.join("lstq.csv"),
        &format!("s_assoc,s_cls,lstq\n{:.6},{:.6},{:.6}\n", lstq.s_assoc, lstq.s_cls, lstq.lstq),
    )?;
    let mut m = String::from("class,iou\n");
    for (c, v) in &miou.per_class {
        writeln!(m, "{},{v:.6}", taxonomy.name(*c))?;
    }
    writeln!(m, "mean,{:.6}", miou.mean)?;
    write_text(&args.out.join("miou.csv"), &m)?;
    if let Some((c, t)) = mem {
        let acc = if t == 0 { 0.0 } else { c as f64 / t as f64 };
        write_text(&args.out.join("membership.csv"), &format!("correct,total,accuracy\n{c},{t},{acc:.6}\n"))?;
    }
    println!(
        "PQ {:.4}  PQ† {:.4}  LSTQ {:.4}  mIoU {:.4}",
        pq.all.pq, pq.pq_dagger, lstq.lstq, miou.mean
    );
    Ok(())
}
