use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use modal_panoptic::io::{DatasetLayout, RunConfig};
use modal_panoptic::membership::Detection;
use modal_panoptic::targets::{builtin_extent_strategies, class_wise_mean_extents, CwmStats, ExtentStrategy, StrategyParams};
use modal_panoptic::types::{SweepSequence, Taxonomy};
use modal_panoptic::Error;
use rayon::prelude::*;

use crate::GlobalArgs;

pub fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    Ok(RunConfig::load(global.config.as_deref())?)
}

/// Maps `f` over `items` on `jobs` threads; results keep the input order so
/// output never depends on scheduling.
pub fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingInput(path.to_path_buf()).into()),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

/// A dataset root that must already exist.
pub fn existing_layout(root: &Path) -> Result<(DatasetLayout, Taxonomy, Vec<String>)> {
    if !root.is_dir() {
        return Err(Error::MissingInput(root.to_path_buf()).into());
    }
    let layout = DatasetLayout::new(root);
    let taxonomy = layout.taxonomy()?;
    let seqs = layout.sequences()?;
    if seqs.is_empty() {
        return Err(Error::MissingInput(layout.sequences_dir()).into());
    }
    Ok((layout, taxonomy, seqs))
}

pub fn boxes_path(layout: &DatasetLayout, seq: &str) -> PathBuf {
    layout.sequence_dir(seq).join("boxes.json")
}

pub fn detections_path(layout: &DatasetLayout, seq: &str, frame: usize) -> PathBuf {
    layout
        .sequence_dir(seq)
        .join("detections")
        .join(modal_panoptic::io::frame_name(frame) + ".txt")
}

/// Copies `poses.txt` and `times.txt` so an output tree is self-contained.
pub fn copy_timing(from: &DatasetLayout, to: &DatasetLayout, seq: &str) -> Result<()> {
    for (src, dst) in [
        (from.poses_path(seq), to.poses_path(seq)),
        (from.times_path(seq), to.times_path(seq)),
    ] {
        write_text(&dst, &read_text(&src)?)?;
    }
    Ok(())
}

/// A detection as written by `infer` and rewritten by `track`. `id` is the
/// instance id its points carry in the matching label file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub id: u32,
    pub detection: Detection,
    pub velocity: [f64; 2],
}

const DETECTION_HEADER: &str = "# id class confidence cx cy cz rx ry rz vx vy";

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let mut text = String::from(DETECTION_HEADER);
    text.push('\n');
    for r in records {
        let d = &r.detection;
        let nums: Vec<String> = [d.confidence]
            .iter()
            .chain(&d.center)
            .chain(&d.extent)
            .chain(&r.velocity)
            .map(|v| format!("{v:?}"))
            .collect();
        text.push_str(&format!("{} {} {}\n", r.id, d.class_id, nums.join(" ")));
    }
    write_text(path, &text)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = format!("{}:{}", path.display(), n + 1);
        let bad = |m: String| Error::Parse {
            location: loc.clone(),
            message: m,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 11 {
            return Err(bad(format!("expected 11 fields, got {}", f.len())).into());
        }
        let id = f[0].parse::<u32>().map_err(|e| bad(e.to_string()))?;
        let class_id = f[1].parse::<u16>().map_err(|e| bad(e.to_string()))?;
        let v = f[2..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<f64>, _>>()?;
        out.push(DetectionRecord {
            id,
            detection: Detection {
                center: [v[1], v[2], v[3]],
                confidence: v[0],
                class_id,
                extent: [v[4], v[5], v[6]],
            },
            velocity: [v[7], v[8]],
        });
    }
    Ok(out)
}

pub fn cwm_stats_for(cwm: Option<&Path>, sequences: &[SweepSequence], taxonomy: &Taxonomy) -> Result<CwmStats> {
    if let Some(p) = cwm {
        return Ok(CwmStats::load(p)?);
    }
    let mut trajs = Vec::new();
    for s in sequences {
        trajs.extend(modal_panoptic::targets::trajectories_from_sequence(s, taxonomy)?);
    }
    Ok(class_wise_mean_extents(trajs.iter(), taxonomy))
}

pub fn extent_strategy(cfg: &RunConfig, name: &str, cwm: Option<CwmStats>) -> Result<Box<dyn ExtentStrategy>> {
    let params = StrategyParams {
        cwm_stats: cwm,
        cwm_small_ratio: cfg.cwm_small_ratio,
        dsb_min_points: Some(cfg.dsb_min_points),
    };
    Ok(builtin_extent_strategies().create(name, &params)?)
}
