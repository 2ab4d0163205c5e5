use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inference::{ConflictRule, NmsConfig};
use crate::losses::LossWeights;
use crate::membership::{FeatureVariant, RoiMargin};
use crate::nn::OptimizerKind;
use crate::synth::{DetectorNoise, Layout};
use crate::voxel::GridSpec;

/// Environment variable that replaces `seed` in every run config.
pub const SEED_ENV: &str = "MODAL_PANOPTIC_SEED";

/// Everything a pipeline run is parameterised by, read from a flat
/// `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub strategy: String,
    pub cwm_small_ratio: f64,
    pub dsb_min_points: usize,
    pub nms: NmsConfig,
    pub membership: String,
    pub model: Option<PathBuf>,
    pub variant: FeatureVariant,
    pub roi_margin: RoiMargin,
    pub conflict: ConflictRule,
    /// Tracking gate for classes without a class-mean extent, meters.
    pub track_gate: f64,
    pub track_max_age: usize,
    pub loss: LossWeights,
    pub noise: DetectorNoise,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub hidden: usize,
    pub depth: usize,
    pub batch_size: usize,
    /// Planar σ of the detection centers membership training sees.
    pub train_jitter: f64,
    pub layout: Layout,
    pub density: f64,
    pub instance_count: [usize; 2],
    pub occlusion: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: GridSpec::default(),
            strategy: "max".into(),
            cwm_small_ratio: crate::targets::DEFAULT_CWM_SMALL_RATIO,
            dsb_min_points: 40,
            nms: NmsConfig::default(),
            membership: "nn".into(),
            model: None,
            variant: FeatureVariant::Full,
            roi_margin: RoiMargin::default(),
            conflict: ConflictRule::default(),
            track_gate: 2.0,
            track_max_age: 2,
            loss: LossWeights::default(),
            noise: DetectorNoise {
                center_jitter: 0.1,
                confidence_noise: 0.05,
                ..Default::default()
            },
            epochs: 20,
            learning_rate: 5e-4,
            optimizer: OptimizerKind::Sgd,
            hidden: 64,
            depth: 4,
            batch_size: 32,
            train_jitter: 0.1,
            layout: Layout::Scattered,
            density: 40.0,
            instance_count: [4, 8],
            occlusion: true,
        }
    }
}

fn num<T: std::str::FromStr>(v: &str, loc: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::parse(loc, format!("`{v}`: {e}")))
}

fn list<const N: usize, T: std::str::FromStr + Copy + Default>(v: &str, loc: &str) -> Result<[T; N]>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::parse(loc, format!("expected {N} comma-separated values, got `{v}`")));
    }
    let mut out = [T::default(); N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = num(p, loc)?;
    }
    Ok(out)
}

/// Splits `key = value` lines; `#` starts a comment. Duplicate keys are an
/// error so a file never silently overrides itself.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let loc = format!("{origin}:{}", n + 1);
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&loc, format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::parse(&loc, "empty key"));
        }
        if let Some(prev) = seen.insert(k.clone(), loc.clone()) {
            return Err(Error::parse(&loc, format!("`{k}` already set at {prev}")));
        }
        out.push((k, v, loc));
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (k, v, loc) in parse_pairs(text, origin)? {
            c.set(&k, &v, &loc)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str, loc: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(v, loc)?,
            "grid.voxel_size" => self.grid.voxel_size = list(v, loc)?,
            "grid.range" => self.grid.range = num(v, loc)?,
            "grid.z_min" => self.grid.z_min = num(v, loc)?,
            "grid.z_max" => self.grid.z_max = num(v, loc)?,
            "grid.bev_downsample" => self.grid.bev_downsample = num(v, loc)?,
            "strategy" => self.strategy = v.to_string(),
            "cwm.small_ratio" => self.cwm_small_ratio = num(v, loc)?,
            "dsb.min_points" => self.dsb_min_points = num(v, loc)?,
            "nms.threshold" => self.nms.threshold = num(v, loc)?,
            "nms.max_dets" => self.nms.max_dets = num(v, loc)?,
            "membership" => self.membership = v.to_string(),
            "membership.model" => self.model = Some(PathBuf::from(v)),
            "membership.variant" => self.variant = v.parse()?,
            "roi.margin_ratio" => self.roi_margin.ratio = num(v, loc)?,
            "roi.margin_floor" => self.roi_margin.floor = num(v, loc)?,
            "fusion.conflict" => self.conflict = v.parse()?,
            "tracking.gate" => self.track_gate = num(v, loc)?,
            "tracking.max_age" => self.track_max_age = num(v, loc)?,
            "loss.det" => self.loss.det = num(v, loc)?,
            "loss.seg" => self.loss.seg = num(v, loc)?,
            "loss.mem" => self.loss.mem = num(v, loc)?,
            "loss.track" => self.loss.track = num(v, loc)?,
            "noise.center_jitter" => self.noise.center_jitter = num(v, loc)?,
            "noise.confidence" => self.noise.confidence_noise = num(v, loc)?,
            "noise.drop" => self.noise.drop_prob = num(v, loc)?,
            "noise.sem_flip" => self.noise.sem_flip_prob = num(v, loc)?,
            "noise.velocity" => self.noise.velocity_noise = num(v, loc)?,
            "train.epochs" => self.epochs = num(v, loc)?,
            "train.learning_rate" => self.learning_rate = num(v, loc)?,
            "train.optimizer" => self.optimizer = v.parse()?,
            "train.hidden" => self.hidden = num(v, loc)?,
            "train.depth" => self.depth = num(v, loc)?,
            "train.batch_size" => self.batch_size = num(v, loc)?,
            "train.jitter" => self.train_jitter = num(v, loc)?,
            "scene.layout" => self.layout = v.parse()?,
            "scene.density" => self.density = num(v, loc)?,
            "scene.instance_count" => self.instance_count = list(v, loc)?,
            "scene.occlusion" => self.occlusion = num(v, loc)?,
            other => return Err(Error::parse(loc, format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.noise.validate()?;
        let positive = [
            ("train.learning_rate", self.learning_rate),
            ("tracking.gate", self.track_gate),
            ("cwm.small_ratio", self.cwm_small_ratio),
            ("scene.density", self.density),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.nms.threshold) {
            return Err(Error::Config(format!("nms.threshold = {} is outside [0, 1]", self.nms.threshold)));
        }
        if self.roi_margin.ratio < 0.0 || self.roi_margin.floor < 0.0 || self.train_jitter < 0.0 {
            return Err(Error::Config("margins and jitter must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 || self.depth < 2 {
            return Err(Error::Config("training needs epochs, batch size and hidden width ≥ 1 and depth ≥ 2".into()));
        }
        if self.instance_count[0] > self.instance_count[1] {
            return Err(Error::Config("scene.instance_count must be `lo, hi` with lo ≤ hi".into()));
        }
        Ok(())
    }

    /// Reads a config file (or the defaults when `path` is None) and applies
    /// the seed override from the environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text, &p.display().to_string())?
            }
            None => Self::default(),
        };
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = num(v.trim(), SEED_ENV)?;
        }
        Ok(())
    }

    /// Every key with its current value, in the same format `parse` reads.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let [vx, vy, vz] = g.voxel_size;
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("grid.voxel_size = {vx:?}, {vy:?}, {vz:?}"),
            format!("grid.range = {:?}", g.range),
            format!("grid.z_min = {:?}", g.z_min),
            format!("grid.z_max = {:?}", g.z_max),
            format!("grid.bev_downsample = {}", g.bev_downsample),
            format!("strategy = {}", self.strategy),
            format!("cwm.small_ratio = {:?}", self.cwm_small_ratio),
            format!("dsb.min_points = {}", self.dsb_min_points),
            format!("nms.threshold = {:?}", self.nms.threshold),
            format!("nms.max_dets = {}", self.nms.max_dets),
            format!("membership = {}", self.membership),
        ];
        if let Some(m) = &self.model {
            lines.push(format!("membership.model = {}", m.display()));
        }
        lines.extend([
            format!("membership.variant = {}", self.variant.name()),
            format!("roi.margin_ratio = {:?}", self.roi_margin.ratio),
            format!("roi.margin_floor = {:?}", self.roi_margin.floor),
            format!("fusion.conflict = {}", self.conflict.name()),
            format!("tracking.gate = {:?}", self.track_gate),
            format!("tracking.max_age = {}", self.track_max_age),
            format!("loss.det = {:?}", self.loss.det),
            format!("loss.seg = {:?}", self.loss.seg),
            format!("loss.mem = {:?}", self.loss.mem),
            format!("loss.track = {:?}", self.loss.track),
            format!("noise.center_jitter = {:?}", self.noise.center_jitter),
            format!("noise.confidence = {:?}", self.noise.confidence_noise),
            format!("noise.drop = {:?}", self.noise.drop_prob),
            format!("noise.sem_flip = {:?}", self.noise.sem_flip_prob),
            format!("noise.velocity = {:?}", self.noise.velocity_noise),
            format!("train.epochs = {}", self.epochs),
            format!("train.learning_rate = {:?}", self.learning_rate),
            format!("train.optimizer = {}", self.optimizer.name()),
            format!("train.hidden = {}", self.hidden),
            format!("train.depth = {}", self.depth),
            format!("train.batch_size = {}", self.batch_size),
            format!("train.jitter = {:?}", self.train_jitter),
            format!("scene.layout = {}", self.layout.name()),
            format!("scene.density = {:?}", self.density),
            format!("scene.instance_count = {}, {}", self.instance_count[0], self.instance_count[1]),
            format!("scene.occlusion = {}", self.occlusion),
        ]);
        lines.join("\n") + "\n"
    }
}
