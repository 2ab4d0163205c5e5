//! Synthetic sweep sequences with known box geometry, plus a simulated
//! detector that stands in for a trained backbone.
//!
//! The sensor sits at the origin of every sweep; boxes are axis-aligned and
//! move at constant velocity. Only box faces turned towards the sensor are
//! sampled when occlusion is on, with a point density falling off with the
//! squared range and the cosine of the incidence angle.

mod detector;
mod features;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

pub use detector::{predicted_extents, simulate_detector, DetectorNoise, PredictedExtents};
pub use features::{hand_crafted_features, FeatureConfig, POINT_FEATURE_DIMS};

use crate::error::{Error, Result};
use crate::targets::Vec3;
use crate::types::{Point, PointCloudSweep, Pose, SweepSequence, Taxonomy, NO_INSTANCE};

pub const CAR: u16 = 1;
pub const PEDESTRIAN: u16 = 2;
pub const ROAD: u16 = 3;
pub const TERRAIN: u16 = 4;

pub const SYNTH_TAXONOMY: &str = "\
min_instance_points=10
1\tcar\tthing
2\tpedestrian\tthing
3\troad\tstuff
4\tterrain\tstuff
";

pub fn synth_taxonomy() -> Taxonomy {
    Taxonomy::parse(SYNTH_TAXONOMY, "synthetic taxonomy").expect("built-in taxonomy parses")
}

/// Box size and speed distribution of one thing class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub class_id: u16,
    /// Full box dimensions (length, width, height), meters.
    pub size_mean: Vec3,
    pub size_std: Vec3,
    /// Speed range, m/s.
    pub speed: [f64; 2],
    /// Gap range between neighbours inside an ambiguous group, meters.
    pub adjacent_gap: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Independent, well separated objects.
    Scattered,
    /// Rows of parked cars and walking groups of pedestrians with small gaps.
    Ambiguous,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Scattered => "scattered",
            Layout::Ambiguous => "ambiguous",
        }
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scattered" => Ok(Layout::Scattered),
            "ambiguous" => Ok(Layout::Ambiguous),
            other => Err(Error::Config(format!("unknown layout `{other}` (scattered, ambiguous)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub sweep_count: usize,
    /// Seconds between sweeps.
    pub period: f64,
    pub classes: Vec<ClassModel>,
    /// Inclusive range of object counts (scattered) or group counts
    /// (ambiguous).
    pub instance_count: [usize; 2],
    /// Points per m² on a surface facing the sensor at `reference_range`.
    pub density: f64,
    pub reference_range: f64,
    pub occlusion: bool,
    /// Radius of the sampled ground disc.
    pub ground_extent: f64,
    /// Ground with |y| below this is road, terrain beyond.
    pub road_half_width: f64,
    /// Sensor height above the ground plane.
    pub sensor_height: f64,
    /// Planar distance band the box centers stay in for the whole sequence.
    pub placement_range: [f64; 2],
    /// Minimum planar gap between boxes of different groups.
    pub separation: f64,
    pub layout: Layout,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sweep_count: 10,
            period: 0.1,
            classes: vec![
                ClassModel {
                    class_id: CAR,
                    size_mean: [4.5, 1.9, 1.6],
                    size_std: [0.3, 0.1, 0.1],
                    speed: [0.0, 12.0],
                    adjacent_gap: [0.4, 1.0],
                },
                ClassModel {
                    class_id: PEDESTRIAN,
                    size_mean: [0.6, 0.6, 1.75],
                    size_std: [0.08, 0.08, 0.1],
                    speed: [0.0, 1.5],
                    adjacent_gap: [0.4, 1.0],
                },
            ],
            instance_count: [4, 8],
            density: 40.0,
            reference_range: 10.0,
            occlusion: true,
            ground_extent: 40.0,
            road_half_width: 6.0,
            sensor_height: 1.73,
            placement_range: [4.0, 30.0],
            separation: 2.5,
            layout: Layout::Scattered,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.sweep_count == 0 {
            return fail("sweep_count must be positive");
        }
        if !(self.period > 0.0) {
            return fail("period must be positive");
        }
        if !(self.density > 0.0) || !(self.reference_range > 0.0) {
            return fail("point density and reference range must be positive");
        }
        if self.classes.is_empty() || self.instance_count[0] > self.instance_count[1] {
            return fail("need at least one class and a non-empty instance count range");
        }
        for c in &self.classes {
            if c.size_mean.iter().any(|v| !(*v > 0.0)) || c.size_std.iter().any(|v| !(*v >= 0.0)) {
                return fail("box sizes must be positive with non-negative spread");
            }
            if !(0.0 <= c.speed[0] && c.speed[0] <= c.speed[1]) {
                return fail("speed range must be ordered and non-negative");
            }
        }
        let [lo, hi] = self.placement_range;
        if !(0.0 <= lo && lo < hi) || !(self.ground_extent > 0.0) || !(self.sensor_height > 0.0) {
            return fail("placement range, ground extent and sensor height must be positive");
        }
        let gaps_ok = self.classes.iter().all(|m| 0.0 < m.adjacent_gap[0] && m.adjacent_gap[0] <= m.adjacent_gap[1]);
        if !gaps_ok || self.separation < 0.0 {
            return fail("gaps must be positive and ordered");
        }
        Ok(())
    }
}

/// The generator's knowledge of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueBox {
    pub instance_id: u32,
    pub class_id: u16,
    pub half_extent: Vec3,
    /// Box middle at t = 0.
    pub start_center: Vec3,
    pub velocity: [f64; 2],
}

impl TrueBox {
    pub fn center_at(&self, t: f64) -> Vec3 {
        [
            self.start_center[0] + self.velocity[0] * t,
            self.start_center[1] + self.velocity[1] * t,
            self.start_center[2],
        ]
    }

    fn planar_gap(&self, other: &TrueBox, t: f64) -> f64 {
        let (a, b) = (self.center_at(t), other.center_at(t));
        let gx = (a[0] - b[0]).abs() - self.half_extent[0] - other.half_extent[0];
        let gy = (a[1] - b[1]).abs() - self.half_extent[1] - other.half_extent[1];
        gx.max(gy)
    }
}

/// Ground-truth boxes of one generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub period: f64,
    pub sweep_count: usize,
    pub boxes: Vec<TrueBox>,
}

impl GroundTruth {
    pub fn get(&self, instance_id: u32) -> Option<&TrueBox> {
        self.boxes.iter().find(|b| b.instance_id == instance_id)
    }

    /// Number of vertical faces of the box turned towards the sensor.
    pub fn visible_lateral_faces(&self, instance_id: u32, sweep: usize) -> usize {
        self.get(instance_id).map_or(0, |b| {
            let c = b.center_at(sweep as f64 * self.period);
            box_faces(c, b.half_extent)[..4]
                .iter()
                .filter(|f| f.visible_from([0.0; 3]))
                .count()
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

/// One rectangular box face: middle, outward normal and the two half-axis
/// vectors spanning it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub center: Vec3,
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl Face {
    pub fn area(&self) -> f64 {
        4.0 * norm(self.u) * norm(self.v)
    }

    pub fn visible_from(&self, sensor: Vec3) -> bool {
        dot(self.normal, sub(sensor, self.center)) > 0.0
    }
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// The four vertical faces (+x, −x, +y, −y) followed by the top face. The
/// bottom rests on the ground and is never sampled.
pub fn box_faces(center: Vec3, half: Vec3) -> [Face; 5] {
    let [hx, hy, hz] = half;
    let at = |d: Vec3| [center[0] + d[0], center[1] + d[1], center[2] + d[2]];
    [
        Face { center: at([hx, 0.0, 0.0]), normal: [1.0, 0.0, 0.0], u: [0.0, hy, 0.0], v: [0.0, 0.0, hz] },
        Face { center: at([-hx, 0.0, 0.0]), normal: [-1.0, 0.0, 0.0], u: [0.0, hy, 0.0], v: [0.0, 0.0, hz] },
        Face { center: at([0.0, hy, 0.0]), normal: [0.0, 1.0, 0.0], u: [hx, 0.0, 0.0], v: [0.0, 0.0, hz] },
        Face { center: at([0.0, -hy, 0.0]), normal: [0.0, -1.0, 0.0], u: [hx, 0.0, 0.0], v: [0.0, 0.0, hz] },
        Face { center: at([0.0, 0.0, hz]), normal: [0.0, 0.0, 1.0], u: [hx, 0.0, 0.0], v: [0.0, hy, 0.0] },
    ]
}

/// Surface density model shared by boxes and ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density {
    pub per_m2: f64,
    pub reference_range: f64,
}

impl Density {
    fn at(&self, range: f64, cos_incidence: f64) -> f64 {
        self.per_m2 * (self.reference_range / range).powi(2) * cos_incidence
    }
}

/// Samples the surface of a box. With `occlusion` only faces visible from
/// `sensor` are sampled; otherwise every face is, as if it faced the sensor.
/// Point counts are Poisson with the density evaluated at each face middle.
pub fn sample_box_surface<R: Rng>(
    center: Vec3,
    half: Vec3,
    sensor: Vec3,
    density: Density,
    occlusion: bool,
    rng: &mut R,
) -> Vec<Vec3> {
    let mut out = Vec::new();
    for face in box_faces(center, half) {
        let to_sensor = sub(sensor, face.center);
        let range = norm(to_sensor).max(1e-3);
        let cos = dot(face.normal, to_sensor) / range;
        if occlusion && cos <= 0.0 {
            continue;
        }
        let lambda = density.at(range, cos.abs()) * face.area();
        let n = poisson(lambda, rng);
        for _ in 0..n {
            let a = rng.random_range(-1.0..=1.0);
            let b = rng.random_range(-1.0..=1.0);
            out.push(std::array::from_fn(|k| face.center[k] + a * face.u[k] + b * face.v[k]));
        }
    }
    out
}

fn poisson<R: Rng>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map_or(0, |d| d.sample(rng) as u64)
}

/// RNG for one (sweep, object) pair; stream 0 is reserved for the layout.
fn stream_rng(seed: u64, sweep: usize, object: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (((sweep as u64) << 32) | object as u64));
    rng
}

/// Generates a labeled sequence and its ground-truth boxes.
pub fn generate_sequence(cfg: &SceneConfig) -> Result<(SweepSequence, GroundTruth)> {
    cfg.validate()?;
    let mut layout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let boxes = match cfg.layout {
        Layout::Scattered => place_scattered(cfg, &mut layout_rng)?,
        Layout::Ambiguous => place_ambiguous(cfg, &mut layout_rng)?,
    };
    let density = Density {
        per_m2: cfg.density,
        reference_range: cfg.reference_range,
    };
    let mut sweeps = Vec::with_capacity(cfg.sweep_count);
    for k in 0..cfg.sweep_count {
        let t = k as f64 * cfg.period;
        let mut points = Vec::new();
        let mut sem = Vec::new();
        let mut inst = Vec::new();
        let mut ground_rng = stream_rng(cfg.seed, k, 0);
        for g in sample_ground(cfg, density, &mut ground_rng) {
            let covered = boxes.iter().any(|b| {
                let c = b.center_at(t);
                (g[0] - c[0]).abs() <= b.half_extent[0] && (g[1] - c[1]).abs() <= b.half_extent[1]
            });
            if covered {
                continue;
            }
            points.push(Point::new(g[0], g[1], g[2]).with_intensity(ground_rng.random_range(0.0..0.3)));
            sem.push(if g[1].abs() < cfg.road_half_width { ROAD } else { TERRAIN });
            inst.push(NO_INSTANCE);
        }
        for (j, b) in boxes.iter().enumerate() {
            let mut rng = stream_rng(cfg.seed, k, j + 1);
            let pts = sample_box_surface(b.center_at(t), b.half_extent, [0.0; 3], density, cfg.occlusion, &mut rng);
            for p in pts {
                points.push(Point::new(p[0], p[1], p[2]).with_intensity(rng.random_range(0.2..1.0)));
                sem.push(b.class_id);
                inst.push(b.instance_id);
            }
        }
        sweeps.push(PointCloudSweep::new(t, points, sem, inst, Pose::identity())?);
    }
    let gt = GroundTruth {
        period: cfg.period,
        sweep_count: cfg.sweep_count,
        boxes,
    };
    Ok((SweepSequence::new(sweeps, cfg.period)?, gt))
}

/// Ground points on the disc around the sensor with density ∝ cos/range²,
/// drawn by inverting the radial distribution.
fn sample_ground<R: Rng>(cfg: &SceneConfig, density: Density, rng: &mut R) -> Vec<Vec3> {
    let h = cfg.sensor_height;
    let r_min = 2.0f64.min(cfg.ground_extent * 0.5);
    let inv = |r: f64| 1.0 / (r * r + h * h).sqrt();
    let (u0, u1) = (inv(r_min), inv(cfg.ground_extent));
    let lambda = density.per_m2 * density.reference_range.powi(2) * std::f64::consts::TAU * h * (u0 - u1);
    let n = poisson(lambda, rng);
    (0..n)
        .map(|_| {
            let u = rng.random_range(u1..=u0);
            let r = (1.0 / (u * u) - h * h).max(0.0).sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            [r * phi.cos(), r * phi.sin(), -h]
        })
        .collect()
}

fn sample_dims<R: Rng>(model: &ClassModel, rng: &mut R) -> Vec3 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    std::array::from_fn(|a| (model.size_mean[a] + model.size_std[a] * n.sample(rng)).max(0.3 * model.size_mean[a]))
}

/// Whether a box stays inside the placement band, clear of the sensor and
/// away from `others` for the whole sequence.
fn admissible(cfg: &SceneConfig, b: &TrueBox, others: &[TrueBox]) -> bool {
    let [lo, hi] = cfg.placement_range;
    (0..cfg.sweep_count).all(|k| {
        let t = k as f64 * cfg.period;
        let c = b.center_at(t);
        let r = c[0].hypot(c[1]);
        let clear_of_sensor = c[0].abs() > b.half_extent[0] + 1.0 || c[1].abs() > b.half_extent[1] + 1.0;
        (lo..=hi).contains(&r) && clear_of_sensor && others.iter().all(|o| b.planar_gap(o, t) > cfg.separation)
    })
}

const PLACEMENT_TRIES: usize = 200;

fn place_scattered<R: Rng>(cfg: &SceneConfig, rng: &mut R) -> Result<Vec<TrueBox>> {
    let n = rng.random_range(cfg.instance_count[0]..=cfg.instance_count[1]);
    let duration = (cfg.sweep_count - 1) as f64 * cfg.period;
    let mut boxes: Vec<TrueBox> = Vec::new();
    for _ in 0..n {
        for _ in 0..PLACEMENT_TRIES {
            let model = &cfg.classes[rng.random_range(0..cfg.classes.len())];
            let dims = sample_dims(model, rng);
            let half = dims.map(|d| 0.5 * d);
            let speed = rng.random_range(model.speed[0]..=model.speed[1]);
            let heading = if model.class_id == CAR {
                if rng.random_bool(0.5) { 0.0 } else { std::f64::consts::PI }
            } else {
                rng.random_range(0.0..std::f64::consts::TAU)
            };
            let velocity = [speed * heading.cos(), speed * heading.sin()];
            let [lo, hi] = cfg.placement_range;
            let r = rng.random_range(lo * lo..=hi * hi).sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let mid = [r * phi.cos(), r * phi.sin()];
            let b = TrueBox {
                instance_id: boxes.len() as u32 + 1,
                class_id: model.class_id,
                half_extent: half,
                start_center: [
                    mid[0] - velocity[0] * duration / 2.0,
                    mid[1] - velocity[1] * duration / 2.0,
                    half[2] - cfg.sensor_height,
                ],
                velocity,
            };
            if admissible(cfg, &b, &boxes) {
                boxes.push(b);
                break;
            }
        }
    }
    Ok(boxes)
}

fn place_ambiguous<R: Rng>(cfg: &SceneConfig, rng: &mut R) -> Result<Vec<TrueBox>> {
    let groups = rng.random_range(cfg.instance_count[0]..=cfg.instance_count[1]);
    let mut boxes: Vec<TrueBox> = Vec::new();
    let [lo, hi] = cfg.placement_range;
    for _ in 0..groups {
        let model = &cfg.classes[rng.random_range(0..cfg.classes.len())];
        for _ in 0..PLACEMENT_TRIES {
            let members = rng.random_range(3..=5);
            let r = rng.random_range(lo..=hi);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            // Groups line up along the axis closest to the line of sight and
            // extend away from the sensor, so every member but the nearest
            // shows mostly its sensor-facing end.
            let (c, s) = (phi.cos(), phi.sin());
            let axis = if c.abs() >= s.abs() { 0 } else { 1 };
            let outward = if [c, s][axis] >= 0.0 { 1.0 } else { -1.0 };
            let velocity = if model.class_id == CAR {
                [0.0, 0.0]
            } else {
                let v = rng.random_range(model.speed[0]..=model.speed[1]) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                if axis == 0 { [0.0, v] } else { [v, 0.0] }
            };
            let mut cursor = [r * c, r * s];
            let mut group = Vec::new();
            for _ in 0..members {
                let mut half = sample_dims(model, rng).map(|d| 0.5 * d);
                if axis == 1 {
                    half.swap(0, 1);
                }
                cursor[axis] += outward * half[axis];
                group.push(TrueBox {
                    instance_id: 0,
                    class_id: model.class_id,
                    half_extent: half,
                    start_center: [cursor[0], cursor[1], half[2] - cfg.sensor_height],
                    velocity,
                });
                cursor[axis] += outward * (half[axis] + rng.random_range(model.adjacent_gap[0]..=model.adjacent_gap[1]));
            }
            if group.iter().all(|b| admissible(cfg, b, &boxes)) {
                for mut b in group {
                    b.instance_id = boxes.len() as u32 + 1;
                    boxes.push(b);
                }
                break;
            }
        }
    }
    Ok(boxes)
}
