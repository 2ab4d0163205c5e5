//! Shared domain types: points, sweeps, sequences, the class taxonomy and
//! panoptic labelings.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class id reserved for unlabeled / ignored points.
pub const IGNORE_CLASS: u16 = 0;
/// Instance id reserved for "no instance".
pub const NO_INSTANCE: u32 = 0;

const RIGID_TOLERANCE: f64 = 1e-9;

/// A single lidar return. `dt` is the time offset in seconds relative to the
/// reference sweep; it is 0 for the current sweep and negative for history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    pub dt: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: 0.0,
            dt: 0.0,
        }
    }

    pub fn with_intensity(mut self, intensity: f64) -> Self {
        self.intensity = intensity;
        self
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn planar_range(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// A 4×4 homogeneous rigid transform (rotation + translation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(Matrix4<f64>);

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose(Matrix4::identity())
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        let mut m = Matrix4::identity();
        m[(0, 3)] = t[0];
        m[(1, 3)] = t[1];
        m[(2, 3)] = t[2];
        Pose(m)
    }

    /// Rotation by `yaw` radians about +z followed by translation `t`.
    pub fn from_yaw_translation(yaw: f64, t: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        let mut m = Matrix4::identity();
        m[(0, 0)] = c;
        m[(0, 1)] = -s;
        m[(1, 0)] = s;
        m[(1, 1)] = c;
        m[(0, 3)] = t[0];
        m[(1, 3)] = t[1];
        m[(2, 3)] = t[2];
        Pose(m)
    }

    /// Builds a pose from the 12 values of a KITTI `poses.txt` row (3×4,
    /// row-major), validating rigidity.
    pub fn from_row_major_3x4(values: &[f64]) -> Result<Self> {
        if values.len() != 12 {
            return Err(Error::LengthMismatch {
                what: "pose row",
                left: values.len(),
                right: 12,
            });
        }
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = values[r * 4 + c];
            }
        }
        let pose = Pose(m);
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        let pose = Pose(m);
        pose.validate()?;
        Ok(pose)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Largest deviation of RᵀR from identity, of det(R) from 1, and of the
    /// bottom row from (0, 0, 0, 1).
    pub fn rigidity_error(&self) -> f64 {
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = (r.determinant() - 1.0).abs();
        let row = (self.0.row(3) - Vector4::new(0.0, 0.0, 0.0, 1.0).transpose())
            .abs()
            .max();
        ortho.max(det).max(row)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let err = self.rigidity_error();
        if err > RIGID_TOLERANCE {
            return Err(Error::NonRigidPose(err));
        }
        Ok(())
    }

    /// Closed-form rigid inverse: (R, t)⁻¹ = (Rᵀ, −Rᵀt).
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Pose(m)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Pose(self.0 * other.0)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rotation() * Vector3::new(p[0], p[1], p[2]) + self.translation();
        [v.x, v.y, v.z]
    }
}

/// One lidar sweep with per-point ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudSweep {
    pub timestamp: f64,
    pub points: Vec<Point>,
    pub sem_labels: Vec<u16>,
    pub inst_labels: Vec<u32>,
    pub ego_pose: Pose,
}

impl PointCloudSweep {
    pub fn new(
        timestamp: f64,
        points: Vec<Point>,
        sem_labels: Vec<u16>,
        inst_labels: Vec<u32>,
        ego_pose: Pose,
    ) -> Result<Self> {
        let sweep = Self {
            timestamp,
            points,
            sem_labels,
            inst_labels,
            ego_pose,
        };
        sweep.validate_shape()?;
        Ok(sweep)
    }

    /// Structural checks that do not need a taxonomy.
    pub fn validate_shape(&self) -> Result<()> {
        for (what, len) in [
            ("semantic labels vs points", self.sem_labels.len()),
            ("instance labels vs points", self.inst_labels.len()),
        ] {
            if len != self.points.len() {
                return Err(Error::LengthMismatch {
                    what,
                    left: len,
                    right: self.points.len(),
                });
            }
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        self.ego_pose.validate()
    }

    /// Full validation: shape plus "instances only on thing classes".
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<()> {
        self.validate_shape()?;
        for (&sem, &inst) in self.sem_labels.iter().zip(&self.inst_labels) {
            taxonomy.check_known(sem)?;
            if inst != NO_INSTANCE && !taxonomy.is_thing(sem) {
                return Err(Error::Invariant(format!(
                    "instance {inst} on non-thing class {sem}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ground_truth(&self) -> PanopticLabeling {
        PanopticLabeling {
            sem: self.sem_labels.clone(),
            inst: self.inst_labels.clone(),
        }
    }
}

/// Re-expresses the sweep's points in the frame of `target_pose`. Both the
/// sweep's own pose and the target pose map their frame into the world frame.
pub fn transform_to_frame(sweep: &PointCloudSweep, target_pose: &Pose) -> Result<PointCloudSweep> {
    sweep.ego_pose.validate()?;
    target_pose.validate()?;
    let to_target = target_pose.inverse().compose(&sweep.ego_pose);
    let points = sweep
        .points
        .iter()
        .map(|p| {
            let [x, y, z] = to_target.apply(p.xyz());
            Point { x, y, z, ..*p }
        })
        .collect();
    Ok(PointCloudSweep {
        timestamp: sweep.timestamp,
        points,
        sem_labels: sweep.sem_labels.clone(),
        inst_labels: sweep.inst_labels.clone(),
        ego_pose: *target_pose,
    })
}

/// Time-ordered sweeps of one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSequence {
    pub sweeps: Vec<PointCloudSweep>,
    pub period: f64,
}

impl SweepSequence {
    pub fn new(sweeps: Vec<PointCloudSweep>, period: f64) -> Result<Self> {
        let seq = Self { sweeps, period };
        seq.validate_timing()?;
        Ok(seq)
    }

    fn validate_timing(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::Invariant(format!(
                "sweep period must be positive, got {}",
                self.period
            )));
        }
        for w in self.sweeps.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::Invariant(format!(
                    "timestamps not strictly increasing ({} then {})",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        Ok(())
    }

    /// Checks timing, every sweep, and that each instance id keeps a single
    /// semantic class over the whole sequence.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<()> {
        self.validate_timing()?;
        let mut class_of: HashMap<u32, u16> = HashMap::new();
        for sweep in &self.sweeps {
            sweep.validate(taxonomy)?;
            for (&sem, &inst) in sweep.sem_labels.iter().zip(&sweep.inst_labels) {
                if inst == NO_INSTANCE {
                    continue;
                }
                let prev = *class_of.entry(inst).or_insert(sem);
                if prev != sem {
                    return Err(Error::Invariant(format!(
                        "instance {inst} labeled as both class {prev} and {sem}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sweeps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sweeps.is_empty()
    }

    /// Points of sweep `index` plus up to `history` previous sweeps, all
    /// expressed in the frame of sweep `index`; history points carry a
    /// negative `dt`. Returns the points and a per-point "current sweep" flag.
    pub fn accumulate(&self, index: usize, history: usize) -> Result<(Vec<Point>, Vec<bool>)> {
        let reference = &self.sweeps[index];
        let mut points = reference.points.clone();
        let mut current = vec![true; points.len()];
        for back in 1..=history.min(index) {
            let past = &self.sweeps[index - back];
            let moved = transform_to_frame(past, &reference.ego_pose)?;
            let dt = past.timestamp - reference.timestamp;
            points.extend(moved.points.into_iter().map(|p| Point { dt, ..p }));
            current.extend(std::iter::repeat_n(false, past.len()));
        }
        Ok((points, current))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Thing,
    Stuff,
    Ignore,
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassKind::Thing => "thing",
            ClassKind::Stuff => "stuff",
            ClassKind::Ignore => "ignore",
        })
    }
}

impl std::str::FromStr for ClassKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "thing" => Ok(ClassKind::Thing),
            "stuff" => Ok(ClassKind::Stuff),
            "ignore" => Ok(ClassKind::Ignore),
            other => Err(format!("unknown class kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u16,
    pub name: String,
    pub kind: ClassKind,
}

/// The semantic class set with its thing/stuff partition.
///
/// Class id 0 always means "ignore", whether or not the file declares it.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    classes: Vec<ClassInfo>,
    by_id: BTreeMap<u16, usize>,
    pub min_instance_points: usize,
}

impl Taxonomy {
    pub fn new(classes: Vec<ClassInfo>, min_instance_points: usize) -> Result<Self> {
        if min_instance_points == 0 {
            return Err(Error::Invariant("min_instance_points must be >= 1".into()));
        }
        let mut by_id = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            if by_id.insert(c.id, i).is_some() {
                return Err(Error::DuplicateClassId(c.id));
            }
            if c.id == IGNORE_CLASS && c.kind != ClassKind::Ignore {
                return Err(Error::Invariant(
                    "class id 0 is reserved for ignore".into(),
                ));
            }
        }
        let has = |k| classes.iter().any(|c| c.kind == k);
        if !has(ClassKind::Thing) || !has(ClassKind::Stuff) {
            return Err(Error::IncompleteTaxonomy);
        }
        Ok(Self {
            classes,
            by_id,
            min_instance_points,
        })
    }

    /// Parses the tab-separated taxonomy text format.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut min_points = None;
        let mut classes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let loc = || format!("{origin}:{}", lineno + 1);
            if let Some(rest) = line.trim().strip_prefix("min_instance_points=") {
                let n = rest
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::parse(loc(), e.to_string()))?;
                min_points = Some(n);
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    loc(),
                    format!("expected `id<TAB>name<TAB>kind`, got {} fields", fields.len()),
                ));
            }
            let id = fields[0]
                .trim()
                .parse::<u16>()
                .map_err(|e| Error::parse(loc(), e.to_string()))?;
            let kind = fields[2].parse::<ClassKind>().map_err(|e| Error::parse(loc(), e))?;
            classes.push(ClassInfo {
                id,
                name: fields[1].trim().to_string(),
                kind,
            });
        }
        let min_points =
            min_points.ok_or_else(|| Error::parse(origin, "missing `min_instance_points=` header"))?;
        Self::new(classes, min_points)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("min_instance_points={}\n", self.min_instance_points);
        for c in &self.classes {
            out.push_str(&format!("{}\t{}\t{}\n", c.id, c.name, c.kind));
        }
        out
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn get(&self, id: u16) -> Option<&ClassInfo> {
        self.by_id.get(&id).map(|&i| &self.classes[i])
    }

    pub fn kind(&self, id: u16) -> ClassKind {
        if id == IGNORE_CLASS {
            return ClassKind::Ignore;
        }
        self.get(id).map_or(ClassKind::Ignore, |c| c.kind)
    }

    pub fn check_known(&self, id: u16) -> Result<()> {
        if id == IGNORE_CLASS || self.by_id.contains_key(&id) {
            Ok(())
        } else {
            Err(Error::UnknownClass(id))
        }
    }

    pub fn is_thing(&self, id: u16) -> bool {
        self.kind(id) == ClassKind::Thing
    }

    pub fn is_stuff(&self, id: u16) -> bool {
        self.kind(id) == ClassKind::Stuff
    }

    pub fn is_evaluated(&self, id: u16) -> bool {
        matches!(self.kind(id), ClassKind::Thing | ClassKind::Stuff)
    }

    /// Thing class ids in declaration order; position = heatmap channel.
    pub fn thing_ids(&self) -> Vec<u16> {
        self.ids_of(ClassKind::Thing)
    }

    pub fn stuff_ids(&self) -> Vec<u16> {
        self.ids_of(ClassKind::Stuff)
    }

    /// Thing and stuff ids in declaration order; position = one-hot slot.
    pub fn evaluated_ids(&self) -> Vec<u16> {
        self.classes
            .iter()
            .filter(|c| matches!(c.kind, ClassKind::Thing | ClassKind::Stuff))
            .map(|c| c.id)
            .collect()
    }

    fn ids_of(&self, kind: ClassKind) -> Vec<u16> {
        self.classes
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.id)
            .collect()
    }

    pub fn thing_channel(&self, id: u16) -> Option<usize> {
        self.thing_ids().iter().position(|&c| c == id)
    }

    pub fn class_slot(&self, id: u16) -> Option<usize> {
        self.evaluated_ids().iter().position(|&c| c == id)
    }

    pub fn name(&self, id: u16) -> String {
        self.get(id)
            .map_or_else(|| format!("class{id}"), |c| c.name.clone())
    }
}

/// Reads and validates a taxonomy file.
pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Taxonomy::parse(&text, &path.display().to_string())
}

/// Whether thing-class points may carry instance id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnassignedThings {
    Allow,
    Forbid,
}

/// Per-point panoptic output: semantic class and instance id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PanopticLabeling {
    pub sem: Vec<u16>,
    pub inst: Vec<u32>,
}

impl PanopticLabeling {
    pub fn new(sem: Vec<u16>, inst: Vec<u32>) -> Result<Self> {
        if sem.len() != inst.len() {
            return Err(Error::LengthMismatch {
                what: "semantic vs instance labels",
                left: sem.len(),
                right: inst.len(),
            });
        }
        Ok(Self { sem, inst })
    }

    pub fn len(&self) -> usize {
        self.sem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sem.is_empty()
    }

    pub fn validate(&self, taxonomy: &Taxonomy, unassigned: UnassignedThings) -> Result<()> {
        if self.sem.len() != self.inst.len() {
            return Err(Error::LengthMismatch {
                what: "semantic vs instance labels",
                left: self.sem.len(),
                right: self.inst.len(),
            });
        }
        let mut class_of: HashMap<u32, u16> = HashMap::new();
        for (&sem, &inst) in self.sem.iter().zip(&self.inst) {
            taxonomy.check_known(sem)?;
            let thing = taxonomy.is_thing(sem);
            if inst != NO_INSTANCE {
                if !thing {
                    return Err(Error::Invariant(format!(
                        "instance {inst} on non-thing class {sem}"
                    )));
                }
                let prev = *class_of.entry(inst).or_insert(sem);
                if prev != sem {
                    return Err(Error::Invariant(format!(
                        "instance {inst} spans classes {prev} and {sem}"
                    )));
                }
            } else if thing && unassigned == UnassignedThings::Forbid {
                return Err(Error::Invariant(format!(
                    "thing point of class {sem} without an instance"
                )));
            }
        }
        Ok(())
    }

    /// Distinct nonzero instance ids, ascending.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.inst.iter().copied().filter(|&i| i != NO_INSTANCE).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}
