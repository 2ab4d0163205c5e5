//! On-disk formats: `.bin` point files, `.label` files, poses, timestamps
//! and the dataset directory layout.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{RunConfig, SEED_ENV};

use crate::error::{Error, Result};
use crate::types::{load_taxonomy, Point, PointCloudSweep, Pose, SweepSequence, Taxonomy};

/// Bytes per point in a `.bin` file (x, y, z, intensity as f32).
pub const POINT_RECORD: usize = 16;
/// Bytes per point in a `.label` file.
pub const LABEL_RECORD: usize = 4;
/// Largest instance id the 16-bit half of a label word can hold.
pub const MAX_LABEL_INSTANCE: u32 = 0xFFFF;
/// Sweep period assumed for single-sweep sequences.
pub const DEFAULT_PERIOD: f64 = 0.1;

pub fn pack_label(sem: u16, inst: u32) -> Result<u32> {
    if inst > MAX_LABEL_INSTANCE {
        return Err(Error::IdOverflow(MAX_LABEL_INSTANCE));
    }
    Ok((inst << 16) | u32::from(sem))
}

pub fn unpack_label(word: u32) -> (u16, u32) {
    ((word & 0xFFFF) as u16, word >> 16)
}

fn read_records(path: &Path, record: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % record != 0 {
        return Err(Error::TruncatedRecord {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            record,
        });
    }
    Ok(bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    let bytes = read_records(path, POINT_RECORD)?;
    let points: Vec<Point> = bytes
        .chunks_exact(POINT_RECORD)
        .map(|c| {
            let f = |i: usize| f64::from(f32::from_le_bytes([c[4 * i], c[4 * i + 1], c[4 * i + 2], c[4 * i + 3]]));
            Point::new(f(0), f(1), f(2)).with_intensity(f(3))
        })
        .collect();
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("point coordinates"));
    }
    Ok(points)
}

/// Writes points as f32; an empty sweep is rejected because it cannot be
/// told apart from a missing scan downstream.
pub fn write_points(path: &Path, points: &[Point]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Empty("sweep (refusing to write a point file with no points)"));
    }
    let mut out = Vec::with_capacity(points.len() * POINT_RECORD);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_bytes(path, &out)
}

pub fn read_labels(path: &Path) -> Result<(Vec<u16>, Vec<u32>)> {
    let bytes = read_records(path, LABEL_RECORD)?;
    Ok(bytes
        .chunks_exact(LABEL_RECORD)
        .map(|c| unpack_label(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .unzip())
}

pub fn write_labels(path: &Path, sem: &[u16], inst: &[u32]) -> Result<()> {
    if sem.len() != inst.len() {
        return Err(Error::LengthMismatch {
            what: "semantic vs instance labels",
            left: sem.len(),
            right: inst.len(),
        });
    }
    if sem.is_empty() {
        return Err(Error::Empty("sweep (refusing to write a label file with no points)"));
    }
    let mut out = Vec::with_capacity(sem.len() * LABEL_RECORD);
    for (&s, &i) in sem.iter().zip(inst) {
        out.extend_from_slice(&pack_label(s, i)?.to_le_bytes());
    }
    write_bytes(path, &out)
}

fn parse_floats(line: &str, loc: impl Fn() -> String) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::parse(loc(), format!("`{t}`: {e}"))))
        .collect()
}

/// One row-major 3×4 matrix per line.
pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let loc = || format!("{origin}:{}", n + 1);
            let v = parse_floats(l, loc)?;
            Pose::from_row_major_3x4(&v).map_err(|e| match e {
                Error::NonRigidPose(_) => e,
                other => Error::parse(loc(), other.to_string()),
            })
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    // `{:?}` is the shortest representation that round-trips.
    format!("{v:?}")
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let text: String = poses
        .iter()
        .map(|p| {
            let row: Vec<String> = p.to_row_major_3x4().iter().map(|v| fmt_f64(*v)).collect();
            row.join(" ") + "\n"
        })
        .collect();
    write_bytes(path, text.as_bytes())
}

pub fn read_times(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (n, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let v = parse_floats(l, || format!("{origin}:{}", n + 1))?;
        if v.len() != 1 {
            return Err(Error::parse(format!("{origin}:{}", n + 1), "expected one timestamp per line"));
        }
        out.push(v[0]);
    }
    Ok(out)
}

pub fn write_times(path: &Path, times: &[f64]) -> Result<()> {
    let text: String = times.iter().map(|t| fmt_f64(*t) + "\n").collect();
    write_bytes(path, text.as_bytes())
}

pub fn frame_name(index: usize) -> String {
    format!("{index:06}")
}

/// Which label files a sequence is read with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// `labels/`, the ground truth.
    GroundTruth,
    /// `predictions/`, written by `infer` and `track`.
    Predictions,
}

impl LabelSource {
    fn dir(self) -> &'static str {
        match self {
            LabelSource::GroundTruth => "labels",
            LabelSource::Predictions => "predictions",
        }
    }
}

/// `root/sequences/<seq>/{velodyne,labels,predictions}/NNNNNN.*`, per-sequence
/// `poses.txt` and `times.txt`, and `root/taxonomy.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn taxonomy_path(&self) -> PathBuf {
        self.root.join("taxonomy.txt")
    }

    pub fn sequences_dir(&self) -> PathBuf {
        self.root.join("sequences")
    }

    pub fn sequence_dir(&self, seq: &str) -> PathBuf {
        self.sequences_dir().join(seq)
    }

    pub fn points_path(&self, seq: &str, frame: usize) -> PathBuf {
        self.sequence_dir(seq).join("velodyne").join(frame_name(frame) + ".bin")
    }

    pub fn labels_path(&self, seq: &str, frame: usize, source: LabelSource) -> PathBuf {
        self.sequence_dir(seq).join(source.dir()).join(frame_name(frame) + ".label")
    }

    pub fn poses_path(&self, seq: &str) -> PathBuf {
        self.sequence_dir(seq).join("poses.txt")
    }

    pub fn times_path(&self, seq: &str) -> PathBuf {
        self.sequence_dir(seq).join("times.txt")
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        load_taxonomy(&self.taxonomy_path())
    }

    pub fn write_taxonomy(&self, taxonomy: &Taxonomy) -> Result<()> {
        write_bytes(&self.taxonomy_path(), taxonomy.to_text().as_bytes())
    }

    /// Sequence names in lexicographic order.
    pub fn sequences(&self) -> Result<Vec<String>> {
        let dir = self.sequences_dir();
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().is_dir() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    /// Number of frames in `sub`, checking that names run 000000, 000001, ...
    fn frame_count(&self, seq: &str, sub: &str, ext: &str) -> Result<usize> {
        let dir = self.sequence_dir(seq).join(sub);
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let name = entry.map_err(|e| Error::io(&dir, e))?.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(ext) {
                names.push(stem.to_string());
            }
        }
        names.sort();
        for (i, n) in names.iter().enumerate() {
            if *n != frame_name(i) {
                return Err(Error::Invariant(format!(
                    "{}: expected frame {} but found {n}{ext}",
                    dir.display(),
                    frame_name(i)
                )));
            }
        }
        Ok(names.len())
    }

    pub fn frames(&self, seq: &str) -> Result<usize> {
        self.frame_count(seq, "velodyne", ".bin")
    }

    /// Label files for `seq`; their count must match the point files when
    /// the tree has any (prediction trees need not).
    pub fn label_frames(&self, seq: &str, source: LabelSource) -> Result<usize> {
        let n = self.frame_count(seq, source.dir(), ".label")?;
        if !self.sequence_dir(seq).join("velodyne").is_dir() {
            return Ok(n);
        }
        let points = self.frames(seq)?;
        if n != points {
            return Err(Error::LengthMismatch {
                what: "label files vs point files",
                left: n,
                right: points,
            });
        }
        Ok(n)
    }

    pub fn read_sweep(&self, seq: &str, frame: usize, source: LabelSource, pose: Pose, timestamp: f64) -> Result<PointCloudSweep> {
        let points = read_points(&self.points_path(seq, frame))?;
        let (sem, inst) = read_labels(&self.labels_path(seq, frame, source))?;
        if sem.len() != points.len() {
            return Err(Error::LengthMismatch {
                what: "labels vs points",
                left: sem.len(),
                right: points.len(),
            });
        }
        PointCloudSweep::new(timestamp, points, sem, inst, pose)
    }

    /// Reads a whole sequence. The period is the mean timestamp spacing.
    pub fn read_sequence(&self, seq: &str, source: LabelSource) -> Result<SweepSequence> {
        let n = self.label_frames(seq, source)?;
        let poses = read_poses(&self.poses_path(seq))?;
        let times = read_times(&self.times_path(seq))?;
        for (what, len) in [("poses vs frames", poses.len()), ("timestamps vs frames", times.len())] {
            if len != n {
                return Err(Error::LengthMismatch { what, left: len, right: n });
            }
        }
        let sweeps = (0..n)
            .map(|k| self.read_sweep(seq, k, source, poses[k], times[k]))
            .collect::<Result<Vec<_>>>()?;
        let period = if n > 1 { (times[n - 1] - times[0]) / (n - 1) as f64 } else { DEFAULT_PERIOD };
        SweepSequence::new(sweeps, period)
    }

    /// Writes points, ground-truth labels, poses and timestamps.
    pub fn write_sequence(&self, seq: &str, sequence: &SweepSequence) -> Result<()> {
        for (k, s) in sequence.sweeps.iter().enumerate() {
            write_points(&self.points_path(seq, k), &s.points)?;
            write_labels(&self.labels_path(seq, k, LabelSource::GroundTruth), &s.sem_labels, &s.inst_labels)?;
        }
        let poses: Vec<Pose> = sequence.sweeps.iter().map(|s| s.ego_pose).collect();
        let times: Vec<f64> = sequence.sweeps.iter().map(|s| s.timestamp).collect();
        write_poses(&self.poses_path(seq), &poses)?;
        write_times(&self.times_path(seq), &times)
    }

    /// Per-frame label files of one source.
    pub fn read_label_frames(&self, seq: &str, source: LabelSource) -> Result<Vec<(Vec<u16>, Vec<u32>)>> {
        let n = self.label_frames(seq, source)?;
        (0..n).map(|k| read_labels(&self.labels_path(seq, k, source))).collect()
    }
}
