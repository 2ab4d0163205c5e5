use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::membership::Detection;
use crate::targets::Vec3;

/// Largest id representable in the 16-bit instance field of label files.
pub const MAX_TRACK_ID: u32 = 0xFFFF;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Association gate per class, meters.
    pub gate: BTreeMap<u16, f64>,
    /// Gate for classes missing from `gate`.
    pub default_gate: f64,
    /// Unmatched tracks survive this many sweeps.
    pub max_age: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: BTreeMap::new(),
            default_gate: 2.0,
            max_age: 2,
        }
    }
}

impl TrackerConfig {
    /// Gates of twice the planar class-mean extent.
    pub fn with_class_gates(extents: &BTreeMap<u16, Vec3>, max_age: usize) -> Self {
        Self {
            gate: extents.iter().map(|(c, r)| (*c, 2.0 * r[0].max(r[1]))).collect(),
            max_age,
            ..Default::default()
        }
    }

    fn gate_for(&self, class: u16) -> f64 {
        self.gate.get(&class).copied().unwrap_or(self.default_gate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub track_id: u32,
    pub class_id: u16,
    /// (sweep number, detection index) per matched sweep.
    pub history: Vec<(usize, usize)>,
    pub last_center: Vec3,
    pub last_velocity: [f64; 2],
    /// Sweeps since the last match.
    pub age: usize,
}

/// Greedy matching of tracks to detections. A pair is a candidate when the
/// classes agree and the track's last center lies within the class gate of
/// the detection center moved back by its velocity over the elapsed time.
/// Returns the matched detection per track.
pub fn greedy_associate(
    tracks: &[Tracklet],
    detections: &[Detection],
    velocities: &[[f64; 2]],
    dt: f64,
    cfg: &TrackerConfig,
) -> Result<Vec<Option<usize>>> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("sweep period {dt} must be positive")));
    }
    if velocities.len() != detections.len() {
        return Err(Error::LengthMismatch {
            what: "detections vs velocities",
            left: detections.len(),
            right: velocities.len(),
        });
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (t, tr) in tracks.iter().enumerate() {
        let elapsed = (tr.age + 1) as f64 * dt;
        for (d, det) in detections.iter().enumerate() {
            if det.class_id != tr.class_id {
                continue;
            }
            let px = det.center[0] - velocities[d][0] * elapsed;
            let py = det.center[1] - velocities[d][1] * elapsed;
            let dist = (tr.last_center[0] - px).hypot(tr.last_center[1] - py);
            if dist < cfg.gate_for(det.class_id) {
                pairs.push((dist, t, d));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut track_match = vec![None; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    for (_, t, d) in pairs {
        if track_match[t].is_none() && !det_used[d] {
            track_match[t] = Some(d);
            det_used[d] = true;
        }
    }
    Ok(track_match)
}

/// Live tracks plus the id counter of one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    pub tracks: Vec<Tracklet>,
    next_id: u32,
    sweep: usize,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        if cfg.gate.values().chain([&cfg.default_gate]).any(|g| !(*g > 0.0)) {
            return Err(Error::Config("association gates must be positive".into()));
        }
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            sweep: 0,
        })
    }

    /// Associates one sweep's detections; returns the track id per detection.
    pub fn step(&mut self, detections: &[Detection], velocities: &[[f64; 2]], dt: f64) -> Result<Vec<u32>> {
        let matches = greedy_associate(&self.tracks, detections, velocities, dt, &self.cfg)?;
        let mut ids = vec![0u32; detections.len()];
        for (tr, m) in self.tracks.iter_mut().zip(&matches) {
            match m {
                Some(d) => {
                    ids[*d] = tr.track_id;
                    tr.history.push((self.sweep, *d));
                    tr.last_center = detections[*d].center;
                    tr.last_velocity = velocities[*d];
                    tr.age = 0;
                }
                None => tr.age += 1,
            }
        }
        let max_age = self.cfg.max_age;
        self.tracks.retain(|t| t.age <= max_age);
        for (d, det) in detections.iter().enumerate() {
            if ids[d] != 0 {
                continue;
            }
            if self.next_id > MAX_TRACK_ID {
                return Err(Error::IdOverflow(MAX_TRACK_ID));
            }
            ids[d] = self.next_id;
            self.tracks.push(Tracklet {
                track_id: self.next_id,
                class_id: det.class_id,
                history: vec![(self.sweep, d)],
                last_center: det.center,
                last_velocity: velocities[d],
                age: 0,
            });
            self.next_id += 1;
        }
        self.sweep += 1;
        Ok(ids)
    }
}
