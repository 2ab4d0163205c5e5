use crate::error::{Error, Result};
use crate::membership::{roi_points, Detection, MembershipFunction, MembershipQuery, RoiMargin, SweepFeatures};
use crate::types::{PanopticLabeling, Point, Taxonomy, NO_INSTANCE};

/// How a point claimed by several detections is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConflictRule {
    /// The first detection in confidence order keeps the point.
    #[default]
    FirstWins,
    /// The detection with the highest membership score takes the point
    /// (earlier detection on ties).
    Argmax,
}

impl ConflictRule {
    pub fn name(self) -> &'static str {
        match self {
            ConflictRule::FirstWins => "first-wins",
            ConflictRule::Argmax => "argmax",
        }
    }
}

impl std::str::FromStr for ConflictRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-wins" => Ok(ConflictRule::FirstWins),
            "argmax" => Ok(ConflictRule::Argmax),
            other => Err(Error::Config(format!("unknown conflict rule `{other}` (first-wins, argmax)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FuseConfig {
    pub margin: RoiMargin,
    pub conflict: ConflictRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// Detection `d` labels its points with instance id `d + 1`.
    pub labeling: PanopticLabeling,
    /// Owning detection per point.
    pub assigned: Vec<Option<usize>>,
}

/// Combines per-point semantics, detections (sorted by decreasing confidence)
/// and a membership function into panoptic labels.
pub fn fuse_panoptic(
    points: &[Point],
    sem: &[u16],
    detections: &[Detection],
    membership: &dyn MembershipFunction,
    features: &SweepFeatures,
    taxonomy: &Taxonomy,
    cfg: &FuseConfig,
) -> Result<FusionOutput> {
    if sem.len() != points.len() {
        return Err(Error::LengthMismatch {
            what: "semantic predictions vs points",
            left: sem.len(),
            right: points.len(),
        });
    }
    if detections.windows(2).any(|w| w[0].confidence < w[1].confidence) {
        return Err(Error::Invariant("detections are not sorted by decreasing confidence".into()));
    }
    if detections.len() > u32::MAX as usize - 1 {
        return Err(Error::IdOverflow(u32::MAX));
    }
    for d in detections {
        if !taxonomy.is_thing(d.class_id) {
            return Err(Error::UnknownClass(d.class_id));
        }
    }
    let query = MembershipQuery {
        points,
        sem,
        features,
        taxonomy,
        detections,
        margin: cfg.margin,
    };
    let mut assigned: Vec<Option<usize>> = vec![None; points.len()];
    let mut best_score = vec![f64::NEG_INFINITY; points.len()];
    for (d, det) in detections.iter().enumerate() {
        let roi: Vec<usize> = roi_points(det, points, cfg.margin)
            .into_iter()
            .filter(|&i| sem[i] == det.class_id)
            .collect();
        let candidates: Vec<usize> = match cfg.conflict {
            ConflictRule::FirstWins => roi.into_iter().filter(|&i| assigned[i].is_none()).collect(),
            ConflictRule::Argmax => roi,
        };
        if candidates.is_empty() {
            continue;
        }
        let scores = membership.score(&query, d, &candidates)?;
        if scores.len() != candidates.len() {
            return Err(Error::LengthMismatch {
                what: "membership scores vs RoI points",
                left: scores.len(),
                right: candidates.len(),
            });
        }
        for (&i, &s) in candidates.iter().zip(&scores) {
            if s.is_nan() {
                return Err(Error::NonFinite("membership score"));
            }
            if s > 0.5 && s > best_score[i] {
                if cfg.conflict == ConflictRule::FirstWins && assigned[i].is_some() {
                    continue;
                }
                assigned[i] = Some(d);
                best_score[i] = s;
            }
        }
    }
    let mut out_sem = sem.to_vec();
    let mut out_inst = vec![NO_INSTANCE; points.len()];
    for (i, a) in assigned.iter().enumerate() {
        if let Some(d) = a {
            out_sem[i] = detections[*d].class_id;
            out_inst[i] = *d as u32 + 1;
        }
    }
    Ok(FusionOutput {
        labeling: PanopticLabeling::new(out_sem, out_inst)?,
        assigned,
    })
}
