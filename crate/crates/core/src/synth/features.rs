use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::membership::SweepFeatures;
use crate::types::{Point, Taxonomy};
use crate::voxel::GridSpec;

/// Width of the hand-crafted per-point features: local density, height above
/// ground, range, and the offset (dx, dy, dz) from the point to the centroid
/// of its Euclidean cluster.
pub const POINT_FEATURE_DIMS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Neighbourhood radius for the density channel.
    pub density_radius: f64,
    /// Linking distance of the Euclidean clustering.
    pub cluster_radius: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            density_radius: 0.5,
            cluster_radius: 0.4,
        }
    }
}

type Key = [i64; 3];

fn key(p: &Point, cell: f64) -> Key {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}

fn neighbours(k: Key) -> impl Iterator<Item = Key> {
    (-1..=1).flat_map(move |dx| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dz| [k[0] + dx, k[1] + dy, k[2] + dz])))
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Deterministic per-point features and their per-column mean on the BEV
/// raster. Clustering links points of the same predicted thing class; other
/// points get a zero centroid offset.
pub fn hand_crafted_features(
    points: &[Point],
    sem: &[u16],
    taxonomy: &Taxonomy,
    spec: &GridSpec,
    cfg: &FeatureConfig,
) -> Result<SweepFeatures> {
    if sem.len() != points.len() {
        return Err(Error::LengthMismatch {
            what: "semantic predictions vs points",
            left: sem.len(),
            right: points.len(),
        });
    }
    if !(cfg.density_radius > 0.0 && cfg.cluster_radius > 0.0) {
        return Err(Error::Config("feature radii must be positive".into()));
    }
    let n = points.len();
    let mut feats = Array2::<f64>::zeros((n, POINT_FEATURE_DIMS));

    let mut grid: HashMap<Key, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p, cfg.density_radius)).or_default().push(i);
    }
    let r2 = cfg.density_radius.powi(2);
    let mut ground: Vec<f64> = points
        .iter()
        .zip(sem)
        .filter(|(_, s)| taxonomy.is_stuff(**s))
        .map(|(p, _)| p.z)
        .collect();
    ground.sort_by(f64::total_cmp);
    let ground_z = ground
        .get(ground.len() / 2)
        .copied()
        .unwrap_or_else(|| points.iter().map(|p| p.z).fold(0.0, f64::min));

    for (i, p) in points.iter().enumerate() {
        let count = neighbours(key(p, cfg.density_radius))
            .filter_map(|k| grid.get(&k))
            .flatten()
            .filter(|&&j| j != i && dist2(p, &points[j]) <= r2)
            .count();
        feats[[i, 0]] = (1.0 + count as f64).ln() / 4.0;
        feats[[i, 1]] = (p.z - ground_z) / 2.0;
        feats[[i, 2]] = p.planar_range() / 50.0;
    }

    let mut parent: Vec<usize> = (0..n).collect();
    let mut cgrid: HashMap<(u16, Key), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        if taxonomy.is_thing(sem[i]) {
            cgrid.entry((sem[i], key(p, cfg.cluster_radius))).or_default().push(i);
        }
    }
    let c2 = cfg.cluster_radius.powi(2);
    for (i, p) in points.iter().enumerate() {
        if !taxonomy.is_thing(sem[i]) {
            continue;
        }
        for k in neighbours(key(p, cfg.cluster_radius)) {
            for &j in cgrid.get(&(sem[i], k)).into_iter().flatten() {
                if j > i && dist2(p, &points[j]) <= c2 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut sums: HashMap<usize, ([f64; 3], usize)> = HashMap::new();
    for i in 0..n {
        if taxonomy.is_thing(sem[i]) {
            let root = find(&mut parent, i);
            let e = sums.entry(root).or_insert(([0.0; 3], 0));
            let xyz = points[i].xyz();
            (0..3).for_each(|a| e.0[a] += xyz[a]);
            e.1 += 1;
        }
    }
    for i in 0..n {
        if taxonomy.is_thing(sem[i]) {
            let (s, c) = sums[&find(&mut parent, i)];
            let xyz = points[i].xyz();
            for a in 0..3 {
                feats[[i, 3 + a]] = s[a] / c as f64 - xyz[a];
            }
        }
    }

    let mut bev = spec.bev_raster(POINT_FEATURE_DIMS)?;
    let mut counts = vec![0usize; bev.width * bev.depth];
    for (i, p) in points.iter().enumerate() {
        if let Some((ix, iy)) = bev.cell_of([p.x, p.y]) {
            counts[ix * bev.depth + iy] += 1;
            for (o, v) in bev.cell_mut(ix, iy).iter_mut().zip(feats.row(i)) {
                *o += v;
            }
        }
    }
    for ix in 0..bev.width {
        for iy in 0..bev.depth {
            let c = counts[ix * bev.depth + iy];
            if c > 1 {
                bev.cell_mut(ix, iy).iter_mut().for_each(|v| *v /= c as f64);
            }
        }
    }
    Ok(SweepFeatures { point: feats, bev })
}
