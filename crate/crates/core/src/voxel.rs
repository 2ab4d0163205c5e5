//! Sparse voxelization, voxel majority-vote targets, height-flattened BEV
//! rasters and bilinear BEV sampling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Point, IGNORE_CLASS};

const DIM_TOLERANCE: f64 = 1e-6;

/// Sensor-centered voxel grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub voxel_size: [f64; 3],
    /// Max planar distance from the sensor; also the half-width of the grid.
    pub range: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub bev_downsample: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            voxel_size: [0.075, 0.075, 0.2],
            range: 54.0,
            z_min: -5.0,
            z_max: 3.0,
            bev_downsample: 8,
        }
    }
}

fn whole(extent: f64, step: f64, what: &str) -> Result<usize> {
    let n = extent / step;
    let r = n.round();
    if r < 1.0 || (n - r).abs() > DIM_TOLERANCE {
        return Err(Error::Config(format!(
            "{what}: extent {extent} is not a positive multiple of {step}"
        )));
    }
    Ok(r as usize)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.voxel_size.iter().any(|&v| !(v > 0.0)) || !(self.range > 0.0) {
            return Err(Error::Config("voxel sizes and range must be positive".into()));
        }
        if !(self.z_max > self.z_min) {
            return Err(Error::Config("z_max must exceed z_min".into()));
        }
        if self.bev_downsample == 0 {
            return Err(Error::Config("bev_downsample must be >= 1".into()));
        }
        let [w, d, _] = self.dims()?;
        if w % self.bev_downsample != 0 || d % self.bev_downsample != 0 {
            return Err(Error::Config(format!(
                "grid {w}x{d} not divisible by bev_downsample {}",
                self.bev_downsample
            )));
        }
        Ok(())
    }

    /// Voxel counts along (x, y, z).
    pub fn dims(&self) -> Result<[usize; 3]> {
        Ok([
            whole(2.0 * self.range, self.voxel_size[0], "x")?,
            whole(2.0 * self.range, self.voxel_size[1], "y")?,
            whole(self.z_max - self.z_min, self.voxel_size[2], "z")?,
        ])
    }

    pub fn origin(&self) -> [f64; 3] {
        [-self.range, -self.range, self.z_min]
    }

    pub fn bev_dims(&self) -> Result<[usize; 2]> {
        let [w, d, _] = self.dims()?;
        Ok([w / self.bev_downsample, d / self.bev_downsample])
    }

    pub fn bev_cell_size(&self) -> [f64; 2] {
        let k = self.bev_downsample as f64;
        [self.voxel_size[0] * k, self.voxel_size[1] * k]
    }

    /// Voxel index of a point, or `None` if it is outside the range disk or
    /// the height band.
    pub fn voxel_index(&self, p: &Point) -> Option<VoxelIndex> {
        if !p.is_finite() || p.planar_range() > self.range {
            return None;
        }
        let dims = self.dims().ok()?;
        let origin = self.origin();
        let coords = p.xyz();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((coords[a] - origin[a]) / self.voxel_size[a]).floor();
            if f < 0.0 || f >= dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(VoxelIndex(idx[0], idx[1], idx[2]))
    }

    /// Empty raster covering the BEV plane.
    pub fn bev_raster(&self, channels: usize) -> Result<BevMap> {
        let [w, d] = self.bev_dims()?;
        Ok(BevMap::zeros(
            w,
            d,
            channels,
            self.bev_cell_size(),
            [-self.range, -self.range],
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelIndex(pub usize, pub usize, pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelCell {
    pub point_indices: Vec<usize>,
    pub feature: Option<Vec<f64>>,
    /// At least one point of the cell belongs to the current sweep.
    pub current_sweep: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    pub spec: GridSpec,
    pub occupied: BTreeMap<VoxelIndex, VoxelCell>,
    pub dropped: usize,
}

/// Assigns each in-range point to one voxel; points with `dt == 0` mark their
/// voxel as belonging to the current sweep.
pub fn voxelize(points: &[Point], spec: &GridSpec) -> Result<SparseVoxelGrid> {
    spec.validate()?;
    let mut occupied: BTreeMap<VoxelIndex, VoxelCell> = BTreeMap::new();
    let mut dropped = 0;
    for (i, p) in points.iter().enumerate() {
        match spec.voxel_index(p) {
            Some(idx) => {
                let cell = occupied.entry(idx).or_insert_with(|| VoxelCell {
                    point_indices: Vec::new(),
                    feature: None,
                    current_sweep: false,
                });
                cell.point_indices.push(i);
                cell.current_sweep |= p.dt == 0.0;
            }
            None => dropped += 1,
        }
    }
    Ok(SparseVoxelGrid {
        spec: *spec,
        occupied,
        dropped,
    })
}

impl SparseVoxelGrid {
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.occupied.values().map(|c| c.point_indices.len()).sum()
    }

    /// Sets each cell's feature to the mean of its points' features.
    pub fn pool_point_features(&mut self, features: &[Vec<f64>]) -> Result<()> {
        let dim = features.first().map_or(0, Vec::len);
        for cell in self.occupied.values_mut() {
            let mut acc = vec![0.0; dim];
            for &i in &cell.point_indices {
                let f = features.get(i).ok_or(Error::LengthMismatch {
                    what: "point features vs points",
                    left: features.len(),
                    right: i + 1,
                })?;
                if f.len() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "point feature of width {} (expected {dim})",
                        f.len()
                    )));
                }
                acc.iter_mut().zip(f).for_each(|(a, v)| *a += v);
            }
            let n = cell.point_indices.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            cell.feature = Some(acc);
        }
        Ok(())
    }
}

/// Voxel semantic targets: the most frequent class among current-sweep points
/// of each voxel (ties to the lowest class id); history-only voxels get the
/// ignore class.
pub fn majority_vote_labels(
    grid: &SparseVoxelGrid,
    points: &[Point],
    sem_labels: &[u16],
) -> Result<BTreeMap<VoxelIndex, u16>> {
    if sem_labels.len() != points.len() {
        return Err(Error::LengthMismatch {
            what: "semantic labels vs points",
            left: sem_labels.len(),
            right: points.len(),
        });
    }
    let mut out = BTreeMap::new();
    for (&idx, cell) in &grid.occupied {
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for &i in &cell.point_indices {
            if points[i].dt == 0.0 {
                *counts.entry(sem_labels[i]).or_default() += 1;
            }
        }
        // BTreeMap iterates ascending, so `>` keeps the lowest id on ties.
        let mut best: Option<(u16, usize)> = None;
        for (&class, &n) in &counts {
            if best.is_none_or(|(_, m)| n > m) {
                best = Some((class, n));
            }
        }
        out.insert(idx, best.map_or(IGNORE_CLASS, |(c, _)| c));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BevReducer {
    Mean,
    Max,
    Sum,
}

impl std::str::FromStr for BevReducer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(BevReducer::Mean),
            "max" => Ok(BevReducer::Max),
            "sum" => Ok(BevReducer::Sum),
            other => Err(Error::Config(format!("unknown BEV reducer `{other}`"))),
        }
    }
}

/// A dense multi-channel raster over the BEV plane. Cell (ix, iy) spans
/// `origin + [ix, ix+1) * cell_size` along x and likewise along y.
#[derive(Debug, Clone, PartialEq)]
pub struct BevMap {
    pub width: usize,
    pub depth: usize,
    pub channels: usize,
    pub cell_size: [f64; 2],
    pub origin: [f64; 2],
    data: Vec<f64>,
}

impl BevMap {
    pub fn zeros(width: usize, depth: usize, channels: usize, cell_size: [f64; 2], origin: [f64; 2]) -> Self {
        Self {
            width,
            depth,
            channels,
            cell_size,
            origin,
            data: vec![0.0; width * depth * channels],
        }
    }

    fn offset(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.width && iy < self.depth);
        (ix * self.depth + iy) * self.channels
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &[f64] {
        let o = self.offset(ix, iy);
        &self.data[o..o + self.channels]
    }

    pub fn cell_mut(&mut self, ix: usize, iy: usize) -> &mut [f64] {
        let o = self.offset(ix, iy);
        &mut self.data[o..o + self.channels]
    }

    pub fn get(&self, ix: usize, iy: usize, channel: usize) -> f64 {
        self.data[self.offset(ix, iy) + channel]
    }

    pub fn set(&mut self, ix: usize, iy: usize, channel: usize, value: f64) {
        let o = self.offset(ix, iy) + channel;
        self.data[o] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell_size[0],
            self.origin[1] + (iy as f64 + 0.5) * self.cell_size[1],
        ]
    }

    /// Cell containing planar position `xy`, if inside the raster.
    pub fn cell_of(&self, xy: [f64; 2]) -> Option<(usize, usize)> {
        let fx = ((xy[0] - self.origin[0]) / self.cell_size[0]).floor();
        let fy = ((xy[1] - self.origin[1]) / self.cell_size[1]).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.depth as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Values of one channel as a flat (ix-major) vector.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }
}

/// Collapses voxel features along height onto the BEV raster. Each BEV cell
/// reduces the features of every occupied voxel in its footprint; empty
/// columns stay zero.
pub fn flatten_bev(grid: &SparseVoxelGrid, reducer: BevReducer) -> Result<BevMap> {
    let mut dim = None;
    for cell in grid.occupied.values() {
        let f = cell
            .feature
            .as_ref()
            .ok_or_else(|| Error::DimensionMismatch("voxel without feature vector".into()))?;
        match dim {
            None => dim = Some(f.len()),
            Some(d) if d != f.len() => {
                return Err(Error::DimensionMismatch(format!(
                    "voxel feature widths {d} and {}",
                    f.len()
                )))
            }
            _ => {}
        }
    }
    let channels = dim.unwrap_or(0);
    let mut bev = grid.spec.bev_raster(channels)?;
    let ds = grid.spec.bev_downsample;
    let mut counts = vec![0usize; bev.width * bev.depth];
    for (idx, cell) in &grid.occupied {
        let (bx, by) = (idx.0 / ds, idx.1 / ds);
        let f = cell.feature.as_deref().unwrap_or(&[]);
        let n = &mut counts[bx * bev.depth + by];
        let out = bev.cell_mut(bx, by);
        for (o, &v) in out.iter_mut().zip(f) {
            *o = match reducer {
                BevReducer::Sum | BevReducer::Mean => *o + v,
                BevReducer::Max if *n == 0 => v,
                BevReducer::Max => o.max(v),
            };
        }
        *n += 1;
    }
    if reducer == BevReducer::Mean {
        for bx in 0..bev.width {
            for by in 0..bev.depth {
                let n = counts[bx * bev.depth + by];
                if n > 1 {
                    bev.cell_mut(bx, by).iter_mut().for_each(|v| *v /= n as f64);
                }
            }
        }
    }
    Ok(bev)
}

/// Bilinear interpolation between the four cell centers surrounding `xy`.
/// Near the raster border the outermost cells are replicated.
pub fn interpolate_bev(bev: &BevMap, xy: [f64; 2]) -> Result<Vec<f64>> {
    let (lx, ly) = (
        bev.origin[0] + bev.width as f64 * bev.cell_size[0],
        bev.origin[1] + bev.depth as f64 * bev.cell_size[1],
    );
    if !(xy[0] >= bev.origin[0] && xy[0] <= lx && xy[1] >= bev.origin[1] && xy[1] <= ly) {
        return Err(Error::OutOfRange { x: xy[0], y: xy[1] });
    }
    let axis = |v: f64, origin: f64, size: f64, n: usize| -> (usize, usize, f64) {
        let u = (v - origin) / size - 0.5;
        let base = u.floor();
        let frac = u - base;
        let clamp = |i: f64| i.clamp(0.0, (n - 1) as f64) as usize;
        (clamp(base), clamp(base + 1.0), frac)
    };
    let (x0, x1, fx) = axis(xy[0], bev.origin[0], bev.cell_size[0], bev.width);
    let (y0, y1, fy) = axis(xy[1], bev.origin[1], bev.cell_size[1], bev.depth);
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ];
    let mut out = vec![0.0; bev.channels];
    for (ix, iy, w) in corners {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(bev.cell(ix, iy)) {
            *o += w * v;
        }
    }
    Ok(out)
}
