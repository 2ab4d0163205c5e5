use super::{ModalInstance, Vec3};
use crate::error::{Error, Result};
use crate::types::Taxonomy;
use crate::voxel::{BevMap, GridSpec};

/// Lower bound of the heatmap σ in BEV cells.
pub const SIGMA_MIN_CELLS: f64 = 2.0;

/// Gaussian support radius in units of σ.
const TRUNCATE_SIGMAS: f64 = 3.0;

/// Dense BEV supervision for one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BevTargets {
    /// One channel per thing class.
    pub heatmaps: BevMap,
    pub height: BevMap,
    pub velocity: BevMap,
    /// Modal center minus the center cell's center (2 channels).
    pub offset: BevMap,
    /// Half-extent of the RoI box around the modal center (3 channels).
    pub extent: BevMap,
    /// ix-major, one flag per cell.
    pub valid_mask: Vec<bool>,
}

impl BevTargets {
    pub fn is_valid(&self, ix: usize, iy: usize) -> bool {
        self.valid_mask[ix * self.heatmaps.depth + iy]
    }

    pub fn valid_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let depth = self.heatmaps.depth;
        self.valid_mask
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(move |(i, _)| (i / depth, i % depth))
    }
}

/// Everything the renderer needs about one object.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderInstance {
    pub channel: usize,
    pub center: Vec3,
    /// Planar half-size that sets σ.
    pub planar_extent: [f64; 2],
    pub roi_extent: Vec3,
    pub velocity: [f64; 2],
    /// Heatmap value at the center cell; 1 for ground truth.
    pub peak: f64,
}

/// Renders ground-truth targets for the instances of one sweep. `sizes` are
/// the strategy's training half-sizes, `velocities` the planar velocity
/// targets; all three slices are parallel.
pub fn render_bev_targets(
    instances: &[ModalInstance],
    sizes: &[Vec3],
    velocities: &[[f64; 2]],
    spec: &GridSpec,
    taxonomy: &Taxonomy,
) -> Result<BevTargets> {
    if sizes.len() != instances.len() {
        return Err(Error::LengthMismatch {
            what: "instances vs sizes",
            left: instances.len(),
            right: sizes.len(),
        });
    }
    if velocities.len() != instances.len() {
        return Err(Error::LengthMismatch {
            what: "instances vs velocities",
            left: instances.len(),
            right: velocities.len(),
        });
    }
    let items = instances
        .iter()
        .zip(sizes)
        .zip(velocities)
        .map(|((inst, size), v)| {
            let channel = taxonomy
                .thing_channel(inst.class_id)
                .ok_or(Error::UnknownClass(inst.class_id))?;
            Ok(RenderInstance {
                channel,
                center: inst.center,
                planar_extent: [size[0], size[1]],
                roi_extent: inst.roi_extent(*size),
                velocity: *v,
                peak: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    render_instances(&items, spec, taxonomy.thing_ids().len())
}

/// Renders arbitrary objects into `k` heatmap channels. The Gaussian of each
/// object peaks at the center of the cell holding its center. Heatmaps combine
/// by per-cell max; when two objects share a center cell the one with the
/// higher peak (first on ties) owns the regression targets.
pub fn render_instances(items: &[RenderInstance], spec: &GridSpec, k: usize) -> Result<BevTargets> {
    let mut heatmaps = spec.bev_raster(k)?;
    let mut height = spec.bev_raster(1)?;
    let mut velocity = spec.bev_raster(2)?;
    let mut offset = spec.bev_raster(2)?;
    let mut extent = spec.bev_raster(3)?;
    let (w, d) = (heatmaps.width, heatmaps.depth);
    let mut valid_mask = vec![false; w * d];
    let mut owner_peak = vec![f64::NEG_INFINITY; w * d];
    let cell = heatmaps.cell_size;
    let sigma_min = SIGMA_MIN_CELLS * cell[0].min(cell[1]);

    for it in items {
        if it.channel >= k {
            return Err(Error::Domain(format!("heatmap channel {} >= {k}", it.channel)));
        }
        if !(0.0..=1.0).contains(&it.peak) {
            return Err(Error::Domain(format!("heatmap peak {} outside [0, 1]", it.peak)));
        }
        if !it.center.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("instance center"));
        }
        let xy = [it.center[0], it.center[1]];
        if xy[0].hypot(xy[1]) > spec.range {
            return Err(Error::OutOfRange { x: xy[0], y: xy[1] });
        }
        let (cx, cy) = heatmaps
            .cell_of(xy)
            .ok_or(Error::OutOfRange { x: xy[0], y: xy[1] })?;
        let peak_at = heatmaps.cell_center(cx, cy);
        let sigma = it.planar_extent[0].max(it.planar_extent[1]).max(sigma_min);
        let reach = TRUNCATE_SIGMAS * sigma;
        let rx = (reach / cell[0]).ceil() as usize;
        let ry = (reach / cell[1]).ceil() as usize;
        for ix in cx.saturating_sub(rx)..=(cx + rx).min(w - 1) {
            for iy in cy.saturating_sub(ry)..=(cy + ry).min(d - 1) {
                let c = heatmaps.cell_center(ix, iy);
                let d2 = (c[0] - peak_at[0]).powi(2) + (c[1] - peak_at[1]).powi(2);
                if d2 > reach * reach {
                    continue;
                }
                let g = if ix == cx && iy == cy {
                    it.peak
                } else {
                    it.peak * (-d2 / (2.0 * sigma * sigma)).exp()
                };
                let slot = &mut heatmaps.cell_mut(ix, iy)[it.channel];
                *slot = slot.max(g);
            }
        }
        let flat = cx * d + cy;
        if it.peak > owner_peak[flat] {
            owner_peak[flat] = it.peak;
            valid_mask[flat] = true;
            height.set(cx, cy, 0, it.center[2]);
            velocity.cell_mut(cx, cy).copy_from_slice(&it.velocity);
            offset
                .cell_mut(cx, cy)
                .copy_from_slice(&[xy[0] - peak_at[0], xy[1] - peak_at[1]]);
            extent.cell_mut(cx, cy).copy_from_slice(&it.roi_extent);
        }
    }
    Ok(BevTargets {
        heatmaps,
        height,
        velocity,
        offset,
        extent,
        valid_mask,
    })
}
