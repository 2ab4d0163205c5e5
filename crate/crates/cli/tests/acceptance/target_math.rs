//! Heatmap and velocity targets against their closed forms.

use modal_panoptic::synth::synth_taxonomy;
use modal_panoptic::targets::{render_bev_targets, velocity_target, InstanceTrajectory, ModalInstance, Vec3};
use modal_panoptic::voxel::GridSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Verdict;

const TOL: f64 = 1e-9;

fn instance(id: u32, center: Vec3) -> ModalInstance {
    ModalInstance {
        instance_id: id,
        class_id: 1,
        center,
        box_center: center,
        extent: [1.0, 1.0, 0.8],
        point_count: 20,
        sweep_index: 0,
        sweep_timestamp: 0.0,
    }
}

/// Peak value and the Gaussian at σ (and at one off-axis cell) for random
/// centers and σ equal to a whole number of cells. Returns the worst error.
fn heatmaps(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let spec = GridSpec::default();
    let tax = synth_taxonomy();
    let mut peak_err: f64 = 0.0;
    let mut gauss_err: f64 = 0.0;
    for _ in 0..50 {
        let center = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), -1.0];
        let cell = spec.bev_cell_size()[0];
        let m = rng.random_range(2..=5usize);
        let sigma = m as f64 * cell;
        let size = [sigma, rng.random_range(0.1..sigma), 0.8];
        let t = render_bev_targets(&[instance(1, center)], &[size], &[[0.0, 0.0]], &spec, &tax).expect("render");
        let (cx, cy) = t.heatmaps.cell_of([center[0], center[1]]).expect("inside");
        peak_err = peak_err.max((t.heatmaps.get(cx, cy, 0) - 1.0).abs());
        let at_sigma = [
            t.heatmaps.get(cx + m, cy, 0),
            t.heatmaps.get(cx - m, cy, 0),
            t.heatmaps.get(cx, cy + m, 0),
            t.heatmaps.get(cx, cy - m, 0),
        ];
        for v in at_sigma {
            gauss_err = gauss_err.max((v - (-0.5f64).exp()).abs());
        }
        let diag = t.heatmaps.get(cx + 1, cy + 1, 0);
        let want = (-(2.0 * cell * cell) / (2.0 * sigma * sigma)).exp();
        gauss_err = gauss_err.max((diag - want).abs());
    }
    (peak_err, gauss_err)
}

/// Rigidly translated point clusters: the centered difference at interior
/// sweeps and the one-sided one at the ends equal the true velocity.
fn velocities(rng: &mut ChaCha8Rng) -> (f64, bool) {
    let period = 0.1;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let v = [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)];
        let base: Vec<Vec3> = (0..rng.random_range(5..40))
            .map(|_| [rng.random_range(5.0..9.0), rng.random_range(-3.0..1.0), rng.random_range(-1.5..0.0)])
            .collect();
        let sweeps = rng.random_range(3..=10usize);
        let records: Vec<ModalInstance> = (0..sweeps)
            .map(|k| {
                let t = k as f64 * period;
                let pts: Vec<Vec3> = base.iter().map(|p| [p[0] + v[0] * t, p[1] + v[1] * t, p[2]]).collect();
                ModalInstance::from_points(4, 1, &pts, k, t).expect("instance")
            })
            .collect();
        let traj = InstanceTrajectory::new(records).expect("trajectory");
        for k in 0..sweeps {
            let got = velocity_target(&traj, k, period);
            worst = worst.max((got[0] - v[0]).abs()).max((got[1] - v[1]).abs());
        }
    }
    let single = InstanceTrajectory::new(vec![ModalInstance {
        sweep_index: 3,
        ..instance(9, [4.0, 2.0, -1.0])
    }])
    .expect("trajectory");
    let zero = (0..6).all(|k| velocity_target(&single, k, period) == [0.0, 0.0]);
    (worst, zero)
}

pub fn run() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (peak_err, gauss_err) = heatmaps(&mut rng);
    let (vel_err, single_zero) = velocities(&mut rng);
    let pass = peak_err == 0.0 && gauss_err <= TOL && vel_err <= TOL && single_zero;
    Verdict::new(
        pass,
        format!(
            "peak error {peak_err:.1e}, Gaussian error {gauss_err:.1e}, velocity error {vel_err:.1e}, single observation zero: {single_zero}"
        ),
    )
}
