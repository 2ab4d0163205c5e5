//! Analytic loss and network gradients against central finite differences.

use modal_panoptic::losses::{bce_loss, focal_loss, l1_loss, masked_cross_entropy, FocalParams};
use modal_panoptic::nn::MlpModel;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Verdict;

const SEEDS: u64 = 20;
const REL_TOL: f64 = 1e-4;
const H: f64 = 1e-6;
/// Entries smaller than this fraction of the largest gradient entry are
/// compared against that floor instead of their own size. Without it, exact
/// zeros (biases feeding batch norm) and tiny focal terms would measure only
/// finite-difference round-off.
const SCALE_FLOOR: f64 = 1e-3;

/// Worst relative error of `grad` against central differences of `f` at `x`.
fn check(x: &[f64], grad: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let floor = SCALE_FLOOR * grad.iter().fold(0.0, |m: f64, g| m.max(g.abs()));
    let rel_err = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor).max(1e-300);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[i] += H;
        down[i] -= H;
        let numeric = (f(&up) - f(&down)) / (2.0 * H);
        worst = worst.max(rel_err(grad[i], numeric));
    }
    worst
}

fn probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.02..0.98)).collect()
}

fn focal(rng: &mut ChaCha8Rng) -> f64 {
    let pred = probs(rng, 40);
    let target: Vec<f64> = (0..40)
        .map(|_| if rng.random_bool(0.15) { 1.0 } else { rng.random_range(0.0..0.99) })
        .collect();
    let params = FocalParams::default();
    let g = focal_loss(&pred, &target, params).expect("focal").gradient;
    check(&pred, &g, &|p| focal_loss(p, &target, params).expect("focal").value)
}

fn cross_entropy(rng: &mut ChaCha8Rng) -> f64 {
    let (n, k) = (12, 5);
    let logits: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let target: Vec<Option<usize>> = (0..n)
        .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..k)))
        .collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    let g = masked_cross_entropy(&logits, k, &target, &mask).expect("ce").gradient;
    check(&logits, &g, &|l| masked_cross_entropy(l, k, &target, &mask).expect("ce").value)
}

fn l1(rng: &mut ChaCha8Rng) -> f64 {
    let target: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
    // Keep every residual well away from the kink at zero.
    let pred: Vec<f64> = target
        .iter()
        .map(|y| {
            let d = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) {
                y + d
            } else {
                y - d
            }
        })
        .collect();
    let mask: Vec<bool> = (0..30).map(|i| i == 0 || rng.random_bool(0.6)).collect();
    let g = l1_loss(&pred, &target, &mask).expect("l1").gradient;
    check(&pred, &g, &|p| l1_loss(p, &target, &mask).expect("l1").value)
}

fn bce(rng: &mut ChaCha8Rng) -> f64 {
    let pred = probs(rng, 30);
    let target: Vec<f64> = (0..30)
        .map(|_| match rng.random_range(0..3) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random(),
        })
        .collect();
    let g = bce_loss(&pred, &target).expect("bce").gradient;
    check(&pred, &g, &|p| bce_loss(p, &target).expect("bce").value)
}

/// Every parameter of a batch-normalized membership MLP under BCE.
fn mlp(rng: &mut ChaCha8Rng) -> f64 {
    let (batch, width) = (9, 5);
    let model = MlpModel::point_seg_mlp(width, 6, 3, rng).expect("model");
    let x = Array2::from_shape_fn((batch, width), |_| rng.random_range(-1.5..1.5));
    let y: Vec<f64> = (0..batch).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    let loss = |m: &MlpModel| {
        let out = m.forward_train(x.view()).expect("forward").0;
        bce_loss(out.as_slice().expect("contiguous"), &y).expect("bce")
    };
    let (out, cache) = model.forward_train(x.view()).expect("forward");
    let upstream = bce_loss(out.as_slice().expect("contiguous"), &y).expect("bce").gradient;
    let upstream = Array2::from_shape_vec((batch, 1), upstream).expect("shape");
    let grads = model.backward(&cache, upstream.view()).expect("backward");
    let base = model.params();
    check(&base, &grads.params, &|p| {
        let mut m = model.clone();
        m.set_params(p).expect("params");
        loss(&m).value
    })
}

pub fn run() -> Verdict {
    let checks: [(&str, fn(&mut ChaCha8Rng) -> f64); 5] = [
        ("focal", focal),
        ("masked-ce", cross_entropy),
        ("l1", l1),
        ("bce", bce),
        ("mlp", mlp),
    ];
    let mut worst = [0.0f64; 5];
    for seed in 0..SEEDS {
        for (i, (_, f)) in checks.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + i as u64);
            worst[i] = worst[i].max(f(&mut rng));
        }
    }
    let pass = worst.iter().all(|w| *w < REL_TOL);
    let detail: Vec<String> = checks
        .iter()
        .zip(&worst)
        .map(|((name, _), w)| format!("{name} {w:.1e}"))
        .collect();
    Verdict::new(pass, format!("worst relative error over {SEEDS} seeds: {}", detail.join(", ")))
}
