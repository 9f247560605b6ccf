#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cvt::neuralnet::MlpModel;

pub fn iris_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/iris.csv")
}

/// Quadratic pair-counting Kendall τ-b. Returns `None` when a margin is
/// constant.
pub fn brute_force_tau(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut s, mut tx, mut ty) = (0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let dy = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            s += dx * dy;
            tx += (dx == 0) as u64;
            ty += (dy == 0) as u64;
        }
    }
    let n0 = (n * (n - 1) / 2) as u64;
    if tx == n0 || ty == n0 {
        return None;
    }
    Some(cvt::depstats::tau_b_from_counts(s, n0, tx, ty))
}

/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Largest relative error between backprop and central differences over
/// every parameter of `model` on the given batch.
pub fn worst_gradient_error(model: &MlpModel, inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let grads = model.gradients(inputs, labels).unwrap();
    let analytic: Vec<f64> = grads.values().copied().collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        *plus.params_mut().nth(k).unwrap() += h;
        let mut minus = model.clone();
        *minus.params_mut().nth(k).unwrap() -= h;
        let numeric =
            (plus.loss(inputs, labels).unwrap() - minus.loss(inputs, labels).unwrap()) / (2.0 * h);
        worst = worst.max(relative_error(*a, numeric));
    }
    worst
}
