//! Central finite differences in f64 against the analytic backward pass.

use xraycnn_core::nn::{self, ActivationTrace, Mode, ModelSpec, Params};
use xraycnn_core::seed;
use xraycnn_core::Tensor64;

use rand::Rng;

pub const STEP: f64 = 1e-4;

/// Miniature of the tuned network: 12×12 RGB, 8 filters of 3×3, 16 units.
pub fn mini_spec(dropout: f32) -> ModelSpec {
    ModelSpec {
        conv_filters: 8,
        kernel_size: 3,
        dense_units: 16,
        dropout_rate: dropout,
        input_height: 12,
        input_width: 12,
        input_channels: 3,
        classes: 3,
    }
}

pub struct Worst {
    pub name: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

/// `|a - n| / max(|a| + |n|, 1e-7)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-7)
}

/// ReLU on/off states and max-pool winners: the piece of the piecewise
/// smooth loss surface a point lies on.
fn pattern(t: &ActivationTrace<f64>) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for (conv, pool) in [(&t.conv1, &t.pool1), (&t.conv2, &t.pool2)] {
        let conv = conv.as_ref().expect("full trace");
        out.extend(conv.data().iter().map(|&v| u32::from(v > 0.0)));
        let &[b, h, w, c] = conv.shape() else { unreachable!() };
        let (ph, pw) = (h / 2, w / 2);
        for n in 0..b {
            for i in 0..ph {
                for j in 0..pw {
                    for ch in 0..c {
                        let m = pool.data()[((n * ph + i) * pw + j) * c + ch];
                        let win = (0..4).position(|q| {
                            let (y, x) = (2 * i + q / 2, 2 * j + q % 2);
                            conv.data()[((n * h + y) * w + x) * c + ch] == m
                        });
                        out.push(if m > 0.0 { win.unwrap() as u32 } else { 9 });
                    }
                }
            }
        }
    }
    out.extend(t.dense1.data().iter().map(|&v| u32::from(v > 0.0)));
    out
}

fn loss(spec: &ModelSpec, p: &Params<f64>, x: &Tensor64, labels: &[usize], seed: u64) -> (f64, Vec<u32>) {
    let (probs, trace) = nn::forward(spec, p, x, Mode::Train, seed).unwrap();
    (nn::sparse_ce_loss(&probs, labels).unwrap().0, pattern(&trace))
}

/// Checks every parameter of a freshly initialized model on a random batch
/// and returns the largest relative error seen.
///
/// A difference quotient is only a valid oracle when `p ± STEP` stays on the
/// same smooth piece as `p`. Fixtures where some perturbation flips a ReLU or
/// a pool winner are redrawn from the next derived seed.
pub fn check(spec: &ModelSpec, seed_value: u64) -> Worst {
    for attempt in 0..64 {
        if let Some(w) = check_fixture(spec, seed::derive_indexed(seed_value, attempt)) {
            return w;
        }
    }
    panic!("no kink-free fixture found for seed {seed_value}");
}

fn check_fixture(spec: &ModelSpec, seed_value: u64) -> Option<Worst> {
    let mut rng = seed::rng(seed_value);
    let mut params = Params::<f32>::init(spec, seed_value).unwrap().cast::<f64>();
    // non-zero biases so every bias gradient path is exercised
    for (name, t) in params.tensors_mut() {
        if name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        }
    }
    let b = 2;
    let [h, w, c] = spec.input_shape();
    let x = Tensor64::from_vec(
        [b, h, w, c],
        (0..b * h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..b).map(|i| i % spec.classes).collect();
    let drop_seed = seed_value.wrapping_mul(31) + 7;

    let (_, grads) = nn::loss_and_gradients(spec, &params, &x, &labels, Mode::Train, drop_seed).unwrap();
    let (_, base) = loss(spec, &params, &x, &labels, drop_seed);
    let mut worst = Worst {
        name: "",
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        rel: 0.0,
    };
    let grad_list: Vec<(&'static str, Vec<f64>)> =
        grads.tensors().iter().map(|(n, t)| (*n, t.data().to_vec())).collect();
    for (slot, (name, analytic)) in grad_list.iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[slot].1.data_mut()[i] += STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[slot].1.data_mut()[i] -= STEP;
            let (up, up_pattern) = loss(spec, &plus, &x, &labels, drop_seed);
            let (down, down_pattern) = loss(spec, &minus, &x, &labels, drop_seed);
            if up_pattern != base || down_pattern != base {
                return None;
            }
            let numeric = (up - down) / (2.0 * STEP);
            let rel = relative_error(a, numeric);
            if rel > worst.rel {
                worst = Worst {
                    name,
                    index: i,
                    analytic: a,
                    numeric,
                    rel,
                };
            }
        }
    }
    Some(worst)
}
