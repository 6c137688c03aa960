mod support;

use support::gradcheck::{self, mini_spec};
use xraycnn_core::nn::{self, Mode, ModelSpec, Params};
use xraycnn_core::{seed, Tensor};

use rand::Rng;

fn random_batch(spec: &ModelSpec, b: usize, seed_value: u64) -> Tensor {
    let mut rng = seed::rng(seed_value);
    let [h, w, c] = spec.input_shape();
    Tensor::from_vec([b, h, w, c], (0..b * h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f32>>()).unwrap()
}

#[test]
fn tuned_shape_chain() {
    let spec = ModelSpec::tuned();
    let chain = spec.shape_chain().unwrap();
    assert_eq!(chain.conv1, (96, 96));
    assert_eq!(chain.pool1, (48, 48));
    assert_eq!(chain.conv2, (44, 44));
    assert_eq!(chain.pool2, (22, 22));
    assert_eq!(chain.flatten, 30_976);
    assert_eq!(spec.dense1_param_count().unwrap(), 4_956_320);
    assert_eq!(spec.conv_param_count().unwrap(), 107_328);
    assert_eq!(spec.param_count().unwrap(), 5_064_131);
}

#[test]
fn k3_spec_shapes() {
    let spec = ModelSpec {
        kernel_size: 3,
        ..ModelSpec::tuned()
    };
    // 100 -> 98 -> 49 -> 47 -> 23
    assert_eq!(spec.flatten_dim().unwrap(), 23 * 23 * 64);
    assert!(ModelSpec {
        kernel_size: 4,
        ..spec
    }
    .validate()
    .is_err());
}

#[test]
fn zero_params_give_uniform_output() {
    let spec = mini_spec(0.0);
    let p = Params::<f32>::zeros(&spec).unwrap();
    let probs = nn::predict(&spec, &p, &random_batch(&spec, 3, 1)).unwrap();
    assert_eq!(probs.shape(), &[3, 3]);
    assert!(probs.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-7));
}

#[test]
fn softmax_rows_sum_to_one_and_batch_independent() {
    let spec = mini_spec(0.0);
    let p = Params::init(&spec, 11).unwrap();
    let x = random_batch(&spec, 5, 2);
    let probs = nn::predict(&spec, &p, &x).unwrap();
    let per = x.len() / 5;
    for i in 0..5 {
        let row = &probs.data()[i * 3..i * 3 + 3];
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let single = Tensor::from_vec([1, 12, 12, 3], x.data()[i * per..(i + 1) * per].to_vec()).unwrap();
        let alone = nn::predict(&spec, &p, &single).unwrap();
        for (a, b) in alone.data().iter().zip(row) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn eval_mode_ignores_dropout_seed() {
    let spec = mini_spec(0.5);
    let p = Params::init(&spec, 4).unwrap();
    let x = random_batch(&spec, 2, 3);
    let (a, _) = nn::forward(&spec, &p, &x, Mode::Eval, 1).unwrap();
    let (b, _) = nn::forward(&spec, &p, &x, Mode::Eval, 2).unwrap();
    assert_eq!(a, b);
    let (c, _) = nn::forward(&spec, &p, &x, Mode::Train, 1).unwrap();
    assert_ne!(a, c);
}

#[test]
fn output_bias_gradient_closed_form() {
    let spec = mini_spec(0.0);
    let p = Params::init(&spec, 5).unwrap();
    let x = random_batch(&spec, 4, 6);
    let labels = [0, 2, 1, 2];
    let probs = nn::predict(&spec, &p, &x).unwrap();
    let (_, g) = nn::loss_and_gradients(&spec, &p, &x, &labels, Mode::Eval, 0).unwrap();
    for c in 0..3 {
        let want: f32 = (0..4)
            .map(|i| probs.data()[i * 3 + c] - if labels[i] == c { 1.0 } else { 0.0 })
            .sum::<f32>()
            / 4.0;
        assert!((g.dense2_b.data()[c] - want).abs() < 1e-6);
    }
}

#[test]
fn layer_shape_errors() {
    let spec = mini_spec(0.0);
    let p = Params::init(&spec, 5).unwrap();
    let wrong = Tensor::zeros([1, 10, 12, 3]);
    assert!(nn::predict(&spec, &p, &wrong).is_err());
    let other = Params::<f32>::zeros(&ModelSpec {
        dense_units: 4,
        ..spec
    })
    .unwrap();
    assert!(nn::predict(&spec, &other, &random_batch(&spec, 1, 0)).is_err());
    let x = random_batch(&spec, 2, 0);
    assert!(nn::loss_and_gradients(&spec, &p, &x, &[0], Mode::Eval, 0).is_err());
    assert!(nn::loss_and_gradients(&spec, &p, &x, &[0, 3], Mode::Eval, 0).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    for s in 0..5 {
        let w = gradcheck::check(&mini_spec(0.0), s);
        eprintln!("seed {s}: worst {} rel {:.2e}", w.name, w.rel);
        assert!(
            w.rel < 1e-4,
            "seed {s}: {}[{}] analytic {} numeric {} rel {}",
            w.name,
            w.index,
            w.analytic,
            w.numeric,
            w.rel
        );
    }
}

#[test]
fn gradients_match_with_dropout() {
    let w = gradcheck::check(&mini_spec(0.3), 9);
    assert!(w.rel < 1e-4, "{}[{}] rel {}", w.name, w.index, w.rel);
}
