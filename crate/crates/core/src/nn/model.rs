use serde::{Deserialize, Serialize};

use super::init::{glorot_uniform_init, he_uniform_init};
use super::layers::{self, ConvGeom, Mode};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Array, Element};

/// Hyperparameters of the fixed architecture
///
/// ```text
/// Conv(F, k×k, valid, ReLU) -> MaxPool 2×2 -> [Dropout]
/// Conv(F, k×k, valid, ReLU) -> MaxPool 2×2 -> [Dropout]
/// Flatten -> Dense(units, ReLU) -> Dense(classes, softmax)
/// ```
///
/// Dropout layers exist only when `dropout_rate > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub dense_units: usize,
    pub dropout_rate: f32,
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub classes: usize,
}

/// Spatial sizes after each layer, `(height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeChain {
    pub conv1: (usize, usize),
    pub pool1: (usize, usize),
    pub conv2: (usize, usize),
    pub pool2: (usize, usize),
    pub flatten: usize,
}

impl ModelSpec {
    /// 64 filters of 5×5, 160 dense units, 100×100 RGB input, 3 classes.
    pub fn tuned() -> Self {
        ModelSpec {
            conv_filters: 64,
            kernel_size: 5,
            dense_units: 160,
            dropout_rate: 0.0,
            input_height: 100,
            input_width: 100,
            input_channels: 3,
            classes: 3,
        }
    }

    pub fn with_dropout(self, rate: f32) -> Self {
        ModelSpec {
            dropout_rate: rate,
            ..self
        }
    }

    pub fn shape_chain(&self) -> Result<ShapeChain> {
        let k = self.kernel_size;
        let bad = |why: String| Err(Error::invalid(format!("model spec: {why}")));
        if k == 0 || k % 2 == 0 {
            return bad(format!("kernel size must be odd, got {k}"));
        }
        if self.conv_filters == 0 || self.dense_units == 0 || self.classes == 0 || self.input_channels == 0 {
            return bad("layer widths must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must be in [0,1), got {}", self.dropout_rate));
        }
        let conv = |(h, w): (usize, usize), layer: &str| {
            if h < k || w < k {
                return Err(Error::invalid(format!("model spec: {layer} input {h}x{w} smaller than kernel {k}")));
            }
            Ok((h - k + 1, w - k + 1))
        };
        let pool = |(h, w): (usize, usize), layer: &str| {
            if h < 2 || w < 2 {
                return Err(Error::invalid(format!("model spec: {layer} input {h}x{w} smaller than 2x2")));
            }
            Ok((h / 2, w / 2))
        };
        let conv1 = conv((self.input_height, self.input_width), "conv1")?;
        let pool1 = pool(conv1, "pool1")?;
        let conv2 = conv(pool1, "conv2")?;
        let pool2 = pool(conv2, "pool2")?;
        Ok(ShapeChain {
            conv1,
            pool1,
            conv2,
            pool2,
            flatten: pool2.0 * pool2.1 * self.conv_filters,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_chain().map(|_| ())
    }

    pub fn flatten_dim(&self) -> Result<usize> {
        Ok(self.shape_chain()?.flatten)
    }

    /// Shapes of the eight parameter tensors, in [`PARAM_NAMES`] order.
    pub fn param_shapes(&self) -> Result<[Vec<usize>; 8]> {
        let flat = self.flatten_dim()?;
        let (k, c, f, u, n) = (self.kernel_size, self.input_channels, self.conv_filters, self.dense_units, self.classes);
        Ok([
            vec![k, k, c, f],
            vec![f],
            vec![k, k, f, f],
            vec![f],
            vec![flat, u],
            vec![u],
            vec![u, n],
            vec![n],
        ])
    }

    pub fn conv_param_count(&self) -> Result<usize> {
        let s = self.param_shapes()?;
        Ok(s[..4].iter().map(|d| d.iter().product::<usize>()).sum())
    }

    pub fn dense1_param_count(&self) -> Result<usize> {
        let s = self.param_shapes()?;
        Ok(s[4..6].iter().map(|d| d.iter().product::<usize>()).sum())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|d| d.iter().product::<usize>()).sum())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_height, self.input_width, self.input_channels]
    }
}

pub const PARAM_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "dense1.weight",
    "dense1.bias",
    "dense2.weight",
    "dense2.bias",
];

/// Trainable weights. Convolution kernels are `[k, k, cin, cout]`, dense
/// kernels `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub conv1_w: Array<T>,
    pub conv1_b: Array<T>,
    pub conv2_w: Array<T>,
    pub conv2_b: Array<T>,
    pub dense1_w: Array<T>,
    pub dense1_b: Array<T>,
    pub dense2_w: Array<T>,
    pub dense2_b: Array<T>,
}

impl<T: Element> Params<T> {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        Self::from_tensors(spec, shapes.into_iter().map(Array::zeros).collect())
    }

    /// Builds params from tensors in [`PARAM_NAMES`] order, checking shapes.
    pub fn from_tensors(spec: &ModelSpec, tensors: Vec<Array<T>>) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        if tensors.len() != 8 {
            return Err(Error::invalid(format!("expected 8 parameter tensors, got {}", tensors.len())));
        }
        for ((t, want), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.shape() != want.as_slice() {
                return Err(Error::LayerShape {
                    layer: name,
                    expected: want.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Params {
            conv1_w: next(),
            conv1_b: next(),
            conv2_w: next(),
            conv2_b: next(),
            dense1_w: next(),
            dense1_b: next(),
            dense2_w: next(),
            dense2_b: next(),
        })
    }

    pub fn tensors(&self) -> [(&'static str, &Array<T>); 8] {
        [
            (PARAM_NAMES[0], &self.conv1_w),
            (PARAM_NAMES[1], &self.conv1_b),
            (PARAM_NAMES[2], &self.conv2_w),
            (PARAM_NAMES[3], &self.conv2_b),
            (PARAM_NAMES[4], &self.dense1_w),
            (PARAM_NAMES[5], &self.dense1_b),
            (PARAM_NAMES[6], &self.dense2_w),
            (PARAM_NAMES[7], &self.dense2_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Array<T>); 8] {
        [
            (PARAM_NAMES[0], &mut self.conv1_w),
            (PARAM_NAMES[1], &mut self.conv1_b),
            (PARAM_NAMES[2], &mut self.conv2_w),
            (PARAM_NAMES[3], &mut self.conv2_b),
            (PARAM_NAMES[4], &mut self.dense1_w),
            (PARAM_NAMES[5], &mut self.dense1_b),
            (PARAM_NAMES[6], &mut self.dense2_w),
            (PARAM_NAMES[7], &mut self.dense2_b),
        ]
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        for ((name, t), want) in self.tensors().into_iter().zip(spec.param_shapes()?) {
            if t.shape() != want.as_slice() {
                return Err(Error::LayerShape {
                    layer: name,
                    expected: want,
                    actual: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> Params<U> {
        Params {
            conv1_w: self.conv1_w.cast(),
            conv1_b: self.conv1_b.cast(),
            conv2_w: self.conv2_w.cast(),
            conv2_b: self.conv2_b.cast(),
            dense1_w: self.dense1_w.cast(),
            dense1_b: self.dense1_b.cast(),
            dense2_w: self.dense2_w.cast(),
            dense2_b: self.dense2_b.cast(),
        }
    }
}

impl Params<f32> {
    /// He-uniform convolution kernels, Glorot-uniform dense kernels, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let fan_in = |s: &[usize]| s[..s.len() - 1].iter().product::<usize>();
        let sub = |name: &str| seed::derive_seed(seed, name);
        let tensors = vec![
            he_uniform_init(&shapes[0], fan_in(&shapes[0]), sub(PARAM_NAMES[0]))?,
            Array::zeros(shapes[1].clone()),
            he_uniform_init(&shapes[2], fan_in(&shapes[2]), sub(PARAM_NAMES[2]))?,
            Array::zeros(shapes[3].clone()),
            glorot_uniform_init(&shapes[4], shapes[4][0], shapes[4][1], sub(PARAM_NAMES[4]))?,
            Array::zeros(shapes[5].clone()),
            glorot_uniform_init(&shapes[6], shapes[6][0], shapes[6][1], sub(PARAM_NAMES[6]))?,
            Array::zeros(shapes[7].clone()),
        ];
        Self::from_tensors(spec, tensors)
    }
}

/// Layer outputs recorded by [`forward`], batched along the first axis.
/// Convolution and dense outputs are post-ReLU; pool outputs are before
/// dropout; `flatten` is after dropout. The full convolution outputs are
/// kept only by [`forward`]; training passes leave them out.
#[derive(Debug, Clone)]
pub struct ActivationTrace<T> {
    pub input: Array<T>,
    pub conv1: Option<Array<T>>,
    pub pool1: Array<T>,
    pub conv2: Option<Array<T>>,
    pub pool2: Array<T>,
    pub flatten: Array<T>,
    pub dense1: Array<T>,
    pub output: Array<T>,
    pool1_argmax: Vec<u32>,
    pool2_argmax: Vec<u32>,
    mask1: Option<Vec<T>>,
    mask2: Option<Vec<T>>,
}

impl<T: Element> ActivationTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.input.shape()[0]
    }
}

fn check_input<T: Element>(spec: &ModelSpec, x: &Array<T>) -> Result<usize> {
    let want = spec.input_shape();
    match x.shape() {
        [b, rest @ ..] if rest == want => Ok(*b),
        other => Err(Error::LayerShape {
            layer: "input",
            expected: [&[0usize][..], &want[..]].concat(),
            actual: other.to_vec(),
        }),
    }
}

/// Full forward pass over a `[B, H, W, C]` batch. Dropout masks are drawn
/// from `seed` in train mode; eval mode ignores the seed.
pub fn forward<T: Element>(
    spec: &ModelSpec,
    params: &Params<T>,
    x: &Array<T>,
    mode: Mode,
    seed: u64,
) -> Result<(Array<T>, ActivationTrace<T>)> {
    forward_impl(spec, params, x, mode, seed, true)
}

fn forward_impl<T: Element>(
    spec: &ModelSpec,
    params: &Params<T>,
    x: &Array<T>,
    mode: Mode,
    seed: u64,
    keep_conv: bool,
) -> Result<(Array<T>, ActivationTrace<T>)> {
    let chain = spec.shape_chain()?;
    params.check(spec)?;
    let b = check_input(spec, x)?;
    let (f, k) = (spec.conv_filters, spec.kernel_size);
    let rate = f64::from(spec.dropout_rate);
    let dropout = mode == Mode::Train && rate > 0.0;

    let g1 = ConvGeom {
        h: spec.input_height,
        w: spec.input_width,
        cin: spec.input_channels,
        k,
        cout: f,
    };
    let block1 = layers::conv_pool_forward_batch(x.data(), g1, params.conv1_w.data(), params.conv1_b.data(), keep_conv);
    let pool1 = block1.pool;

    let mask1 = if dropout {
        Some(layers::dropout_mask::<T>(pool1.len(), rate, seed::derive_indexed(seed, 1))?)
    } else {
        None
    };
    let conv2_in = masked(&pool1, mask1.as_deref());
    let g2 = ConvGeom {
        h: chain.pool1.0,
        w: chain.pool1.1,
        cin: f,
        k,
        cout: f,
    };
    let block2 = layers::conv_pool_forward_batch(&conv2_in, g2, params.conv2_w.data(), params.conv2_b.data(), keep_conv);
    let pool2 = block2.pool;

    let mask2 = if dropout {
        Some(layers::dropout_mask::<T>(pool2.len(), rate, seed::derive_indexed(seed, 2))?)
    } else {
        None
    };
    let flatten = masked(&pool2, mask2.as_deref());
    let dense1 = layers::dense_forward_batch(&flatten, chain.flatten, params.dense1_w.data(), params.dense1_b.data(), true);
    let mut output = layers::dense_forward_batch(&dense1, spec.dense_units, params.dense2_w.data(), params.dense2_b.data(), false);
    output.chunks_exact_mut(spec.classes).for_each(layers::softmax_row);

    let arr = |shape: Vec<usize>, data: Vec<T>| Array::from_vec(shape, data);
    let output = arr(vec![b, spec.classes], output)?;
    let trace = ActivationTrace {
        input: x.clone(),
        conv1: block1.conv.map(|c| arr(vec![b, chain.conv1.0, chain.conv1.1, f], c)).transpose()?,
        pool1: arr(vec![b, chain.pool1.0, chain.pool1.1, f], pool1)?,
        conv2: block2.conv.map(|c| arr(vec![b, chain.conv2.0, chain.conv2.1, f], c)).transpose()?,
        pool2: arr(vec![b, chain.pool2.0, chain.pool2.1, f], pool2)?,
        flatten: arr(vec![b, chain.flatten], flatten)?,
        dense1: arr(vec![b, spec.dense_units], dense1)?,
        output: output.clone(),
        pool1_argmax: block1.argmax,
        pool2_argmax: block2.argmax,
        mask1,
        mask2,
    };
    Ok((output, trace))
}

/// Class probabilities in eval mode.
pub fn predict<T: Element>(spec: &ModelSpec, params: &Params<T>, x: &Array<T>) -> Result<Array<T>> {
    forward_impl(spec, params, x, Mode::Eval, 0, false).map(|(probs, _)| probs)
}

fn masked<T: Element>(x: &[T], mask: Option<&[T]>) -> Vec<T> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(&v, &k)| v * k).collect(),
        None => x.to_vec(),
    }
}

fn relu_grad_in_place<T: Element>(grad: &mut [T], activation: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Mean-loss gradients for every parameter, reusing the trace's dropout masks.
/// Returns the batch loss alongside the gradients.
pub fn backward<T: Element>(
    spec: &ModelSpec,
    params: &Params<T>,
    trace: &ActivationTrace<T>,
    labels: &[usize],
) -> Result<(T, Params<T>)> {
    let chain = spec.shape_chain()?;
    params.check(spec)?;
    let b = trace.batch_size();
    if labels.len() != b || trace.pool1.shape()[1..] != [chain.pool1.0, chain.pool1.1, spec.conv_filters] {
        return Err(Error::ShapeMismatch {
            op: "backward",
            left: trace.input.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let (f, k, u, n) = (spec.conv_filters, spec.kernel_size, spec.dense_units, spec.classes);

    let (loss, dlogits) = layers::sparse_ce_loss(&trace.output, labels)?;
    let (d2w, d2b, mut d_dense1) = layers::dense_backward_batch(trace.dense1.data(), u, params.dense2_w.data(), dlogits.data(), n);
    relu_grad_in_place(&mut d_dense1, trace.dense1.data());
    let (d1w, d1b, mut d_flat) = layers::dense_backward_batch(trace.flatten.data(), chain.flatten, params.dense1_w.data(), &d_dense1, u);

    if let Some(mask) = &trace.mask2 {
        d_flat.iter_mut().zip(mask).for_each(|(g, &m)| *g = *g * m);
    }
    let conv2_in = masked(trace.pool1.data(), trace.mask1.as_deref());
    let g2 = ConvGeom {
        h: chain.pool1.0,
        w: chain.pool1.1,
        cin: f,
        k,
        cout: f,
    };
    let c2 = layers::conv_pool_backward_batch(
        &conv2_in,
        g2,
        params.conv2_w.data(),
        &d_flat,
        trace.pool2.data(),
        &trace.pool2_argmax,
        true,
    );
    let mut d_pool1 = c2.input.expect("input gradient requested");
    if let Some(mask) = &trace.mask1 {
        d_pool1.iter_mut().zip(mask).for_each(|(g, &m)| *g = *g * m);
    }

    let g1 = ConvGeom {
        h: spec.input_height,
        w: spec.input_width,
        cin: spec.input_channels,
        k,
        cout: f,
    };
    let c1 = layers::conv_pool_backward_batch(
        trace.input.data(),
        g1,
        params.conv1_w.data(),
        &d_pool1,
        trace.pool1.data(),
        &trace.pool1_argmax,
        false,
    );

    let shapes = spec.param_shapes()?;
    let grads = [c1.weights, c1.bias, c2.weights, c2.bias, d1w, d1b, d2w, d2b]
        .into_iter()
        .zip(shapes)
        .map(|(data, shape)| Array::from_vec(shape, data))
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, Params::from_tensors(spec, grads)?))
}

/// Forward and backward in one call; the dropout mask is shared between them.
pub fn loss_and_gradients<T: Element>(
    spec: &ModelSpec,
    params: &Params<T>,
    x: &Array<T>,
    labels: &[usize],
    mode: Mode,
    seed: u64,
) -> Result<(T, Params<T>)> {
    let (_, trace) = forward_impl(spec, params, x, mode, seed, false)?;
    backward(spec, params, &trace, labels)
}
