//! Adam with bias correction.

use std::path::Path;

use crate::error::{Error, FormatFault, Result};
use crate::nn::{decode_tensor_file, encode_tensor_file, ModelSpec, Params};
use crate::tensor::{Element, Tensor};

const CHECKPOINT_MAGIC: &[u8; 4] = b"FADM";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(spec: &ModelSpec, config: AdamConfig) -> Result<Self> {
        Ok(AdamState {
            config,
            m: Params::zeros(spec)?,
            v: Params::zeros(spec)?,
            step: 0,
        })
    }

    /// One update:
    ///
    /// ```text
    /// m <- b1 m + (1 - b1) g        v <- b2 v + (1 - b2) g^2
    /// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    /// ```
    ///
    /// Gradients are checked for finiteness before anything is modified.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>) -> Result<()> {
        for ((name, p), ((_, g), ((_, m), (_, v)))) in params
            .tensors()
            .into_iter()
            .zip(grads.tensors().into_iter().zip(self.m.tensors().into_iter().zip(self.v.tensors())))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
                return Err(Error::ShapeMismatch {
                    op: name,
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(name));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one_b1 = T::from_f64(1.0 - c.beta1);
        let one_b2 = T::from_f64(1.0 - c.beta2);
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.learning_rate);
        let eps = T::from_f64(c.epsilon);

        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()))
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

impl AdamState<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.config;
        let fields = vec![
            ("step".to_string(), self.step.to_string()),
            ("learning_rate".to_string(), c.learning_rate.to_string()),
            ("beta1".to_string(), c.beta1.to_string()),
            ("beta2".to_string(), c.beta2.to_string()),
            ("epsilon".to_string(), c.epsilon.to_string()),
        ];
        let names: Vec<String> = self
            .m
            .tensors()
            .iter()
            .map(|(n, _)| format!("m.{n}"))
            .chain(self.v.tensors().iter().map(|(n, _)| format!("v.{n}")))
            .collect();
        let tensors: Vec<&Tensor> = self
            .m
            .tensors()
            .into_iter()
            .chain(self.v.tensors())
            .map(|(_, t)| t)
            .collect();
        let table: Vec<(&str, &Tensor)> = names.iter().map(String::as_str).zip(tensors).collect();
        encode_tensor_file(CHECKPOINT_MAGIC, &fields, &table)
    }

    pub fn from_bytes(spec: &ModelSpec, bytes: &[u8]) -> Result<Self> {
        let (fields, tensors) = decode_tensor_file(CHECKPOINT_MAGIC, bytes)?;
        let get = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::format(FormatFault::BadHeader, format!("missing {key}")))
        };
        let float = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| Error::format(FormatFault::BadHeader, format!("invalid {key}")))
        };
        let config = AdamConfig {
            learning_rate: float("learning_rate")?,
            beta1: float("beta1")?,
            beta2: float("beta2")?,
            epsilon: float("epsilon")?,
        };
        let step = get("step")?
            .parse()
            .map_err(|_| Error::format(FormatFault::BadHeader, "invalid step"))?;
        if tensors.len() != 16 {
            return Err(Error::format(FormatFault::BadHeader, "expected 16 moment tensors"));
        }
        let mut tensors: Vec<Tensor> = tensors.into_iter().map(|(_, t)| t).collect();
        let v = tensors.split_off(8);
        Ok(AdamState {
            config,
            m: Params::from_tensors(spec, tensors)?,
            v: Params::from_tensors(spec, v)?,
            step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(spec: &ModelSpec, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(spec, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Array;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            conv_filters: 2,
            kernel_size: 3,
            dense_units: 4,
            dropout_rate: 0.0,
            input_height: 10,
            input_width: 10,
            input_channels: 1,
            classes: 3,
        }
    }

    fn filled(spec: &ModelSpec, value: f64) -> Params<f64> {
        let mut p = Params::<f64>::zeros(spec).unwrap();
        for (_, t) in p.tensors_mut() {
            t.fill(value);
        }
        p
    }

    /// Hand-rolled scalar Adam, independent of the Params plumbing.
    fn scalar_adam(mut p: f64, grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-7f64);
        let (mut m, mut v) = (0.0, 0.0);
        let mut out = Vec::new();
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(p);
        }
        out
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let spec = tiny_spec();
        let mut p = filled(&spec, 0.25);
        let before = p.clone();
        let mut s = AdamState::new(&spec, AdamConfig::new(1e-3)).unwrap();
        s.step(&mut p, &filled(&spec, 0.0)).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn two_steps_match_scalar_oracle() {
        let spec = tiny_spec();
        let mut p = filled(&spec, 0.0);
        let mut s = AdamState::new(&spec, AdamConfig::new(0.1)).unwrap();
        let want = scalar_adam(0.0, &[1.0, 1.0], 0.1);
        for w in want {
            s.step(&mut p, &filled(&spec, 1.0)).unwrap();
            for (_, t) in p.tensors() {
                assert!(t.data().iter().all(|&x| (x - w).abs() < 1e-12));
            }
        }
        assert_eq!(s.step, 2);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let spec = tiny_spec();
        for g in [1e-3, -0.02, 0.5, 7.0, -300.0] {
            for scale in [1.0, 10.0] {
                let mut p = filled(&spec, 0.0);
                let mut s = AdamState::new(&spec, AdamConfig::new(1e-4)).unwrap();
                s.step(&mut p, &filled(&spec, g * scale)).unwrap();
                let delta = p.conv1_b.data()[0];
                assert!((delta.abs() / 1e-4 - 1.0).abs() < 1e-3, "g={g} delta={delta}");
                assert_eq!(delta.signum(), -g.signum());
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_mismatched_gradients() {
        let spec = tiny_spec();
        let mut p = filled(&spec, 0.0);
        let mut s = AdamState::new(&spec, AdamConfig::new(1e-3)).unwrap();
        let mut g = filled(&spec, 0.1);
        g.dense1_w.data_mut()[3] = f64::NAN;
        let err = s.step(&mut p, &g).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient("dense1.weight")));
        assert_eq!(s.step, 0);

        let mut bad = filled(&spec, 0.1);
        bad.dense2_b = Array::zeros([4]);
        assert!(s.step(&mut p, &bad).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = tiny_spec();
        let mut p = Params::init(&spec, 1).unwrap();
        let mut s = AdamState::new(&spec, AdamConfig::new(1e-4)).unwrap();
        let mut g = Params::init(&spec, 2).unwrap();
        g.conv1_b.fill(0.3);
        s.step(&mut p, &g).unwrap();
        s.step(&mut p, &g).unwrap();
        let bytes = s.to_bytes();
        let back = AdamState::from_bytes(&spec, &bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        assert!(AdamState::from_bytes(&spec, &bytes[..bytes.len() - 1]).is_err());
    }
}
