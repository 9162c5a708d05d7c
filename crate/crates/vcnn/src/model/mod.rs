//! Declarative sequential models: layer specifications, the exact 2D and 3D
//! classifier builders, shape inference, parameter counting, initialization,
//! batch execution, and checkpoint persistence.

mod builders;
mod checkpoint;
mod exec;
mod shape;

pub use builders::{
    build_model_2d, build_model_3d, build_model_3d_small, model_2d_spec, model_3d_small_spec,
    model_3d_spec, model_spec_by_id, MODEL_IDS,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, peek_checkpoint_header, CHECKPOINT_MAGIC};
pub use exec::{BatchCaches, Gradients, LayerGrads};
pub use shape::{alloc_params, count_params, infer_shapes, ParamCountReport};

use crate::error::{Error, Result};
use crate::layers::{BatchNormParams, ConvParams, Padding};
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Class labels in cohort order (index 0, 1, 2).
pub const CLASS_NAMES: [&str; 3] = ["newborn", "1yr", "3yr"];

/// One layer of a sequential model.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Layer type plus its type-specific configuration.
///
/// `relu` on convolution and dense layers folds the activation into the
/// layer, which is how the reference tables account for it (activations do
/// not appear as rows of their own).
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        kernel: [usize; 2],
        out_channels: usize,
        padding: Padding,
        relu: bool,
    },
    Conv3d {
        kernel: [usize; 3],
        out_channels: usize,
        padding: Padding,
        relu: bool,
    },
    BatchNorm,
    MaxPool {
        pool: Vec<usize>,
        strides: Vec<usize>,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    Flatten,
    Dense {
        units: usize,
        relu: bool,
    },
}

/// Parameters owned by one layer, aligned index-for-index with the layer
/// list of a [`Model`].
#[derive(Debug, Clone)]
pub enum LayerParams<T> {
    None,
    Conv(ConvParams<T>),
    BatchNorm(BatchNormParams<T>),
    Dense { weights: Tensor<T>, bias: Tensor<T> },
}

/// A sequential model with allocated parameters.
///
/// Parameters are immutable during eval-mode forward passes; training
/// requires exclusive access.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    id: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams<T>>,
    class_names: Vec<String>,
    seed: u64,
    epoch: u64,
}

impl<T: Scalar> Model<T> {
    /// Builds a model from a layer list, validating that names are unique,
    /// shape inference succeeds end to end, and the final layer emits
    /// exactly 3 values. Parameters are allocated zeroed (batch-norm gets
    /// its conventional defaults); call [`Model::init_params`] before
    /// training.
    pub fn new(
        id: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            if layers[..i].iter().any(|l| l.name == layer.name) {
                return Err(Error::Argument(format!(
                    "duplicate layer name \"{}\"",
                    layer.name
                )));
            }
        }
        let shapes = shape::infer_shapes(&input_shape, &layers)?;
        match shapes.last() {
            Some((_, s)) if s == &[3usize] => {}
            Some((name, s)) => {
                return Err(Error::Shape(format!(
                    "final layer \"{name}\" outputs shape {s:?}, expected [3]"
                )))
            }
            None => return Err(Error::Argument("model has no layers".into())),
        }
        let params = shape::alloc_params(&input_shape, &layers)?;
        Ok(Self {
            id: id.into(),
            input_shape,
            layers,
            params,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            epoch: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
    }

    /// Per-layer output shapes for this model's input.
    pub fn output_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        shape::infer_shapes(&self.input_shape, &self.layers)
    }

    /// Per-layer parameter counts and trainable/non-trainable totals,
    /// computed from the specs alone.
    pub fn param_counts(&self) -> Result<ParamCountReport> {
        shape::count_params(&self.input_shape, &self.layers)
    }

    /// He-uniform initialization: conv and dense weights are drawn from
    /// U(-b, b) with b = sqrt(6 / fan_in), biases are zero, batch-norm gets
    /// gamma 1 / beta 0 / moving mean 0 / moving var 1. Deterministic per
    /// seed; layers consume one shared stream in order.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Tensor<T>, bound: f64| {
            for v in t.data_mut() {
                let u: f64 = rng.gen();
                *v = T::from_f64((2.0 * u - 1.0) * bound);
            }
        };
        for params in &mut self.params {
            match params {
                LayerParams::None => {}
                LayerParams::Conv(p) => {
                    let ks = p.kernel.shape();
                    let fan_in: usize = ks[..ks.len() - 1].iter().product();
                    fill(&mut p.kernel, (6.0 / fan_in as f64).sqrt());
                    p.bias = Tensor::zeros(&[p.c_out()]).expect("c_out >= 1");
                }
                LayerParams::BatchNorm(p) => {
                    let c = p.channels();
                    p.gamma = Tensor::full(&[c], T::one()).expect("c >= 1");
                    p.beta = Tensor::zeros(&[c]).expect("c >= 1");
                    p.moving_mean = Tensor::zeros(&[c]).expect("c >= 1");
                    p.moving_var = Tensor::full(&[c], T::one()).expect("c >= 1");
                }
                LayerParams::Dense { weights, bias } => {
                    let fan_in = weights.shape()[0];
                    fill(weights, (6.0 / fan_in as f64).sqrt());
                    *bias = Tensor::zeros(&[bias.len()]).expect("n_out >= 1");
                }
            }
        }
        self.seed = seed;
        self.epoch = 0;
    }

    /// Trainable parameter tensors in a fixed order: layer order, and within
    /// a layer kernel/weights before bias (gamma before beta). Gradients and
    /// optimizer state use the same order.
    pub fn trainable_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for p in &self.params {
            match p {
                LayerParams::None => {}
                LayerParams::Conv(c) => {
                    out.push(&c.kernel);
                    out.push(&c.bias);
                }
                LayerParams::BatchNorm(b) => {
                    out.push(&b.gamma);
                    out.push(&b.beta);
                }
                LayerParams::Dense { weights, bias } => {
                    out.push(weights);
                    out.push(bias);
                }
            }
        }
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for p in &mut self.params {
            match p {
                LayerParams::None => {}
                LayerParams::Conv(c) => {
                    out.push(&mut c.kernel);
                    out.push(&mut c.bias);
                }
                LayerParams::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                LayerParams::Dense { weights, bias } => {
                    out.push(weights);
                    out.push(bias);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut a = build_model_3d_small::<f32>().unwrap();
        let mut b = build_model_3d_small::<f32>().unwrap();
        a.init_params(42);
        b.init_params(42);
        for (ta, tb) in a.trainable_tensors().iter().zip(b.trainable_tensors()) {
            assert_eq!(ta.data(), tb.data());
        }
        let mut c = build_model_3d_small::<f32>().unwrap();
        c.init_params(43);
        let differs = a
            .trainable_tensors()
            .iter()
            .zip(c.trainable_tensors())
            .any(|(ta, tc)| ta.data() != tc.data());
        assert!(differs);
    }

    #[test]
    fn init_sets_gamma_to_one_and_biases_to_zero() {
        let mut m = build_model_3d_small::<f64>().unwrap();
        m.init_params(7);
        for p in m.params() {
            match p {
                LayerParams::BatchNorm(b) => {
                    assert!(b.gamma.data().iter().all(|&g| g == 1.0));
                    assert!(b.beta.data().iter().all(|&g| g == 0.0));
                    assert!(b.moving_var.data().iter().all(|&g| g == 1.0));
                }
                LayerParams::Conv(c) => assert!(c.bias.data().iter().all(|&g| g == 0.0)),
                LayerParams::Dense { bias, .. } => {
                    assert!(bias.data().iter().all(|&g| g == 0.0))
                }
                LayerParams::None => {}
            }
        }
    }

    #[test]
    fn he_uniform_bound_holds_for_first_3d_conv() {
        let mut m = build_model_3d::<f64>().unwrap();
        m.init_params(11);
        let bound = (6.0f64 / 27.0).sqrt(); // fan_in = 3*3*3*1
        assert!((bound - 0.4714).abs() < 1e-4);
        match &m.params()[0] {
            LayerParams::Conv(c) => {
                let max = c
                    .kernel
                    .data()
                    .iter()
                    .fold(0.0f64, |a, &v| a.max(v.abs()));
                assert!(max <= bound, "max |w| = {max} exceeds bound {bound}");
                assert!(max > bound * 0.5, "draws suspiciously small: {max}");
            }
            other => panic!("expected conv params, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_layer_names_are_rejected() {
        let layers = vec![
            LayerSpec::new("flatten_1", LayerKind::Flatten),
            LayerSpec::new("flatten_1", LayerKind::Dense { units: 3, relu: false }),
        ];
        assert!(matches!(
            Model::<f32>::new("custom", vec![4, 4, 1], layers),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn model_must_end_in_three_classes() {
        let layers = vec![
            LayerSpec::new("flatten_1", LayerKind::Flatten),
            LayerSpec::new("dense_1", LayerKind::Dense { units: 4, relu: false }),
        ];
        assert!(matches!(
            Model::<f32>::new("custom", vec![2, 2, 1], layers),
            Err(Error::Shape(_))
        ));
    }
}
