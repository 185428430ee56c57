//! The single-diver detection network: a five-layer convolutional block
//! feeding a three-layer classifier and a three-layer box regressor.
//!
//! ```text
//! image 224x224x3
//!   conv1 11x11/4 -> 56x56x64   pool1 3/2 -> 27x27x64
//!   conv2 5x5/1   -> 27x27x192  pool2 3/2 -> 13x13x192
//!   conv3 3x3/1   -> 13x13x192
//!   conv4 3x3/1   -> 13x13x192
//!   conv5 3x3/1   -> 13x13x128
//!     ├─ pool5 3/2 -> 6x6x128 = 4608 -> fc1 1024 -> fc2 128 -> fc3 n   (softmax)
//!     └─ flatten   -> 21632          -> rc1 4096 -> rc2 192 -> rc3 4n  (cx, cy, w, h per class)
//! ```
//!
//! Convolutions use SAME padding and pools VALID padding; ReLU follows every
//! convolution and every hidden dense layer.

mod io;
mod network;
mod train;

pub use io::{load_weights, read_tensors, save_weights, write_tensors, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use network::{LayerShape, Prediction};
pub use train::{
    record_loss, training_step, Augment, LossVars, LrSchedule, RegionLabel, RegionSampler, StepReport, Trainer, TrainingSample,
};

use crate::tensor::{glorot_uniform, init_rng, ConvSpec, Padding, PoolSpec, Scalar, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input image must be {expected:?}, got {found:?}")]
    InputDims { expected: Vec<usize>, found: Vec<usize> },
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("sample {index} has class {class} but no box target")]
    MissingBox { index: usize, class: usize },
    #[error("sample {index} has class {class} outside 0..{num_classes}")]
    BadClass { index: usize, class: usize, num_classes: usize },
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Learnable layers in file and optimizer order.
pub const LEARNABLE_LAYERS: [&str; 11] = [
    "conv1", "conv2", "conv3", "conv4", "conv5", "fc1", "fc2", "fc3", "rc1", "rc2", "rc3",
];

/// Layer dimensions. [`NetworkConfig::table_one`] is the reference architecture;
/// smaller variants keep the same topology and are handy for fast tests.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Number of classes `n`, including the background class 0.
    pub num_classes: usize,
    pub input_size: usize,
    pub conv: [ConvSpec; 5],
    /// Shared by pool1, pool2 and the pool in front of fc1.
    pub pool: PoolSpec,
    pub fc_hidden: [usize; 2],
    pub rc_hidden: [usize; 2],
}

impl NetworkConfig {
    pub const INPUT_SIZE: usize = 224;

    pub fn table_one(num_classes: usize) -> Self {
        NetworkConfig {
            num_classes,
            input_size: Self::INPUT_SIZE,
            conv: [
                ConvSpec::square(11, 3, 64, 4),
                ConvSpec::square(5, 64, 192, 1),
                ConvSpec::square(3, 192, 192, 1),
                ConvSpec::square(3, 192, 192, 1),
                ConvSpec::square(3, 192, 128, 1),
            ],
            pool: PoolSpec::new(3, 2, Padding::Valid),
            fc_hidden: [1024, 128],
            rc_hidden: [4096, 192],
        }
    }

    /// Same topology with narrow layers.
    pub fn tiny(num_classes: usize, input_size: usize) -> Self {
        NetworkConfig {
            num_classes,
            input_size,
            conv: [
                ConvSpec::square(5, 3, 4, 2),
                ConvSpec::square(3, 4, 5, 1),
                ConvSpec::square(3, 5, 5, 1),
                ConvSpec::square(3, 5, 6, 1),
                ConvSpec::square(3, 6, 4, 1),
            ],
            pool: PoolSpec::new(3, 2, Padding::Valid),
            fc_hidden: [8, 6],
            rc_hidden: [10, 6],
        }
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [self.input_size, self.input_size, 3]
    }

    /// Output dims of every layer, in forward order. Fails if any stage is
    /// inconsistent (channel chain, window larger than the map, zero widths).
    pub fn layer_shapes(&self) -> Result<Vec<LayerShape>> {
        if self.num_classes == 0 {
            return Err(ModelError::Config("num_classes must be >= 1".into()));
        }
        if self.conv[0].in_channels != 3 {
            return Err(ModelError::Config("conv1 must take 3 input channels".into()));
        }
        for i in 1..5 {
            if self.conv[i].in_channels != self.conv[i - 1].out_channels {
                return Err(ModelError::Config(format!(
                    "conv{} expects {} channels but conv{} produces {}",
                    i + 1,
                    self.conv[i].in_channels,
                    i,
                    self.conv[i - 1].out_channels
                )));
            }
        }
        if self.fc_hidden.contains(&0) || self.rc_hidden.contains(&0) {
            return Err(ModelError::Config("dense layer widths must be >= 1".into()));
        }
        let mut shapes = Vec::with_capacity(15);
        let (mut h, mut w) = (self.input_size, self.input_size);
        let mut push = |name: &str, dims: Vec<usize>| shapes.push(LayerShape::new(name, dims));
        for (i, spec) in self.conv.iter().enumerate() {
            (h, w) = spec.output_hw(h, w)?;
            push(&format!("conv{}", i + 1), vec![h, w, spec.out_channels]);
            if i < 2 {
                (h, w) = self.pool.output_hw(h, w)?;
                push(&format!("pool{}", i + 1), vec![h, w, spec.out_channels]);
            }
        }
        let c5 = self.conv[4].out_channels;
        let (ph, pw) = self.pool.output_hw(h, w)?;
        push("pool5", vec![ph, pw, c5]);
        push("fc1", vec![self.fc_hidden[0]]);
        push("fc2", vec![self.fc_hidden[1]]);
        push("fc3", vec![self.num_classes]);
        push("rc1", vec![self.rc_hidden[0]]);
        push("rc2", vec![self.rc_hidden[1]]);
        push("rc3", vec![4 * self.num_classes]);
        Ok(shapes)
    }

    /// `[H, W, C]` of the conv5 output shared by both heads.
    pub fn feature_dims(&self) -> Result<[usize; 3]> {
        let shapes = self.layer_shapes()?;
        let d = &shapes.iter().find(|s| s.name == "conv5").expect("conv5 present").dims;
        Ok([d[0], d[1], d[2]])
    }

    /// `[H, W, C]` of the pooled grid fed to fc1.
    pub fn pooled_dims(&self) -> Result<[usize; 3]> {
        let shapes = self.layer_shapes()?;
        let d = &shapes.iter().find(|s| s.name == "pool5").expect("pool5 present").dims;
        Ok([d[0], d[1], d[2]])
    }

    pub fn classifier_input_len(&self) -> Result<usize> {
        Ok(self.pooled_dims()?.iter().product())
    }

    pub fn regressor_input_len(&self) -> Result<usize> {
        Ok(self.feature_dims()?.iter().product())
    }

    /// `(weights, bias)` dims of each learnable layer, in [`LEARNABLE_LAYERS`] order.
    pub fn parameter_dims(&self) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        let mut out = Vec::with_capacity(11);
        for spec in &self.conv {
            out.push((spec.weight_dims().to_vec(), vec![spec.out_channels]));
        }
        let n = self.num_classes;
        let fc = [self.classifier_input_len()?, self.fc_hidden[0], self.fc_hidden[1], n];
        let rc = [self.regressor_input_len()?, self.rc_hidden[0], self.rc_hidden[1], 4 * n];
        for chain in [fc, rc] {
            for pair in chain.windows(2) {
                out.push((vec![pair[0], pair[1]], vec![pair[1]]));
            }
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self
            .parameter_dims()?
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum())
    }

    /// Recovers a config from stored parameter dims. Strides, paddings and
    /// pooling come from the reference or the tiny layout, whichever fits;
    /// each layout is tried at its own input size before any other size.
    pub fn infer(dims: &[(Vec<usize>, Vec<usize>)]) -> Result<Self> {
        if dims.len() != LEARNABLE_LAYERS.len() {
            return Err(ModelError::Format(format!("expected 11 layers, found {}", dims.len())));
        }
        let bad = |name: &str| ModelError::Format(format!("unexpected dims for {name}"));
        let dense = |i: usize| match dims[i].0.as_slice() {
            &[a, b] => Ok((a, b)),
            _ => Err(bad(LEARNABLE_LAYERS[i])),
        };
        let mut templates = Vec::with_capacity(2);
        for mut config in [NetworkConfig::table_one(1), NetworkConfig::tiny(1, 64)] {
            for i in 0..5 {
                match dims[i].0.as_slice() {
                    &[kh, kw, ci, co] => {
                        config.conv[i].kernel_h = kh;
                        config.conv[i].kernel_w = kw;
                        config.conv[i].in_channels = ci;
                        config.conv[i].out_channels = co;
                    }
                    _ => return Err(bad(LEARNABLE_LAYERS[i])),
                }
            }
            config.fc_hidden = [dense(5)?.1, dense(6)?.1];
            config.num_classes = dense(7)?.1;
            config.rc_hidden = [dense(8)?.1, dense(9)?.1];
            templates.push(config);
        }
        // the input size is not stored
        let fits = |c: &NetworkConfig, size: usize| {
            let mut c = c.clone();
            c.input_size = size;
            (c.parameter_dims().ok().as_deref() == Some(dims)).then_some(c)
        };
        templates
            .iter()
            .find_map(|t| fits(t, t.input_size))
            .or_else(|| templates.iter().find_map(|t| (8..=2048).find_map(|s| fits(t, s))))
            .ok_or_else(|| ModelError::Format("parameter dims do not form a known network".into()))
    }
}

/// Weights and bias of one learnable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Scalar> {
    pub name: &'static str,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// All learnable parameters of a network, keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T: Scalar = f32> {
    config: NetworkConfig,
    layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> NetworkWeights<T> {
    /// Uniform Glorot initialization with zero biases; deterministic in `seed`.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        let dims = config.parameter_dims()?;
        let mut rng = init_rng(seed);
        let layers = LEARNABLE_LAYERS
            .iter()
            .zip(dims)
            .map(|(&name, (wd, bd))| {
                let (fan_in, fan_out) = if wd.len() == 4 {
                    let area = wd[0] * wd[1];
                    (area * wd[2], area * wd[3])
                } else {
                    (wd[0], wd[1])
                };
                let weights = glorot_uniform::<T>(&wd, fan_in, fan_out, &mut rng);
                LayerParams {
                    name,
                    weights,
                    bias: Tensor::zeros(bd),
                }
            })
            .collect();
        Ok(NetworkWeights { config, layers })
    }

    /// Assembles weights from `(name, weights, bias)` triples, checking dims.
    pub fn from_layers(config: NetworkConfig, layers: Vec<(String, Tensor<T>, Tensor<T>)>) -> Result<Self> {
        let dims = config.parameter_dims()?;
        if layers.len() != dims.len() {
            return Err(ModelError::Format(format!(
                "expected {} layers, found {}",
                dims.len(),
                layers.len()
            )));
        }
        let mut out = Vec::with_capacity(layers.len());
        for (((name, w, b), (wd, bd)), &expected) in layers.into_iter().zip(dims).zip(&LEARNABLE_LAYERS) {
            if name != expected {
                return Err(ModelError::Format(format!("expected layer {expected}, found {name}")));
            }
            if w.dims() != wd.as_slice() || b.dims() != bd.as_slice() {
                return Err(ModelError::Format(format!(
                    "{name}: dims {:?}/{:?} do not match config {:?}/{:?}",
                    w.dims(),
                    b.dims(),
                    wd,
                    bd
                )));
            }
            out.push(LayerParams {
                name: expected,
                weights: w,
                bias: b,
            });
        }
        Ok(NetworkWeights { config, layers: out })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn get(&self, name: &str) -> Option<&LayerParams<T>> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub(crate) fn layer(&self, index: usize) -> &LayerParams<T> {
        &self.layers[index]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name,
                    weights: l.weights.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }
}
