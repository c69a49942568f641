//! The differentiable layer set: convolution, transposed convolution, batch
//! normalization, fully-connected, Leaky ReLU and sigmoid.
//!
//! Every layer is a pair of free functions (forward, backward) over
//! [`Tensor4`]. [`LayerParams`] bundles the trainable state of the four
//! parameterized kinds so models can treat them uniformly.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use activation::{leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, LEAKY_SLOPE};
pub use batchnorm::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache, BatchNormGrads, BatchNormOutput,
    BnMode, BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, same_padding, ConvGeometry, ConvGrads};
pub use dense::{dense, dense_backward, DenseGrads};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv(ConvGeometry),
    Deconv(ConvGeometry),
    Dense { inputs: usize, outputs: usize },
    BatchNorm { channels: usize },
}

impl LayerKind {
    pub fn weight_len(&self) -> usize {
        match self {
            LayerKind::Conv(g) | LayerKind::Deconv(g) => g.weight_len(),
            LayerKind::Dense { inputs, outputs } => inputs * outputs,
            LayerKind::BatchNorm { channels } => *channels,
        }
    }

    pub fn bias_len(&self) -> usize {
        match self {
            LayerKind::Conv(g) | LayerKind::Deconv(g) => g.kernels,
            LayerKind::Dense { outputs, .. } => *outputs,
            LayerKind::BatchNorm { channels } => *channels,
        }
    }

    /// Weights plus biases (batch-norm scale plus shift).
    pub fn trainable_len(&self) -> usize {
        self.weight_len() + self.bias_len()
    }

    fn fan_in(&self) -> usize {
        match self {
            LayerKind::Conv(g) | LayerKind::Deconv(g) => g.depth * g.kernel.0 * g.kernel.1,
            LayerKind::Dense { inputs, .. } => *inputs,
            LayerKind::BatchNorm { .. } => 1,
        }
    }
}

/// Non-trainable running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
}

/// Trainable state of one layer. For batch norm `weights` holds the
/// per-channel scale and `biases` the shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub kind: LayerKind,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
    pub running: Option<BnRunning<T>>,
}

/// Gradients congruent to a [`LayerParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    /// Weights from a zero-mean normal with variance `2 / fan_in`, zero
    /// biases; batch norm starts at scale 1, shift 0, running mean 0 and
    /// running variance 1.
    pub fn init(kind: LayerKind, rng: &mut impl Rng) -> Self {
        match kind {
            LayerKind::BatchNorm { channels } => Self {
                kind,
                weights: vec![T::one(); channels],
                biases: vec![T::zero(); channels],
                running: Some(BnRunning {
                    mean: vec![T::zero(); channels],
                    var: vec![T::one(); channels],
                    momentum: BN_MOMENTUM,
                }),
            },
            _ => {
                let std = (2.0 / kind.fan_in() as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Self {
                    kind,
                    weights: (0..kind.weight_len()).map(|_| T::from_f64_lossy(normal.sample(rng))).collect(),
                    biases: vec![T::zero(); kind.bias_len()],
                    running: None,
                }
            }
        }
    }

    pub fn zeros(kind: LayerKind) -> Self {
        let running = matches!(kind, LayerKind::BatchNorm { .. }).then(|| BnRunning {
            mean: vec![T::zero(); kind.bias_len()],
            var: vec![T::one(); kind.bias_len()],
            momentum: BN_MOMENTUM,
        });
        Self { kind, weights: vec![T::zero(); kind.weight_len()], biases: vec![T::zero(); kind.bias_len()], running }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.kind.weight_len() || self.biases.len() != self.kind.bias_len() {
            return Err(Error::shape(format!(
                "{:?} needs {} weights and {} biases, got {} and {}",
                self.kind,
                self.kind.weight_len(),
                self.kind.bias_len(),
                self.weights.len(),
                self.biases.len()
            )));
        }
        match (&self.kind, &self.running) {
            (LayerKind::BatchNorm { channels }, Some(r)) => {
                if r.mean.len() != *channels || r.var.len() != *channels {
                    return Err(Error::shape("batchnorm running statistics have the wrong length"));
                }
                if r.var.iter().any(|v| !(*v > T::zero())) {
                    return Err(Error::config("batchnorm running variance must be strictly positive"));
                }
                if !(r.momentum > 0.0 && r.momentum < 1.0) {
                    return Err(Error::config(format!("batchnorm momentum {} outside (0, 1)", r.momentum)));
                }
            }
            (LayerKind::BatchNorm { .. }, None) => return Err(Error::config("batchnorm layer without running statistics")),
            (_, Some(_)) => return Err(Error::config("running statistics on a non-batchnorm layer")),
            (_, None) => {}
        }
        Ok(())
    }

    /// Forward pass of a convolution, transposed convolution or dense
    /// layer. Batch norm goes through [`LayerParams::batchnorm`].
    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        match &self.kind {
            LayerKind::Conv(g) => conv2d(input, &self.weights, &self.biases, g),
            LayerKind::Deconv(g) => deconv2d(input, &self.weights, &self.biases, g),
            LayerKind::Dense { outputs, .. } => dense(input, &self.weights, &self.biases, *outputs),
            LayerKind::BatchNorm { .. } => self.batchnorm(input, BnMode::Infer).map(|(y, _)| y),
        }
    }

    /// Batch norm in either mode. Train mode returns the layer with updated
    /// running statistics next to the output; `self` is not modified.
    pub fn batchnorm(&self, input: &Tensor4<T>, mode: BnMode) -> Result<(Tensor4<T>, Option<(Self, BatchNormCache<T>)>)> {
        let running = match (&self.kind, &self.running) {
            (LayerKind::BatchNorm { .. }, Some(r)) => r,
            _ => return Err(Error::config(format!("{:?} is not a batchnorm layer", self.kind))),
        };
        match mode {
            BnMode::Infer => Ok((
                batchnorm_infer(input, &self.weights, &self.biases, &running.mean, &running.var, BN_EPSILON)?,
                None,
            )),
            BnMode::Train => {
                let out = batchnorm_train(input, &self.weights, &self.biases, BN_EPSILON)?;
                let (mean, var) = batchnorm::updated_running_stats(
                    &running.mean,
                    &running.var,
                    &out.batch_mean,
                    &out.batch_var,
                    running.momentum,
                );
                let next = Self { running: Some(BnRunning { mean, var, momentum: running.momentum }), ..self.clone() };
                Ok((out.output, Some((next, out.cache))))
            }
        }
    }

    /// Backward of [`LayerParams::forward`] for the non-normalizing kinds.
    pub fn backward(&self, input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<(Tensor4<T>, LayerGrads<T>)> {
        match &self.kind {
            LayerKind::Conv(g) => {
                let gr = conv2d_backward(input, &self.weights, g, grad_out)?;
                Ok((gr.input, LayerGrads { weights: gr.weights, biases: gr.biases }))
            }
            LayerKind::Deconv(g) => {
                let gr = deconv2d_backward(input, &self.weights, g, grad_out)?;
                Ok((gr.input, LayerGrads { weights: gr.weights, biases: gr.biases }))
            }
            LayerKind::Dense { outputs, .. } => {
                let gr = dense_backward(input, &self.weights, *outputs, grad_out)?;
                Ok((gr.input, LayerGrads { weights: gr.weights, biases: gr.biases }))
            }
            LayerKind::BatchNorm { .. } => Err(Error::config("batchnorm backward needs its training cache")),
        }
    }
}
