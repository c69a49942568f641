//! The encoder/decoder network.
//!
//! Encoder, on a `1 x N_cc x N_t` plane:
//!
//! ```text
//! conv f, 3x5, stride (1, 2)  -> BN -> LeakyReLU    f x N_cc x N_t/2
//! conv f, 3x3                 -> BN -> LeakyReLU
//! conv f, 3x3                 -> BN -> LeakyReLU
//! conv 1, 3x3                 -> BN -> LeakyReLU    1 x N_cc x N_t/2
//! dense N/2 -> M                                    codeword
//! ```
//!
//! The decoder mirrors it: dense `M -> N/2`, reshape to `1 x N_cc x N_t/2`,
//! three 3x3 convolutions with `f` kernels (BN and LeakyReLU after each),
//! a 3x5 transposed convolution with stride `(1, 2)` back to one channel and
//! a sigmoid.

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlation::Part;
use crate::error::{Error, Result};
use crate::gradcheck::{GradCase, GradInstance};
use crate::layers::{
    batchnorm_backward, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, BatchNormCache, BnMode,
    ConvGeometry, LayerGrads, LayerKind, LayerParams,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use crate::transform::AngularDelayPlanes;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnetConfig {
    pub n_cc: usize,
    pub n_t: usize,
    /// Kernels per convolutional layer.
    pub f: usize,
    /// Compression ratio `M / N`.
    pub gamma: f64,
}

impl Default for EnetConfig {
    fn default() -> Self {
        Self { n_cc: 32, n_t: 32, f: 16, gamma: 0.25 }
    }
}

impl EnetConfig {
    pub fn new(n_cc: usize, n_t: usize, f: usize, gamma: f64) -> Result<Self> {
        let c = Self { n_cc, n_t, f, gamma };
        c.validate()?;
        Ok(c)
    }

    /// Entries of one plane.
    pub fn n(&self) -> usize {
        self.n_cc * self.n_t
    }

    /// Codeword length.
    pub fn m(&self) -> usize {
        (self.gamma * self.n() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cc == 0 || self.n_t == 0 || self.f == 0 {
            return Err(Error::config("n_cc, n_t and f must be positive"));
        }
        if self.n_t % 2 != 0 {
            return Err(Error::config(format!("n_t = {} must be even for the stride-2 layers", self.n_t)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        let m = self.gamma * self.n() as f64;
        if (m - m.round()).abs() > 1e-9 * self.n() as f64 || m.round() < 1.0 {
            return Err(Error::config(format!("gamma * N = {m} is not a positive integer")));
        }
        Ok(())
    }

    fn layer_plan(&self) -> Vec<(&'static str, LayerKind)> {
        let (f, m, half) = (self.f, self.m(), self.n() / 2);
        let conv = |k, d, kernel, stride| LayerKind::Conv(ConvGeometry::new(k, d, kernel, stride));
        let bn = |c| LayerKind::BatchNorm { channels: c };
        vec![
            ("enc.conv1", conv(f, 1, (3, 5), (1, 2))),
            ("enc.bn1", bn(f)),
            ("enc.conv2", conv(f, f, (3, 3), (1, 1))),
            ("enc.bn2", bn(f)),
            ("enc.conv3", conv(f, f, (3, 3), (1, 1))),
            ("enc.bn3", bn(f)),
            ("enc.conv4", conv(1, f, (3, 3), (1, 1))),
            ("enc.bn4", bn(1)),
            ("enc.dense", LayerKind::Dense { inputs: half, outputs: m }),
            ("dec.dense", LayerKind::Dense { inputs: m, outputs: half }),
            ("dec.conv1", conv(f, 1, (3, 3), (1, 1))),
            ("dec.bn1", bn(f)),
            ("dec.conv2", conv(f, f, (3, 3), (1, 1))),
            ("dec.bn2", bn(f)),
            ("dec.conv3", conv(f, f, (3, 3), (1, 1))),
            ("dec.bn3", bn(f)),
            ("dec.deconv", LayerKind::Deconv(ConvGeometry::new(1, f, (3, 5), (1, 2)))),
        ]
    }
}

/// Index of the first decoder layer in the layer list.
const DECODER_START: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Layer(usize),
    Leaky,
    Sigmoid,
    /// `[B, N/2, 1, 1] -> [B, 1, N_cc, N_t/2]`
    Unflatten,
}

fn encoder_ops() -> Vec<Op> {
    let mut ops = vec![];
    for i in 0..4 {
        ops.extend([Op::Layer(2 * i), Op::Layer(2 * i + 1), Op::Leaky]);
    }
    ops.push(Op::Layer(8));
    ops
}

fn decoder_ops() -> Vec<Op> {
    let mut ops = vec![Op::Layer(9), Op::Unflatten];
    for i in 0..3 {
        ops.extend([Op::Layer(10 + 2 * i), Op::Layer(11 + 2 * i), Op::Leaky]);
    }
    ops.extend([Op::Layer(16), Op::Sigmoid]);
    ops
}

/// Per-layer trainable parameter count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub name: String,
    pub kind: LayerKind,
    pub weights: usize,
    pub biases: usize,
}

impl LayerCount {
    pub fn total(&self) -> usize {
        self.weights + self.biases
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub layers: Vec<LayerCount>,
    pub encoder: usize,
    pub decoder: usize,
    pub encoder_dense: usize,
    pub total: usize,
}

impl ParamCount {
    /// Total in millions rounded to two decimals.
    pub fn millions(&self) -> f64 {
        (self.total as f64 / 1e4).round() / 100.0
    }
}

/// Trainable parameters: weights, biases and batch-norm scale and shift.
/// Running statistics are not counted.
pub fn count_params(config: &EnetConfig) -> Result<ParamCount> {
    config.validate()?;
    let layers: Vec<LayerCount> = config
        .layer_plan()
        .into_iter()
        .map(|(name, kind)| LayerCount { name: name.into(), kind, weights: kind.weight_len(), biases: kind.bias_len() })
        .collect();
    let encoder = layers[..DECODER_START].iter().map(LayerCount::total).sum();
    let decoder = layers[DECODER_START..].iter().map(LayerCount::total).sum();
    let encoder_dense = layers[DECODER_START - 1].total();
    Ok(ParamCount { layers, encoder, decoder, encoder_dense, total: encoder + decoder })
}

/// Published totals of two larger reference networks at
/// `γ = 1/4, 1/16, 1/32, 1/64`, in millions: CsiNet (Wen, Shih and Jin,
/// 2018) and CRNet with cosine schedule (Lu et al., 2020).
pub const REFERENCE_MILLIONS: [(&str, [f64; 4]); 2] =
    [("CsiNet", [2.10, 0.53, 0.27, 0.14]), ("CRNet-cosine", [2.11, 0.53, 0.27, 0.14])];

/// Compressed representation of one plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Codeword<T> {
    pub values: Vec<T>,
    pub part: Part,
}

enum Record<T> {
    Input(Tensor4<T>),
    Bn(BatchNormCache<T>),
    Output(Tensor4<T>),
    Reshape([usize; 4]),
}

/// Everything a training-mode forward pass leaves for the backward pass,
/// plus the batch-norm layers with their running statistics advanced.
pub struct Trace<T> {
    records: Vec<Record<T>>,
    bn_updates: Vec<(usize, LayerParams<T>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnetParams<T> {
    config: EnetConfig,
    names: Vec<&'static str>,
    layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> EnetParams<T> {
    /// A freshly initialized model, deterministic in `seed`.
    pub fn build(config: EnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = config.layer_plan();
        let names = plan.iter().map(|(n, _)| *n).collect();
        let layers = plan.into_iter().map(|(_, kind)| LayerParams::init(kind, &mut rng)).collect();
        Ok(Self { config, names, layers })
    }

    /// Reassemble from layers, checking them against `config`.
    pub fn from_layers(config: EnetConfig, layers: Vec<LayerParams<T>>) -> Result<Self> {
        config.validate()?;
        let plan = config.layer_plan();
        if layers.len() != plan.len() {
            return Err(Error::shape(format!("model needs {} layers, got {}", plan.len(), layers.len())));
        }
        for ((name, kind), l) in plan.iter().zip(&layers) {
            if l.kind != *kind {
                return Err(Error::shape(format!("{name}: expected {kind:?}, got {:?}", l.kind)));
            }
            l.validate()?;
        }
        Ok(Self { config, names: plan.iter().map(|(n, _)| *n).collect(), layers })
    }

    pub fn config(&self) -> &EnetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn layer_names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn cast<U: Scalar>(&self) -> EnetParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                kind: l.kind,
                weights: conv(&l.weights),
                biases: conv(&l.biases),
                running: l.running.as_ref().map(|r| crate::layers::BnRunning {
                    mean: conv(&r.mean),
                    var: conv(&r.var),
                    momentum: r.momentum,
                }),
            })
            .collect();
        EnetParams { config: self.config, names: self.names.clone(), layers }
    }

    /// SHA-256 over every parameter and running statistic, as hex.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            let stats = l.running.iter().flat_map(|r| r.mean.iter().chain(&r.var));
            for x in l.weights.iter().chain(&l.biases).chain(stats) {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn input_dims(&self, batch: usize) -> [usize; 4] {
        [batch, 1, self.config.n_cc, self.config.n_t]
    }

    fn code_dims(&self, batch: usize) -> [usize; 4] {
        [batch, self.config.m(), 1, 1]
    }

    fn run(&self, ops: &[Op], mut x: Tensor4<T>, mode: BnMode, mut trace: Option<&mut Trace<T>>) -> Result<Tensor4<T>> {
        let (n_cc, half_t) = (self.config.n_cc, self.config.n_t / 2);
        for &op in ops {
            let y = match op {
                Op::Layer(i) => {
                    let layer = &self.layers[i];
                    if let LayerKind::BatchNorm { .. } = layer.kind {
                        let (y, update) = layer.batchnorm(&x, mode)?;
                        if let (Some(t), Some((next, cache))) = (trace.as_deref_mut(), update) {
                            t.records.push(Record::Bn(cache));
                            t.bn_updates.push((i, next));
                        }
                        y
                    } else {
                        let y = layer.forward(&x)?;
                        self.check_boundary(i, &y)?;
                        if let Some(t) = trace.as_deref_mut() {
                            t.records.push(Record::Input(x));
                        }
                        y
                    }
                }
                Op::Leaky => {
                    let y = leaky_relu(&x);
                    if let Some(t) = trace.as_deref_mut() {
                        t.records.push(Record::Input(x));
                    }
                    y
                }
                Op::Sigmoid => {
                    let y = sigmoid(&x);
                    if let Some(t) = trace.as_deref_mut() {
                        t.records.push(Record::Output(y.clone()));
                    }
                    y
                }
                Op::Unflatten => {
                    let dims = x.dims();
                    if let Some(t) = trace.as_deref_mut() {
                        t.records.push(Record::Reshape(dims));
                    }
                    x.reshape([dims[0], 1, n_cc, half_t])?
                }
            };
            x = y;
        }
        Ok(x)
    }

    /// Shape chain check after every parameterized layer.
    fn check_boundary(&self, i: usize, y: &Tensor4<T>) -> Result<()> {
        let c = &self.config;
        let b = y.batch();
        let want = match &self.layers[i].kind {
            LayerKind::Dense { outputs, .. } => [b, *outputs, 1, 1],
            LayerKind::Deconv(_) => [b, 1, c.n_cc, c.n_t],
            LayerKind::Conv(g) => [b, g.kernels, c.n_cc, c.n_t / 2],
            LayerKind::BatchNorm { .. } => return Ok(()),
        };
        y.expect_dims(want, self.names[i])
    }

    /// Inference-mode encoder over a batch `[B, 1, N_cc, N_t]`.
    pub fn encode_batch(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        x.expect_dims(self.input_dims(x.batch()), "encoder input")?;
        self.run(&encoder_ops(), x.clone(), BnMode::Infer, None)
    }

    /// Inference-mode decoder over codewords `[B, M, 1, 1]`.
    pub fn decode_batch(&self, s: &Tensor4<T>) -> Result<Tensor4<T>> {
        s.expect_dims(self.code_dims(s.batch()), "decoder input")?;
        self.run(&decoder_ops(), s.clone(), BnMode::Infer, None)
    }

    /// Inference-mode reconstruction `decode(encode(x))`.
    pub fn reconstruct_batch(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.decode_batch(&self.encode_batch(x)?)
    }

    pub fn encode(&self, plane: &[T], part: Part) -> Result<Codeword<T>> {
        let x = Tensor4::from_vec(self.input_dims(1), plane.to_vec())?;
        Ok(Codeword { values: self.encode_batch(&x)?.into_vec(), part })
    }

    pub fn decode(&self, codeword: &Codeword<T>) -> Result<Vec<T>> {
        if let Some(i) = codeword.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("codeword entry {i}")));
        }
        let s = Tensor4::from_vec(self.code_dims(1), codeword.values.clone())?;
        Ok(self.decode_batch(&s)?.into_vec())
    }

    /// Training-mode forward through encoder and decoder: batch statistics
    /// in every batch-norm layer, and a trace for [`EnetParams::backward`].
    pub fn forward_train(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        x.expect_dims(self.input_dims(x.batch()), "model input")?;
        let mut trace = Trace { records: vec![], bn_updates: vec![] };
        let mut ops = encoder_ops();
        ops.extend(decoder_ops());
        let y = self.run(&ops, x.clone(), BnMode::Train, Some(&mut trace))?;
        Ok((y, trace))
    }

    /// Parameter gradients of `<grad_out, forward_train(x)>`, one entry per
    /// layer. Running statistics in the trace are not applied.
    pub fn backward(&self, trace: &mut Trace<T>, grad_out: Tensor4<T>) -> Result<Vec<LayerGrads<T>>> {
        let mut grads: Vec<LayerGrads<T>> = self
            .layers
            .iter()
            .map(|l| LayerGrads { weights: vec![T::zero(); l.weights.len()], biases: vec![T::zero(); l.biases.len()] })
            .collect();
        let mut ops = encoder_ops();
        ops.extend(decoder_ops());
        let mut g = grad_out;
        for &op in ops.iter().rev() {
            let rec = trace.records.pop().ok_or_else(|| Error::shape("trace shorter than the op list"))?;
            g = match (op, rec) {
                (Op::Layer(i), Record::Bn(cache)) => {
                    let gr = batchnorm_backward(&cache, &self.layers[i].weights, &g)?;
                    grads[i] = LayerGrads { weights: gr.scale, biases: gr.shift };
                    gr.input
                }
                (Op::Layer(i), Record::Input(x)) => {
                    let (gx, gr) = self.layers[i].backward(&x, &g)?;
                    grads[i] = gr;
                    gx
                }
                (Op::Leaky, Record::Input(x)) => leaky_relu_backward(&x, &g)?,
                (Op::Sigmoid, Record::Output(y)) => sigmoid_backward(&y, &g)?,
                (Op::Unflatten, Record::Reshape(dims)) => g.reshape(dims)?,
                _ => return Err(Error::shape("trace does not match the op list")),
            };
        }
        Ok(grads)
    }

    /// Adopt the running statistics recorded by a training-mode forward.
    pub fn apply_bn_updates(&mut self, trace: Trace<T>) {
        for (i, layer) in trace.bn_updates {
            self.layers[i] = layer;
        }
    }

    /// All trainable values in layer order (weights then biases).
    pub fn flat_params(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum();
        if flat.len() != total {
            return Err(Error::shape(format!("{} flat values for {total} parameters", flat.len())));
        }
        let mut rest = flat;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            let (b, r) = r.split_at(l.biases.len());
            l.weights.copy_from_slice(w);
            l.biases.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }
}

/// `(1/B) Σ ||y - target||²` over a batch, and its gradient in `y`.
pub fn mse_loss<T: Scalar>(y: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    target.expect_dims(y.dims(), "loss target")?;
    let b = y.batch().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor4::zeros(y.dims());
    for ((g, &a), &t) in grad.data_mut().iter_mut().zip(y.data()).zip(target.data()) {
        let d = a.as_f64() - t.as_f64();
        loss += d * d;
        *g = T::from_f64_lossy(2.0 * d / b);
    }
    Ok((loss / b, grad))
}

/// Both parts of one sample through the same model.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrip {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    pub fingerprint_real: String,
    pub fingerprint_imag: String,
}

pub fn codec_roundtrip<T: Scalar>(params: &EnetParams<T>, planes: &AngularDelayPlanes) -> Result<RoundTrip> {
    let c = params.config();
    if (planes.n_cc(), planes.n_t()) != (c.n_cc, c.n_t) {
        return Err(Error::shape(format!(
            "planes are {}x{}, model expects {}x{}",
            planes.n_cc(),
            planes.n_t(),
            c.n_cc,
            c.n_t
        )));
    }
    let pass = |plane: &[f64], part| -> Result<(Vec<f64>, String)> {
        let fp = params.fingerprint();
        let x: Vec<T> = plane.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let y = params.decode(&params.encode(&x, part)?)?;
        Ok((y.into_iter().map(|v| v.as_f64()).collect(), fp))
    };
    let (real, fingerprint_real) = pass(planes.real_plane(), Part::Real)?;
    let (imag, fingerprint_imag) = pass(planes.imag_plane(), Part::Imag)?;
    Ok(RoundTrip { real, imag, fingerprint_real, fingerprint_imag })
}

/// End-to-end gradient case: MSE loss of a training-mode forward pass with
/// respect to every trainable parameter of a small model.
pub struct ModelCase {
    pub config: EnetConfig,
    pub batch: usize,
}

impl Default for ModelCase {
    fn default() -> Self {
        Self { config: EnetConfig { n_cc: 4, n_t: 4, f: 2, gamma: 0.25 }, batch: 2 }
    }
}

struct ModelInstance {
    model: EnetParams<f64>,
    x: Tensor4<f64>,
    target: Tensor4<f64>,
}

impl ModelInstance {
    fn at(&self, point: &[f64]) -> EnetParams<f64> {
        let mut m = self.model.clone();
        m.set_flat_params(point).expect("point length");
        m
    }
}

impl GradInstance for ModelInstance {
    fn point(&self) -> Vec<f64> {
        self.model.flat_params()
    }

    fn loss(&self, point: &[f64]) -> f64 {
        let (y, _) = self.at(point).forward_train(&self.x).expect("forward");
        mse_loss(&y, &self.target).expect("loss").0
    }

    fn gradient(&self, point: &[f64]) -> Vec<f64> {
        let m = self.at(point);
        let (y, mut trace) = m.forward_train(&self.x).expect("forward");
        let (_, g) = mse_loss(&y, &self.target).expect("loss");
        m.backward(&mut trace, g).expect("backward").into_iter().flat_map(|g| g.weights.into_iter().chain(g.biases)).collect()
    }
}

impl GradCase for ModelCase {
    fn name(&self) -> String {
        let c = &self.config;
        format!("model {}x{} f={} gamma={}", c.n_cc, c.n_t, c.f, c.gamma)
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Box<dyn GradInstance> {
        use rand::Rng;
        let model = EnetParams::build(self.config, rng.next_u64()).expect("valid micro config");
        let dims = [self.batch, 1, self.config.n_cc, self.config.n_t];
        let x = Tensor4::from_fn(dims, |_| rng.random_range(0.0..1.0));
        let target = Tensor4::from_fn(dims, |_| rng.random_range(0.0..1.0));
        Box::new(ModelInstance { model, x, target })
    }
}
