//! Finite-difference verification of analytic gradients.
//!
//! A [`GradCase`] draws random instances of a layer (inputs, parameters and
//! a fixed upstream gradient `g`). Each instance exposes the scalar
//! `<g, layer(point)>` and its analytic gradient with respect to the whole
//! flattened point; [`grad_check`] compares every entry against central
//! differences.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::layers::{
    batchnorm_backward, batchnorm_train, conv2d, conv2d_backward, deconv2d, deconv2d_backward, dense,
    dense_backward, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, ConvGeometry, BN_EPSILON,
};
use crate::tensor::Tensor4;

/// Denominator floor of the relative error, so entries whose true value is
/// zero are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub trait GradInstance {
    fn point(&self) -> Vec<f64>;
    fn loss(&self, point: &[f64]) -> f64;
    fn gradient(&self, point: &[f64]) -> Vec<f64>;
}

pub trait GradCase {
    fn name(&self) -> String;
    fn draw(&self, rng: &mut dyn RngCore) -> Box<dyn GradInstance>;
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub trials: usize,
    pub entries: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` at `point`.
pub fn max_relative_error(instance: &dyn GradInstance, h: f64) -> (usize, f64) {
    let mut point = instance.point();
    let analytic = instance.gradient(&point);
    assert_eq!(analytic.len(), point.len(), "gradient length");
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let x = point[i];
        point[i] = x + h;
        let up = instance.loss(&point);
        point[i] = x - h;
        let down = instance.loss(&point);
        point[i] = x;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    (point.len(), worst)
}

pub fn grad_check(case: &dyn GradCase, trials: usize, h: f64, tolerance: f64, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = 0;
    let mut max_rel_err = 0.0f64;
    for _ in 0..trials {
        let inst = case.draw(&mut rng);
        let (n, e) = max_relative_error(inst.as_ref(), h);
        entries += n;
        max_rel_err = max_rel_err.max(e);
    }
    GradCheckReport { name: case.name(), trials, entries, max_rel_err, tolerance, passed: max_rel_err < tolerance }
}

fn uniform(rng: &mut dyn RngCore, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(dims: [usize; 4], data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(dims, data.to_vec()).expect("instance dims")
}

/// Concatenation of `(input, weights, biases)` split back by lengths.
fn split3(point: &[f64], a: usize, b: usize) -> (&[f64], &[f64], &[f64]) {
    let (x, rest) = point.split_at(a);
    let (w, bias) = rest.split_at(b);
    (x, w, bias)
}

struct ConvInstance {
    transposed: bool,
    geom: ConvGeometry,
    in_dims: [usize; 4],
    grad_out: Tensor4<f64>,
    point: Vec<f64>,
}

impl GradInstance for ConvInstance {
    fn point(&self) -> Vec<f64> {
        self.point.clone()
    }

    fn loss(&self, point: &[f64]) -> f64 {
        let (x, w, b) = split3(point, self.in_dims.iter().product(), self.geom.weight_len());
        let x = tensor(self.in_dims, x);
        let y = if self.transposed { deconv2d(&x, w, b, &self.geom) } else { conv2d(&x, w, b, &self.geom) };
        y.expect("forward").dot(&self.grad_out)
    }

    fn gradient(&self, point: &[f64]) -> Vec<f64> {
        let (x, w, _) = split3(point, self.in_dims.iter().product(), self.geom.weight_len());
        let x = tensor(self.in_dims, x);
        let g = if self.transposed {
            deconv2d_backward(&x, w, &self.geom, &self.grad_out)
        } else {
            conv2d_backward(&x, w, &self.geom, &self.grad_out)
        }
        .expect("backward");
        [g.input.into_vec(), g.weights, g.biases].concat()
    }
}

/// Convolution (or transposed convolution) with random shape in a small class.
pub struct ConvCase {
    pub transposed: bool,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl GradCase for ConvCase {
    fn name(&self) -> String {
        let k = if self.transposed { "deconv2d" } else { "conv2d" };
        format!("{k} {}x{} stride {:?}", self.kernel.0, self.kernel.1, self.stride)
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Box<dyn GradInstance> {
        Box::new(self.instance(rng))
    }
}

impl ConvCase {
    fn instance(&self, rng: &mut dyn RngCore) -> ConvInstance {
        let batch = rng.random_range(1..=2);
        let depth = rng.random_range(1..=3);
        let kernels = rng.random_range(1..=3);
        let w = rng.random_range(2..=5);
        let h = rng.random_range(2..=6);
        let geom = ConvGeometry::new(kernels, depth, self.kernel, self.stride);
        let in_dims = [batch, depth, w, h];
        let (ow, oh) = if self.transposed { geom.deconv_output(w, h) } else { geom.conv_output(w, h) };
        let n_in = in_dims.iter().product();
        let point = [uniform(rng, n_in), uniform(rng, geom.weight_len()), uniform(rng, kernels)].concat();
        let out_dims = [batch, kernels, ow, oh];
        let grad_out = tensor(out_dims, &uniform(rng, out_dims.iter().product()));
        ConvInstance { transposed: self.transposed, geom, in_dims, grad_out, point }
    }
}

struct DenseInstance {
    in_dims: [usize; 4],
    outputs: usize,
    grad_out: Tensor4<f64>,
    point: Vec<f64>,
}

impl GradInstance for DenseInstance {
    fn point(&self) -> Vec<f64> {
        self.point.clone()
    }

    fn loss(&self, point: &[f64]) -> f64 {
        let n: usize = self.in_dims.iter().product();
        let (x, w, b) = split3(point, n, self.in_dims[1..].iter().product::<usize>() * self.outputs);
        dense(&tensor(self.in_dims, x), w, b, self.outputs).expect("forward").dot(&self.grad_out)
    }

    fn gradient(&self, point: &[f64]) -> Vec<f64> {
        let n: usize = self.in_dims.iter().product();
        let (x, w, _) = split3(point, n, self.in_dims[1..].iter().product::<usize>() * self.outputs);
        let g = dense_backward(&tensor(self.in_dims, x), w, self.outputs, &self.grad_out).expect("backward");
        [g.input.into_vec(), g.weights, g.biases].concat()
    }
}

/// Fully-connected layer. Entries are drawn from `[0.5, 1.5]` so that no
/// gradient entry sits near zero, where a relative error is meaningless.
pub struct DenseCase;

impl GradCase for DenseCase {
    fn name(&self) -> String {
        "dense".into()
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Box<dyn GradInstance> {
        let batch = rng.random_range(1..=2);
        let inputs = rng.random_range(1..=4);
        let outputs = rng.random_range(1..=3);
        let mut away = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.5..1.5)).collect() };
        let in_dims = [batch, inputs, 1, 1];
        let point = [away(batch * inputs), away(inputs * outputs), away(outputs)].concat();
        let grad_out = tensor([batch, outputs, 1, 1], &away(batch * outputs));
        Box::new(DenseInstance { in_dims, outputs, grad_out, point })
    }
}

struct BatchNormInstance {
    dims: [usize; 4],
    grad_out: Tensor4<f64>,
    point: Vec<f64>,
}

impl GradInstance for BatchNormInstance {
    fn point(&self) -> Vec<f64> {
        self.point.clone()
    }

    fn loss(&self, point: &[f64]) -> f64 {
        let d = self.dims[1];
        let (x, s, b) = split3(point, self.dims.iter().product(), d);
        batchnorm_train(&tensor(self.dims, x), s, b, BN_EPSILON).expect("forward").output.dot(&self.grad_out)
    }

    fn gradient(&self, point: &[f64]) -> Vec<f64> {
        let d = self.dims[1];
        let (x, s, b) = split3(point, self.dims.iter().product(), d);
        let fwd = batchnorm_train(&tensor(self.dims, x), s, b, BN_EPSILON).expect("forward");
        let g = batchnorm_backward(&fwd.cache, s, &self.grad_out).expect("backward");
        [g.input.into_vec(), g.scale, g.shift].concat()
    }
}

/// Training-mode batch normalization, including the path through the
/// batch statistics.
pub struct BatchNormCase;

impl GradCase for BatchNormCase {
    fn name(&self) -> String {
        "batchnorm (train)".into()
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Box<dyn GradInstance> {
        let dims = [rng.random_range(2..=3), rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(2..=4)];
        let n = dims.iter().product();
        let d = dims[1];
        let scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        let point = [uniform(rng, n), scale, uniform(rng, d)].concat();
        let grad_out = tensor(dims, &uniform(rng, n));
        Box::new(BatchNormInstance { dims, grad_out, point })
    }
}

struct ActivationInstance {
    sigmoid: bool,
    dims: [usize; 4],
    grad_out: Tensor4<f64>,
    point: Vec<f64>,
}

impl GradInstance for ActivationInstance {
    fn point(&self) -> Vec<f64> {
        self.point.clone()
    }

    fn loss(&self, point: &[f64]) -> f64 {
        let x = tensor(self.dims, point);
        let y = if self.sigmoid { sigmoid(&x) } else { leaky_relu(&x) };
        y.dot(&self.grad_out)
    }

    fn gradient(&self, point: &[f64]) -> Vec<f64> {
        let x = tensor(self.dims, point);
        let g = if self.sigmoid {
            sigmoid_backward(&sigmoid(&x), &self.grad_out)
        } else {
            leaky_relu_backward(&x, &self.grad_out)
        };
        g.expect("backward").into_vec()
    }
}

/// Leaky ReLU or sigmoid on inputs in `[-4, 4]`.
pub struct ActivationCase {
    pub sigmoid: bool,
}

impl GradCase for ActivationCase {
    fn name(&self) -> String {
        if self.sigmoid { "sigmoid".into() } else { "leaky_relu".into() }
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Box<dyn GradInstance> {
        let dims = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4)];
        let n = dims.iter().product();
        let point = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let grad_out = tensor(dims, &uniform(rng, n));
        Box::new(ActivationInstance { sigmoid: self.sigmoid, dims, grad_out, point })
    }
}

/// One case per layer type and stride class used by the model.
pub fn layer_cases() -> Vec<Box<dyn GradCase>> {
    vec![
        Box::new(ConvCase { transposed: false, kernel: (3, 3), stride: (1, 1) }),
        Box::new(ConvCase { transposed: false, kernel: (3, 5), stride: (1, 2) }),
        Box::new(ConvCase { transposed: false, kernel: (3, 3), stride: (2, 2) }),
        Box::new(ConvCase { transposed: true, kernel: (3, 3), stride: (1, 1) }),
        Box::new(ConvCase { transposed: true, kernel: (3, 5), stride: (1, 2) }),
        Box::new(DenseCase),
        Box::new(BatchNormCase),
        Box::new(ActivationCase { sigmoid: false }),
        Box::new(ActivationCase { sigmoid: true }),
    ]
}

/// Every layer case at tolerance `1e-4` followed by the full small model at
/// `1e-3`, each over `trials` random instances.
pub fn suite(trials: usize, seed: u64) -> Vec<GradCheckReport> {
    let mut out: Vec<GradCheckReport> =
        layer_cases().iter().enumerate().map(|(i, c)| grad_check(c.as_ref(), trials, 1e-5, 1e-4, seed + i as u64)).collect();
    out.push(grad_check(&crate::codec::ModelCase::default(), trials, 1e-6, 1e-3, seed + 100));
    out
}
