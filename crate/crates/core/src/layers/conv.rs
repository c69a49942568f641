//! Strided 2-D convolution with "same" zero padding and its exact adjoint,
//! the transposed convolution.
//!
//! Both run through an im2col lowering so the inner work is a single matrix
//! product per batch item. Weight gradients are accumulated in fixed-size
//! groups of batch items and the group partials are summed in order, which
//! makes every result independent of the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor4;

/// Batch items per gradient partial.
const GROUP: usize = 8;

/// Kernel geometry in the `number x depth x width x height` notation.
///
/// For a convolution `kernels` is the output depth and `depth` the input
/// depth; weights are stored `[kernels, depth, kw, kh]`. For a transposed
/// convolution `depth` is the input depth and `kernels` the output depth;
/// weights are stored `[depth, kernels, kw, kh]`, i.e. exactly the weights
/// of the convolution it is the adjoint of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernels: usize,
    pub depth: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl ConvGeometry {
    pub fn new(kernels: usize, depth: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        Self { kernels, depth, kernel, stride }
    }

    pub fn weight_len(&self) -> usize {
        self.kernels * self.depth * self.kernel.0 * self.kernel.1
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let (kw, kh) = self.kernel;
        let (sw, sh) = self.stride;
        if self.kernels == 0 || self.depth == 0 || kw == 0 || kh == 0 {
            return Err(Error::config(format!("empty kernel geometry {self:?}")));
        }
        if !(1..=2).contains(&sw) || !(1..=2).contains(&sh) {
            return Err(Error::config(format!("stride {:?} outside {{1, 2}}", self.stride)));
        }
        Ok(())
    }

    /// Output spatial size of the forward convolution.
    pub fn conv_output(&self, width: usize, height: usize) -> (usize, usize) {
        (width.div_ceil(self.stride.0), height.div_ceil(self.stride.1))
    }

    /// Output spatial size of the transposed convolution.
    pub fn deconv_output(&self, width: usize, height: usize) -> (usize, usize) {
        (width * self.stride.0, height * self.stride.1)
    }
}

/// Leading zero padding for "same" output `ceil(len / stride)`; the
/// remainder of the total padding goes after the data.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> usize {
    let out = len.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(len);
    total / 2
}

/// One lowered convolution: the spatial geometry of the "big" side (the
/// convolution input) and the "small" side (the convolution output).
#[derive(Clone, Copy)]
struct Lowering {
    channels: usize,
    big: (usize, usize),
    small: (usize, usize),
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
}

impl Lowering {
    fn new(channels: usize, big: (usize, usize), kernel: (usize, usize), stride: (usize, usize)) -> Self {
        let small = (big.0.div_ceil(stride.0), big.1.div_ceil(stride.1));
        let pad = (same_padding(big.0, kernel.0, stride.0), same_padding(big.1, kernel.1, stride.1));
        Self { channels, big, small, kernel, stride, pad }
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    fn positions(&self) -> usize {
        self.small.0 * self.small.1
    }

    /// Walk every (column-matrix row, output row) pair with the matching
    /// source row of the big image, or `None` where it falls in the padding.
    #[inline]
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, Option<usize>, usize)) {
        let (kw, kh) = self.kernel;
        let (bw, bh) = self.big;
        let (ow_n, _) = self.small;
        for c in 0..self.channels {
            for i in 0..kw {
                for j in 0..kh {
                    let row = (c * kw + i) * kh + j;
                    for ow in 0..ow_n {
                        let w = (ow * self.stride.0 + i) as isize - self.pad.0 as isize;
                        let src = (w >= 0 && (w as usize) < bw).then(|| (c * bw + w as usize) * bh);
                        f(row, ow, src, j);
                    }
                }
            }
        }
    }

    /// Output rows `oh` whose source row `oh * sh + j - pad` is inside the
    /// image, as a half-open range.
    #[inline]
    fn valid(&self, j: usize) -> (usize, usize) {
        let (s, pad, bh, n) = (self.stride.1, self.pad.1, self.big.1, self.small.1);
        let lo = pad.saturating_sub(j).div_ceil(s);
        let hi = ((bh + pad).saturating_sub(j)).div_ceil(s).min(n);
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let p = self.positions();
        let oh_n = self.small.1;
        let (s, pad) = (self.stride.1, self.pad.1);
        self.for_each_row(|row, ow, src, j| {
            let dst = &mut cols[row * p + ow * oh_n..row * p + (ow + 1) * oh_n];
            match src {
                None => dst.fill(T::zero()),
                Some(base) => {
                    let (lo, hi) = self.valid(j);
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let start = base + lo * s + j - pad;
                    if s == 1 {
                        dst[lo..hi].copy_from_slice(&image[start..start + hi - lo]);
                    } else {
                        for (k, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = image[start + k * s];
                        }
                    }
                }
            }
        });
    }

    /// Adjoint of `im2col`: scatter-add columns back into `image`.
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        image.fill(T::zero());
        let p = self.positions();
        let oh_n = self.small.1;
        let (s, pad) = (self.stride.1, self.pad.1);
        self.for_each_row(|row, ow, src, j| {
            if let Some(base) = src {
                let (lo, hi) = self.valid(j);
                let col = &cols[row * p + ow * oh_n + lo..row * p + ow * oh_n + hi];
                let start = base + lo * s + j - pad;
                for (k, &v) in col.iter().enumerate() {
                    let d = &mut image[start + k * s];
                    *d = *d + v;
                }
            }
        });
    }
}

impl Lowering {
    /// `out += W · im2col(image)` without materializing the columns; pays off
    /// when `W` has very few rows.
    fn direct_forward<T: Scalar>(&self, image: &[T], weights: &[T], kernels: usize, out: &mut [T]) {
        let (p, k, oh_n) = (self.positions(), self.rows(), self.small.1);
        let (s, pad) = (self.stride.1, self.pad.1);
        self.for_each_row(|row, ow, src, j| {
            if let Some(base) = src {
                let (lo, hi) = self.valid(j);
                let start = base + lo * s + j - pad;
                for o in 0..kernels {
                    let w = weights[o * k + row];
                    let dst = &mut out[o * p + ow * oh_n + lo..o * p + ow * oh_n + hi];
                    for (t, d) in dst.iter_mut().enumerate() {
                        *d = *d + w * image[start + t * s];
                    }
                }
            }
        });
    }

    /// `gw += dy · im2col(image)ᵀ`, the weight-gradient counterpart.
    fn direct_weight_grad<T: Scalar>(&self, image: &[T], dy: &[T], kernels: usize, gw: &mut [T]) {
        let (p, k, oh_n) = (self.positions(), self.rows(), self.small.1);
        let (s, pad) = (self.stride.1, self.pad.1);
        self.for_each_row(|row, ow, src, j| {
            if let Some(base) = src {
                let (lo, hi) = self.valid(j);
                let start = base + lo * s + j - pad;
                for o in 0..kernels {
                    let g = &dy[o * p + ow * oh_n + lo..o * p + ow * oh_n + hi];
                    let acc = g.iter().enumerate().fold(T::zero(), |a, (t, &v)| a + v * image[start + t * s]);
                    gw[o * k + row] = gw[o * k + row] + acc;
                }
            }
        });
    }
}

/// Convolutions with at most this many kernels skip the column matrix.
const DIRECT_MAX_KERNELS: usize = 2;

/// Gradients of a convolution-type layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

fn check_params<T>(geom: &ConvGeometry, weights: &[T], biases: &[T]) -> Result<()> {
    check_weights(geom, weights)?;
    if biases.len() != geom.kernels {
        return Err(Error::shape(format!("{} kernels need {} biases, got {}", geom.kernels, geom.kernels, biases.len())));
    }
    Ok(())
}

fn check_weights<T>(geom: &ConvGeometry, weights: &[T]) -> Result<()> {
    geom.validate()?;
    if weights.len() != geom.weight_len() {
        return Err(Error::shape(format!(
            "kernel {}x{}x{}x{} needs {} weights, got {}",
            geom.kernels,
            geom.depth,
            geom.kernel.0,
            geom.kernel.1,
            geom.weight_len(),
            weights.len()
        )));
    }
    Ok(())
}

fn check_depth<T: Scalar>(input: &Tensor4<T>, depth: usize, what: &str) -> Result<()> {
    if input.depth() != depth {
        return Err(Error::shape(format!("{what}: input depth {} but kernel depth {depth}", input.depth())));
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], biases: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(biases) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn sum_bias<T: Scalar>(grad: &[T], acc: &mut [T], plane: usize) {
    for (chunk, a) in grad.chunks(plane).zip(acc.iter_mut()) {
        *a = *a + chunk.iter().copied().sum::<T>();
    }
}

/// Reduce per-group `(weights, biases)` partials in group order.
fn reduce_partials<T: Scalar>(parts: Vec<(Vec<T>, Vec<T>)>, wlen: usize, blen: usize) -> (Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); wlen];
    let mut gb = vec![T::zero(); blen];
    for (w, b) in parts {
        gw.iter_mut().zip(&w).for_each(|(a, v)| *a = *a + *v);
        gb.iter_mut().zip(&b).for_each(|(a, v)| *a = *a + *v);
    }
    (gw, gb)
}

/// Forward convolution, output `ceil(width / sw) x ceil(height / sh)`.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, weights: &[T], biases: &[T], geom: &ConvGeometry) -> Result<Tensor4<T>> {
    check_params(geom, weights, biases)?;
    check_depth(input, geom.depth, "conv2d")?;
    let low = Lowering::new(geom.depth, (input.width(), input.height()), geom.kernel, geom.stride);
    let (k, p, f) = (low.rows(), low.positions(), geom.kernels);
    let mut out = Tensor4::zeros([input.batch(), f, low.small.0, low.small.1]);
    if out.is_empty() {
        return Ok(out);
    }
    let w = MatRef::new(weights, f, k);
    out.data_mut()
        .par_chunks_mut(f * p)
        .zip(input.data().par_chunks(input.item_len().max(1)))
        .for_each_init(
            || vec![T::zero(); if f <= DIRECT_MAX_KERNELS { 0 } else { k * p }],
            |cols, (out_b, x_b)| {
                if f <= DIRECT_MAX_KERNELS {
                    low.direct_forward(x_b, weights, f, out_b);
                } else {
                    low.im2col(x_b, cols);
                    gemm(w, MatRef::new(cols, k, p), T::zero(), out_b);
                }
                add_bias(out_b, biases, p);
            },
        );
    Ok(out)
}

/// Gradients of `sum(grad_out * conv2d(input))`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    geom: &ConvGeometry,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    check_weights(geom, weights)?;
    check_depth(input, geom.depth, "conv2d_backward")?;
    let low = Lowering::new(geom.depth, (input.width(), input.height()), geom.kernel, geom.stride);
    let (k, p, f) = (low.rows(), low.positions(), geom.kernels);
    grad_out.expect_dims([input.batch(), f, low.small.0, low.small.1], "conv2d_backward grad_out")?;

    // Stride 1 with odd kernels: the input gradient is itself a "same"
    // convolution of grad_out with the flipped, transposed kernel, which
    // turns the thin K = kernels product into a K = kernels * kw * kh one.
    let flip = geom.stride == (1, 1) && geom.kernel.0 % 2 == 1 && geom.kernel.1 % 2 == 1;
    let mut grad_in = if flip {
        let (kw, kh) = geom.kernel;
        let mut wf = vec![T::zero(); weights.len()];
        for o in 0..f {
            for c in 0..geom.depth {
                for i in 0..kw {
                    for j in 0..kh {
                        wf[((c * f + o) * kw + kw - 1 - i) * kh + kh - 1 - j] = weights[((o * geom.depth + c) * kw + i) * kh + j];
                    }
                }
            }
        }
        let g = ConvGeometry::new(geom.depth, f, geom.kernel, (1, 1));
        conv2d(grad_out, &wf, &vec![T::zero(); geom.depth], &g)?
    } else {
        Tensor4::zeros(input.dims())
    };
    let item = input.item_len();
    let w = MatRef::new(weights, f, k);
    let parts: Vec<(Vec<T>, Vec<T>)> = grad_in
        .data_mut()
        .par_chunks_mut((item * GROUP).max(1))
        .zip(input.data().par_chunks((item * GROUP).max(1)))
        .zip(grad_out.data().par_chunks((f * p * GROUP).max(1)))
        .map(|((dx_g, x_g), dy_g)| {
            let mut cols = vec![T::zero(); if f <= DIRECT_MAX_KERNELS { 0 } else { k * p }];
            let mut dcols = vec![T::zero(); if flip { 0 } else { k * p }];
            let mut gw = vec![T::zero(); f * k];
            let mut gb = vec![T::zero(); f];
            for ((dx_b, x_b), dy_b) in dx_g.chunks_mut(item).zip(x_g.chunks(item)).zip(dy_g.chunks(f * p)) {
                let dy = MatRef::new(dy_b, f, p);
                if f <= DIRECT_MAX_KERNELS {
                    low.direct_weight_grad(x_b, dy_b, f, &mut gw);
                } else {
                    low.im2col(x_b, &mut cols);
                    gemm(dy, MatRef::new(&cols, k, p).t(), T::one(), &mut gw);
                }
                sum_bias(dy_b, &mut gb, p);
                if !flip {
                    gemm(w.t(), dy, T::zero(), &mut dcols);
                    low.col2im(&dcols, dx_b);
                }
            }
            (gw, gb)
        })
        .collect();
    let (gw, gb) = reduce_partials(parts, f * k, f);
    Ok(ConvGrads { input: grad_in, weights: gw, biases: gb })
}

/// Transposed convolution, output `width * sw x height * sh`. With zero
/// biases this is the exact adjoint of [`conv2d`] with the same weights.
pub fn deconv2d<T: Scalar>(input: &Tensor4<T>, weights: &[T], biases: &[T], geom: &ConvGeometry) -> Result<Tensor4<T>> {
    check_params(geom, weights, biases)?;
    check_depth(input, geom.depth, "deconv2d")?;
    let (ow, oh) = geom.deconv_output(input.width(), input.height());
    let low = Lowering::new(geom.kernels, (ow, oh), geom.kernel, geom.stride);
    debug_assert_eq!(low.small, (input.width(), input.height()));
    let (k, p, cin) = (low.rows(), low.positions(), geom.depth);
    let mut out = Tensor4::zeros([input.batch(), geom.kernels, ow, oh]);
    if out.is_empty() {
        return Ok(out);
    }
    let w = MatRef::new(weights, cin, k);
    let item = out.item_len();
    out.data_mut()
        .par_chunks_mut(item)
        .zip(input.data().par_chunks(input.item_len()))
        .for_each_init(
            || vec![T::zero(); k * p],
            |cols, (out_b, x_b)| {
                gemm(w.t(), MatRef::new(x_b, cin, p), T::zero(), cols);
                low.col2im(cols, out_b);
                add_bias(out_b, biases, ow * oh);
            },
        );
    Ok(out)
}

/// Gradients of `sum(grad_out * deconv2d(input))`.
pub fn deconv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    geom: &ConvGeometry,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    check_weights(geom, weights)?;
    check_depth(input, geom.depth, "deconv2d_backward")?;
    let (ow, oh) = geom.deconv_output(input.width(), input.height());
    grad_out.expect_dims([input.batch(), geom.kernels, ow, oh], "deconv2d_backward grad_out")?;
    let low = Lowering::new(geom.kernels, (ow, oh), geom.kernel, geom.stride);
    let (k, p, cin) = (low.rows(), low.positions(), geom.depth);

    let mut grad_in = Tensor4::zeros(input.dims());
    let item = input.item_len();
    let out_item = geom.kernels * ow * oh;
    let w = MatRef::new(weights, cin, k);
    let parts: Vec<(Vec<T>, Vec<T>)> = grad_in
        .data_mut()
        .par_chunks_mut((item * GROUP).max(1))
        .zip(input.data().par_chunks((item * GROUP).max(1)))
        .zip(grad_out.data().par_chunks((out_item * GROUP).max(1)))
        .map(|((dx_g, x_g), dy_g)| {
            let mut dcols = vec![T::zero(); k * p];
            let mut gw = vec![T::zero(); cin * k];
            let mut gb = vec![T::zero(); geom.kernels];
            for ((dx_b, x_b), dy_b) in dx_g.chunks_mut(item).zip(x_g.chunks(item)).zip(dy_g.chunks(out_item)) {
                low.im2col(dy_b, &mut dcols);
                sum_bias(dy_b, &mut gb, ow * oh);
                let dc = MatRef::new(&dcols, k, p);
                gemm(w, dc, T::zero(), dx_b);
                gemm(MatRef::new(x_b, cin, p), dc.t(), T::one(), &mut gw);
            }
            (gw, gb)
        })
        .collect();
    let (gw, gb) = reduce_partials(parts, cin * k, geom.kernels);
    Ok(ConvGrads { input: grad_in, weights: gw, biases: gb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct quadruple loop over the zero-padded receptive field.
    fn naive_conv(x: &Tensor4<f64>, w: &[f64], b: &[f64], g: &ConvGeometry) -> Tensor4<f64> {
        let (kw, kh) = g.kernel;
        let (sw, sh) = g.stride;
        let (ow, oh) = g.conv_output(x.width(), x.height());
        let pw = same_padding(x.width(), kw, sw) as isize;
        let ph = same_padding(x.height(), kh, sh) as isize;
        Tensor4::from_fn([x.batch(), g.kernels, ow, oh], |[n, f, i, j]| {
            let mut acc = b[f];
            for c in 0..g.depth {
                for u in 0..kw {
                    for v in 0..kh {
                        let wi = (i * sw + u) as isize - pw;
                        let hj = (j * sh + v) as isize - ph;
                        if wi >= 0 && hj >= 0 && (wi as usize) < x.width() && (hj as usize) < x.height() {
                            acc += w[((f * g.depth + c) * kw + u) * kh + v] * x.get([n, c, wi as usize, hj as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn same_padding_matches_tf_convention() {
        assert_eq!(same_padding(32, 5, 2), 1);
        assert_eq!(same_padding(32, 3, 1), 1);
        assert_eq!(same_padding(32, 1, 1), 0);
        assert_eq!(same_padding(1, 1, 1), 0);
    }

    #[test]
    fn degenerate_single_entry() {
        let g = ConvGeometry::new(1, 1, (1, 1), (1, 1));
        let x = Tensor4::from_vec([1, 1, 1, 1], vec![3.0f64]).unwrap();
        let y = conv2d(&x, &[2.0], &[0.5], &g).unwrap();
        assert_eq!(y.data(), &[6.5]);

        let dy = Tensor4::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        let gr = conv2d_backward(&x, &[2.0], &g, &dy).unwrap();
        assert_eq!(gr.weights, vec![3.0]);
        assert_eq!(gr.input.data(), &[2.0]);
        assert_eq!(gr.biases, vec![1.0]);
    }

    #[test]
    fn constant_input_window_sum() {
        let g = ConvGeometry::new(1, 1, (3, 5), (1, 2));
        let x = Tensor4::filled([1, 1, 32, 32], 1.0f64);
        let y = conv2d(&x, &[1.0; 15], &[0.0], &g).unwrap();
        assert_eq!(y.dims(), [1, 1, 32, 16]);
        for i in 1..31 {
            for j in 1..15 {
                assert_eq!(y.get([0, 0, i, j]), 15.0);
            }
        }
        // first row of output only sees two of three kernel rows
        assert_eq!(y.get([0, 0, 0, 5]), 10.0);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (dims, g) in [
            ([1, 16, 8, 8], ConvGeometry::new(16, 16, (3, 3), (1, 1))),
            ([3, 2, 7, 9], ConvGeometry::new(4, 2, (3, 5), (1, 2))),
            ([2, 3, 5, 6], ConvGeometry::new(2, 3, (3, 3), (2, 2))),
            ([2, 5, 6, 4], ConvGeometry::new(1, 5, (3, 3), (1, 1))),
        ] {
            let x = random(dims, &mut rng);
            let w: Vec<f64> = (0..g.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..g.kernels).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv2d(&x, &w, &b, &g).unwrap();
            let slow = naive_conv(&x, &w, &b, &g);
            assert_eq!(fast.dims(), slow.dims());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn depth_mismatch_is_a_shape_error() {
        let g = ConvGeometry::new(2, 3, (3, 3), (1, 1));
        let x = Tensor4::<f32>::zeros([1, 2, 4, 4]);
        let err = conv2d(&x, &vec![0.0; g.weight_len()], &[0.0; 2], &g).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        assert!(deconv2d(&x, &vec![0.0; g.weight_len()], &[0.0; 2], &g).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeometry::new(3, 2, (3, 5), (1, 2));
        let x = random([2, 2, 4, 6], &mut rng);
        let w: Vec<f64> = (0..g.weight_len()).map(|_| rng.random()).collect();
        let gr = conv2d_backward(&x, &w, &g, &Tensor4::zeros([2, 3, 4, 3])).unwrap();
        assert!(gr.input.data().iter().chain(&gr.weights).chain(&gr.biases).all(|&v| v == 0.0));
        let xd = random([2, 3, 4, 3], &mut rng);
        let gd = deconv2d_backward(&xd, &w.iter().map(|v| v * 2.0).collect::<Vec<_>>(), &ConvGeometry::new(2, 3, (3, 5), (1, 2)), &Tensor4::zeros([2, 2, 4, 6])).unwrap();
        assert!(gd.input.data().iter().chain(&gd.weights).chain(&gd.biases).all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_shapes_and_pointwise_case() {
        let g = ConvGeometry::new(1, 1, (3, 5), (1, 2));
        let x = Tensor4::<f64>::filled([1, 1, 4, 4], 1.0);
        assert_eq!(deconv2d(&x, &[0.0; 15], &[0.0], &g).unwrap().dims(), [1, 1, 4, 8]);

        let g1 = ConvGeometry::new(1, 1, (1, 1), (1, 1));
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let y = deconv2d(&x, &[3.0], &[1.0], &g1).unwrap();
        assert_eq!(y.data(), &[4.0, -5.0, 2.5, 13.0]);
        let dy = Tensor4::filled([1, 1, 2, 2], 1.0);
        let gr = deconv2d_backward(&x, &[3.0], &g1, &dy).unwrap();
        assert_eq!(gr.input.data(), &[3.0; 4]);
        assert_eq!(gr.weights, vec![3.5]);
        assert_eq!(gr.biases, vec![4.0]);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = ConvGeometry::new(4, 3, (3, 3), (1, 1));
        let x = random([19, 3, 6, 6], &mut rng).cast::<f32>();
        let dy = random([19, 4, 6, 6], &mut rng).cast::<f32>();
        let w: Vec<f32> = (0..g.weight_len()).map(|_| rng.random()).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| conv2d_backward(&x, &w, &g, &dy).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
