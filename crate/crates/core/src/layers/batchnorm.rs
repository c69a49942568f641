use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Variance floor added before the square root.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in the running update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// What the backward pass needs from a training-mode forward.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub(crate) xhat: Tensor4<T>,
    pub(crate) inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormOutput<T> {
    pub output: Tensor4<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub cache: BatchNormCache<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T> {
    pub input: Tensor4<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

fn check_channels<T: Scalar>(input: &Tensor4<T>, scale: &[T], shift: &[T]) -> Result<()> {
    let d = input.depth();
    if scale.len() != d || shift.len() != d {
        return Err(Error::shape(format!(
            "batchnorm over {d} channels got {} scales and {} shifts",
            scale.len(),
            shift.len()
        )));
    }
    Ok(())
}

/// Iterate `(channel, contiguous plane)` over every batch item.
fn planes<T: Scalar>(t: &Tensor4<T>) -> impl Iterator<Item = (usize, &[T])> {
    let p = t.width() * t.height();
    let d = t.depth();
    t.data().chunks(p.max(1)).enumerate().map(move |(i, c)| (i % d, c))
}

/// `Σ f(x)` in `f64` over eight interleaved lanes; deterministic for a
/// given length.
#[inline]
fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a += f(x.as_f64());
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|&x| f(x.as_f64())).sum();
    acc.iter().sum::<f64>() + tail
}

/// Normalize each channel with the statistics of this batch.
///
/// Statistics are the biased mean and variance over `(batch, width,
/// height)`, accumulated in `f64`.
pub fn batchnorm_train<T: Scalar>(input: &Tensor4<T>, scale: &[T], shift: &[T], eps: f64) -> Result<BatchNormOutput<T>> {
    check_channels(input, scale, shift)?;
    if input.batch() < 2 {
        return Err(Error::shape(format!(
            "batchnorm in train mode needs a batch of at least 2, got {}",
            input.batch()
        )));
    }
    let d = input.depth();
    let count = (input.batch() * input.width() * input.height()) as f64;
    let mut sum = vec![0.0f64; d];
    for (c, plane) in planes(input) {
        sum[c] += lane_sum(plane, |v| v);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; d];
    for (c, plane) in planes(input) {
        let m = mean[c];
        sq[c] += lane_sum(plane, |v| (v - m) * (v - m));
    }
    let var: Vec<f64> = sq.iter().map(|s| s / count).collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let p = input.width() * input.height();
    let mut xhat = Tensor4::zeros(input.dims());
    let mut output = Tensor4::zeros(input.dims());
    for (i, ((dst_hat, dst), src)) in xhat
        .data_mut()
        .chunks_mut(p.max(1))
        .zip(output.data_mut().chunks_mut(p.max(1)))
        .zip(input.data().chunks(p.max(1)))
        .enumerate()
    {
        let c = i % d;
        let (m, s) = (T::from_f64_lossy(mean[c]), T::from_f64_lossy(inv_std[c]));
        let (g, b) = (scale[c], shift[c]);
        for ((h, o), &x) in dst_hat.iter_mut().zip(dst.iter_mut()).zip(src) {
            let n = (x - m) * s;
            *h = n;
            *o = g * n + b;
        }
    }
    Ok(BatchNormOutput {
        output,
        batch_mean: mean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        batch_var: var.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        cache: BatchNormCache { xhat, inv_std: inv_std.iter().map(|&v| T::from_f64_lossy(v)).collect() },
    })
}

/// Normalize with frozen running statistics.
pub fn batchnorm_infer<T: Scalar>(
    input: &Tensor4<T>,
    scale: &[T],
    shift: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<Tensor4<T>> {
    check_channels(input, scale, shift)?;
    check_channels(input, running_mean, running_var)?;
    let d = input.depth();
    let (mul, add): (Vec<T>, Vec<T>) = (0..d)
        .map(|c| {
            let s = scale[c].as_f64() / (running_var[c].as_f64() + eps).sqrt();
            (T::from_f64_lossy(s), T::from_f64_lossy(shift[c].as_f64() - s * running_mean[c].as_f64()))
        })
        .unzip();
    let p = (input.width() * input.height()).max(1);
    let mut out = input.clone();
    for (i, plane) in out.data_mut().chunks_mut(p).enumerate() {
        let c = i % d;
        for v in plane {
            *v = *v * mul[c] + add[c];
        }
    }
    Ok(out)
}

/// Backward of [`batchnorm_train`] through the batch statistics.
pub fn batchnorm_backward<T: Scalar>(cache: &BatchNormCache<T>, scale: &[T], grad_out: &Tensor4<T>) -> Result<BatchNormGrads<T>> {
    let xhat = &cache.xhat;
    grad_out.expect_dims(xhat.dims(), "batchnorm_backward grad_out")?;
    let d = xhat.depth();
    let count = (xhat.batch() * xhat.width() * xhat.height()) as f64;
    let mut gshift = vec![0.0f64; d];
    let mut gscale = vec![0.0f64; d];
    for ((c, dy), (_, xh)) in planes(grad_out).zip(planes(xhat)) {
        gshift[c] += lane_sum(dy, |g| g);
        let (mut acc, mut tail) = ([0.0f64; 8], 0.0);
        let (gc, hc) = (dy.chunks_exact(8), xh.chunks_exact(8));
        for (&g, &h) in gc.remainder().iter().zip(hc.remainder()) {
            tail += g.as_f64() * h.as_f64();
        }
        for (g8, h8) in gc.zip(hc) {
            for ((a, &g), &h) in acc.iter_mut().zip(g8).zip(h8) {
                *a += g.as_f64() * h.as_f64();
            }
        }
        gscale[c] += acc.iter().sum::<f64>() + tail;
    }
    let p = (xhat.width() * xhat.height()).max(1);
    let mut gin = Tensor4::zeros(xhat.dims());
    for (i, ((dst, dy), xh)) in gin
        .data_mut()
        .chunks_mut(p)
        .zip(grad_out.data().chunks(p))
        .zip(xhat.data().chunks(p))
        .enumerate()
    {
        let c = i % d;
        // scale * inv_std * (g - mean(g) - xhat * mean(g * xhat))
        let k = T::from_f64_lossy(scale[c].as_f64() * cache.inv_std[c].as_f64());
        let (mg, mgh) = (T::from_f64_lossy(gshift[c] / count), T::from_f64_lossy(gscale[c] / count));
        for ((o, &g), &h) in dst.iter_mut().zip(dy).zip(xh) {
            *o = k * (g - mg - h * mgh);
        }
    }
    Ok(BatchNormGrads {
        input: gin,
        scale: gscale.into_iter().map(T::from_f64_lossy).collect(),
        shift: gshift.into_iter().map(T::from_f64_lossy).collect(),
    })
}

/// `running <- momentum * running + (1 - momentum) * batch` for mean and
/// variance; returns the new pair and leaves the inputs untouched.
pub fn updated_running_stats<T: Scalar>(
    running_mean: &[T],
    running_var: &[T],
    batch_mean: &[T],
    batch_var: &[T],
    momentum: f64,
) -> (Vec<T>, Vec<T>) {
    let blend = |r: &[T], b: &[T]| -> Vec<T> {
        r.iter()
            .zip(b)
            .map(|(&r, &b)| T::from_f64_lossy(momentum * r.as_f64() + (1.0 - momentum) * b.as_f64()))
            .collect()
    };
    (blend(running_mean, batch_mean), blend(running_var, batch_var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channel_stats(t: &Tensor4<f64>, c: usize) -> (f64, f64) {
        let vals: Vec<f64> = planes(t).filter(|(ch, _)| *ch == c).flat_map(|(_, p)| p.to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor4::from_fn([4, 3, 5, 6], |[_, c, _, _]| rng.random_range(-2.0..3.0) * (c + 1) as f64 + c as f64);
        let out = batchnorm_train(&x, &[1.0; 3], &[0.0; 3], BN_EPSILON).unwrap();
        for c in 0..3 {
            let (m, v) = channel_stats(&out.output, c);
            assert!(m.abs() < 1e-6, "mean {m}");
            // the variance floor shrinks unit variance by var / (var + eps)
            assert!((v - 1.0).abs() < 1e-5, "var {v}");
        }
    }

    #[test]
    fn infer_matches_train_with_batch_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor4::from_fn([3, 2, 4, 4], |_| rng.random_range(-1.0f64..1.0));
        let tr = batchnorm_train(&x, &[1.0; 2], &[0.0; 2], BN_EPSILON).unwrap();
        let inf = batchnorm_infer(&x, &[1.0; 2], &[0.0; 2], &tr.batch_mean, &tr.batch_var, BN_EPSILON).unwrap();
        for (a, b) in tr.output.data().iter().zip(inf.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn train_mode_rejects_single_item_batches() {
        let x = Tensor4::<f32>::zeros([1, 2, 3, 3]);
        assert!(matches!(batchnorm_train(&x, &[1.0; 2], &[0.0; 2], BN_EPSILON), Err(Error::Shape(_))));
        assert!(batchnorm_infer(&x, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0; 2], BN_EPSILON).is_ok());
    }

    #[test]
    fn running_update_is_pure_and_blends() {
        let rm = vec![0.0f64, 1.0];
        let rv = vec![1.0f64, 1.0];
        let (m, v) = updated_running_stats(&rm, &rv, &[1.0, 1.0], &[2.0, 0.5], BN_MOMENTUM);
        assert_eq!(rm, vec![0.0, 1.0]);
        assert!((m[0] - 0.1).abs() < 1e-15 && (m[1] - 1.0).abs() < 1e-15);
        assert!((v[0] - 1.1).abs() < 1e-15 && (v[1] - 0.95).abs() < 1e-15);
    }
}
