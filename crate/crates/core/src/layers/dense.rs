use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor4;

/// Gradients of a fully-connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    /// Same dims as the forward input.
    pub input: Tensor4<T>,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

fn check<T: Scalar>(input: &Tensor4<T>, weights: &[T], biases: &[T], inputs: usize, outputs: usize) -> Result<()> {
    if input.item_len() != inputs {
        return Err(Error::shape(format!("dense layer takes {inputs} inputs, got {}", input.item_len())));
    }
    if weights.len() != inputs * outputs || biases.len() != outputs {
        return Err(Error::shape(format!(
            "dense {inputs}->{outputs} needs {} weights and {outputs} biases, got {} and {}",
            inputs * outputs,
            weights.len(),
            biases.len()
        )));
    }
    Ok(())
}

/// `y = W x + b` for every batch item; `W` is row-major `outputs x inputs`.
/// Each item is flattened, so any `(depth, width, height)` with the right
/// entry count is accepted. Output dims are `(batch, outputs, 1, 1)`.
pub fn dense<T: Scalar>(input: &Tensor4<T>, weights: &[T], biases: &[T], outputs: usize) -> Result<Tensor4<T>> {
    let inputs = input.item_len();
    check(input, weights, biases, inputs, outputs)?;
    let b = input.batch();
    let mut out = Tensor4::zeros([b, outputs, 1, 1]);
    gemm(MatRef::new(input.data(), b, inputs), MatRef::new(weights, outputs, inputs).t(), T::zero(), out.data_mut());
    for row in out.data_mut().chunks_mut(outputs.max(1)) {
        row.iter_mut().zip(biases).for_each(|(v, &bias)| *v = *v + bias);
    }
    Ok(out)
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    outputs: usize,
    grad_out: &Tensor4<T>,
) -> Result<DenseGrads<T>> {
    let inputs = input.item_len();
    check(input, weights, &vec![T::zero(); outputs], inputs, outputs)?;
    let b = input.batch();
    grad_out.expect_dims([b, outputs, 1, 1], "dense_backward grad_out")?;
    let dy = MatRef::new(grad_out.data(), b, outputs);
    let mut gin = Tensor4::zeros(input.dims());
    gemm(dy, MatRef::new(weights, outputs, inputs), T::zero(), gin.data_mut());
    let mut gw = vec![T::zero(); outputs * inputs];
    gemm(dy.t(), MatRef::new(input.data(), b, inputs), T::zero(), &mut gw);
    let mut gb = vec![T::zero(); outputs];
    for row in grad_out.data().chunks(outputs.max(1)) {
        gb.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
    }
    Ok(DenseGrads { input: gin, weights: gw, biases: gb })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_return_input() {
        let x = Tensor4::from_vec([2, 3, 1, 1], vec![1.0f64, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let y = dense(&x, &w, &[0.0; 3], 3).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_row_sums() {
        let n = 7;
        let x = Tensor4::filled([1, n, 1, 1], 1.0f32);
        let y = dense(&x, &vec![1.0; n], &[0.0], 1).unwrap();
        assert_eq!(y.data(), &[n as f32]);
    }

    #[test]
    fn flattens_spatial_input() {
        let x = Tensor4::filled([2, 1, 2, 3], 1.0f64);
        assert_eq!(dense(&x, &[1.0; 12], &[0.5, 0.0], 2).unwrap().data(), &[6.5, 6.0, 6.5, 6.0]);
    }

    #[test]
    fn length_mismatch_is_a_shape_error() {
        let x = Tensor4::filled([1, 4, 1, 1], 1.0f64);
        assert!(matches!(dense(&x, &[1.0; 6], &[0.0; 2], 2), Err(Error::Shape(_))));
    }
}
