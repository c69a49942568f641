use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Slope of the negative branch.
pub const LEAKY_SLOPE: f64 = 0.3;

#[inline]
pub fn leaky_relu_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x * T::from_f64_lossy(LEAKY_SLOPE)
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(leaky_relu_scalar)
}

/// Slope 1 where `x >= 0`, 0.3 elsewhere.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad_out.expect_dims(x.dims(), "leaky_relu_backward grad_out")?;
    let slope = T::from_f64_lossy(LEAKY_SLOPE);
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x >= T::zero() { g } else { g * slope })
        .collect();
    Tensor4::from_vec(x.dims(), data)
}

/// Logistic function evaluated without overflow for any finite input.
///
/// The result is kept inside the open interval: where the exact value
/// rounds to 0 or 1 it is pinned to the nearest representable interior
/// value.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / (one + one);
    s.max(T::min_positive_value()).min(hi)
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

/// Backward from the forward *output* `y`: `dy * y * (1 - y)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad_out.expect_dims(y.dims(), "sigmoid_backward grad_out")?;
    let data = y.data().iter().zip(grad_out.data()).map(|(&y, &g)| g * y * (T::one() - y)).collect();
    Tensor4::from_vec(y.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leaky_relu_points() {
        assert_eq!(leaky_relu_scalar(2.0f64), 2.0);
        assert_eq!(leaky_relu_scalar(-1.0f64), -0.3);
        assert_eq!(leaky_relu_scalar(0.0f64), 0.0);
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![0.0f64, -2.0, 1.0]).unwrap();
        let g = leaky_relu_backward(&x, &Tensor4::filled([1, 1, 1, 3], 1.0)).unwrap();
        assert_eq!(g.data(), &[1.0, 0.3, 1.0]);
    }

    #[test]
    fn sigmoid_points_and_range() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        for x in [-500.0f64, -40.0, 40.0, 500.0] {
            let s = sigmoid_scalar(x);
            assert!(s > 0.0 && s < 1.0, "{x} -> {s}");
        }
        for x in [-500.0f32, 500.0] {
            let s = sigmoid_scalar(x);
            assert!(s > 0.0 && s < 1.0 && s.is_finite());
        }
    }

    #[test]
    fn sigmoid_derivative_matches_central_difference() {
        let h = 1e-5;
        for i in -40..=40 {
            let x = i as f64 * 0.2;
            let s = sigmoid_scalar(x);
            let analytic = s * (1.0 - s);
            let numeric = (sigmoid_scalar(x + h) - sigmoid_scalar(x - h)) / (2.0 * h);
            assert!((analytic - numeric).abs() / analytic < 1e-6, "at {x}");
        }
    }

    proptest! {
        #[test]
        fn leaky_relu_is_pointwise_exact(x in -1e12f64..1e12) {
            let want = if x >= 0.0 { x } else { 0.3 * x };
            prop_assert_eq!(leaky_relu_scalar(x), want);
        }

        #[test]
        fn sigmoid_symmetry(x in -30.0f64..30.0) {
            prop_assert!((sigmoid_scalar(x) - (1.0 - sigmoid_scalar(-x))).abs() < 1e-12);
        }
    }
}
