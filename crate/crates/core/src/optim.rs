use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates for a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, hyper: AdamHyper) -> Result<Self> {
        let h = hyper;
        if !(h.lr > 0.0 && h.epsilon > 0.0 && (0.0..1.0).contains(&h.beta1) && (0.0..1.0).contains(&h.beta2)) {
            return Err(Error::config(format!("invalid Adam hyperparameters {hyper:?}")));
        }
        Ok(Self { step: 0, m: vec![T::zero(); len], v: vec![T::zero(); len], hyper })
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// A gradient with any non-finite entry is rejected before anything is
/// modified.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.v.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {:?}", grads[i])));
    }
    state.step += 1;
    let AdamHyper { lr, beta1, beta2, epsilon } = state.hyper;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
    let (nb1, nb2) = (T::from_f64_lossy(1.0 - beta1), T::from_f64_lossy(1.0 - beta2));
    // lr * mhat / (sqrt(vhat) + eps) with the corrections folded in
    let step_size = T::from_f64_lossy(lr / c1);
    let inv_sqrt_c2 = T::from_f64_lossy(1.0 / c2.sqrt());
    let eps = T::from_f64_lossy(epsilon);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + nb1 * g;
        *v = b2 * *v + nb2 * g * g;
        *p = *p - step_size * *m / (v.sqrt() * inv_sqrt_c2 + eps);
    }
    Ok(())
}
