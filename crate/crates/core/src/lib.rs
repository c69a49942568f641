//! ENet: a lightweight convolutional autoencoder for massive-MIMO CSI
//! feedback, together with everything needed to train and study it at desk
//! scale.
//!
//! * [`tensor`], [`layers`], [`optim`], [`gradcheck`]: a small dense layer
//!   core with hand-written forward and backward passes.
//! * [`channel`]: a clustered multipath generator and the on-disk dataset
//!   format.
//! * [`transform`]: the angular-delay transform, truncation and the `[0, 1]`
//!   plane normalization, with their inverses.
//! * [`correlation`]: angular and delay correlation profiles and the
//!   real/imaginary equality check.
//! * [`codec`]: the encoder/decoder network, parameter accounting and
//!   checkpoints.
//! * [`train`]: training on real planes, evaluation on both parts.

pub mod channel;
pub mod codec;
pub mod correlation;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
pub use matrix::ComplexMatrix;
pub use scalar::Scalar;
pub use tensor::Tensor4;
