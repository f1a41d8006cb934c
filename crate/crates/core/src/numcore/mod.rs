//! Small differentiable kernels: a softmax MLP policy, an LSTM cell with a
//! scalar head and its backpropagation through time, categorical sampling,
//! initialization, gradient ascent and finite-difference checking.
//!
//! Everything is generic over [`Scalar`]; the training code instantiates the
//! kernels at `f64`.

mod checkpoint;
mod gradcheck;
mod init;
mod lstm;
mod mlp;
mod optim;
mod params;
mod sample;

use std::fmt::Debug;

pub use checkpoint::{
    meta_path, read_checkpoint, write_checkpoint, CheckpointMeta, Checkpointable,
};
pub use gradcheck::{central_difference, max_relative_error, relative_error};
pub use init::{init_lstm, init_mlp, xavier_bound};
pub use lstm::{lstm_bptt, lstm_bptt_into, lstm_step, LstmCache, LstmParams, LstmState, StateGrad};
pub use mlp::{mlp_forward, mlp_grad_logprob, mlp_grad_logprob_into, MlpCache, MlpParams};
pub use optim::{apply_ascent, clip_global_norm, Adam, Optimizer, OptimizerKind};
pub use params::{Activation, FlatParams, GradBuffer, Layout};
pub use sample::sample_categorical;

/// Floating-point element type of every kernel.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + std::iter::Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl<T> Scalar for T where
    T: num_traits::Float
        + num_traits::FromPrimitive
        + num_traits::NumAssign
        + std::iter::Sum
        + Debug
        + Default
        + Send
        + Sync
        + 'static
{
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn check_finite<T: Scalar>(values: &[T], what: &str) -> crate::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::Numeric(format!("non-finite entry in {what}")))
    }
}
