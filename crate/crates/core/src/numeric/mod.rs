//! Dense matrices, reverse-mode differentiation, optimizers and gradient checking.

mod gradcheck;
mod matrix;
mod optim;
mod params;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport, GradFailure};
pub use matrix::{dot, Matrix};
pub use optim::{sgd_step, Optimizer};
pub use params::{ParamBlob, ParamId, ParamSegment, ParamStore, PARAM_FORMAT_VERSION};
pub use tape::{Segments, Tape, Var};

use thiserror::Error;

/// Slope used for every leaky-ReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum NumericError {
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("unsupported parameter format version {0}")]
    UnsupportedVersion(u32),
    #[error("parameter {name}: shape {expected:?} does not match {found} values")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: usize,
    },
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
}

/// Records one forward pass with `build`, back-propagates from its scalar
/// result, and accumulates gradients into `params`.
///
/// Gradients are accumulated, not overwritten; callers zero them between steps
/// (every optimizer step does). A non-finite loss leaves the gradients untouched.
pub fn forward_backward<F>(params: &mut ParamStore, build: F) -> Result<f64, NumericError>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, params);
    let value = tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(NumericError::NonFiniteLoss(value));
    }
    tape.backward(loss, params);
    Ok(value)
}
