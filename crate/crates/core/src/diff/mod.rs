//! Dense `f64` tensors, a reverse-mode tape, Adam, and a finite-difference
//! gradient oracle.

mod adam;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_grad, finite_diff_params, max_relative_error};
pub use params::{Bound, ParamId, ParamStore, StoredTensor};
pub use tape::{softmax_in_place, Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

/// Affine map `x * w + b` over rows.
pub fn affine<'p>(tape: &mut Tape<'p>, x: Var, w: Var, b: Var) -> crate::Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}
