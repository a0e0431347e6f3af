//! Layers built on the tape: convolution, pooling, dense layers,
//! activations, channel stacking and SPP region pooling.
//!
//! Spatial tensors are `H×W×C`. Layer structs hold tape handles to their
//! parameters; storage lives in a [`ParamGroup`](crate::tensor::ParamGroup).

mod activation;
mod conv;
mod dense;
mod pool;
mod spp;
mod stack;

pub use conv::ConvLayer;
pub use dense::FCLayer;
pub use spp::SppGrid;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// `(H, W, C)` of a rank-3 tensor on the tape.
pub(crate) fn hwc(tape: &Tape, x: Var, op: &'static str) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::InvalidShape {
            op,
            msg: format!("expected H×W×C input, got {s:?}"),
        }),
    }
}
