mod codec;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod multinet;
pub mod nnops;
pub mod synthdata;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{iou, BBox};
pub use tensor::{Tape, Tensor, Var};
