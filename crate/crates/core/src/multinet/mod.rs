//! The multi-task network: image encoder, task encoders and decoders,
//! the two integrators and the recurrent iteration schedule.

mod config;
mod encode;
mod model;


pub use config::{ArchConfig, Mode, Task, TaskConfig, TaskSet};
pub use model::{ForwardOptions, ForwardPass, Grounding, Multinet, MultinetOutput, StepVars};
