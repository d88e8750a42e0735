//! Small dense differentiable-array engine.
//!
//! [`Tape`] records primitive applications on [`Array`] values and replays
//! them in reverse to produce gradients; [`adam_step`] consumes those
//! gradients. [`grad_check`] compares tape gradients with central finite
//! differences and is what the test suites lean on.

mod adam;
mod array;
mod check;
mod error;
mod params;
mod sparse;
pub mod store;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::Array;
pub use check::{grad_check, relative_error, GradCheckReport, DEFAULT_STEP, RELATIVE_FLOOR};
pub use error::{Error, Result};
pub use params::ParamSet;
pub use sparse::SparseRows;
pub use tape::{stable_sigmoid, Gradients, Tape, Var};
