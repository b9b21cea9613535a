//! Reverse-mode differentiation over a linear tape of tensor primitives,
//! together with the parameter store, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod param;
mod tape;

pub use adam::{adam_step, Adam, AdamHyper, AdamState};
pub use gradcheck::{
    finite_diff_check, finite_diff_check_with, tape_gradients, EntrySelection, GradCheckReport, WorstEntry,
};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{Gradients, PoolSpec, Tape, Var, LEAKY_RELU_SLOPE, TANH_LIMIT};
