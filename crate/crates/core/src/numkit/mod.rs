//! Dense 64-bit linear algebra, trainable parameters, seeded random streams
//! and the finite-difference gradient oracle.

mod gradcheck;
mod matrix;
mod param;
mod rng;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{matmul, relu, softmax_rows, Matrix};
pub use param::{ParamTensor, Parameterized};
pub use rng::{RngStream, StreamId};
pub(crate) use matrix::{dot as matrix_dot, log_sum_exp, softmax_in_place};
