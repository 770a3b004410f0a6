//! Experiments, generators and file formats for `lqr-mpi`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod io;
pub mod metrics;
pub mod problems;
pub mod protocols;
pub mod real;
pub mod solve;
