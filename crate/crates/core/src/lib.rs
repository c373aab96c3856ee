// Index loops mirror the math in the numeric kernels; `!(a < b)` is how
// the validators reject NaN along with out-of-order values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod container;
pub mod fusion;
pub mod geometry;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod structure;
pub mod theory;
pub mod training;
