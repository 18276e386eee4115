// `!(x >= y)` is used on purpose so that NaN falls into the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod duhamel;
pub mod error;
pub mod grid;
pub mod io;
pub mod linear;
pub mod nonlinear;
pub mod nonlocal;
pub mod norms;
pub mod propagator;
pub mod quadrature;
pub mod symbols;
