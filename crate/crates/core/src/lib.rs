//! Uhlig-extended (UE) and beta-Bartlett (BB) Wishart stochastic-volatility
//! processes: forward filtering, backward sampling of precision paths,
//! marginal-likelihood hyperparameter search and model comparison tools.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod compare;
pub mod error;
pub mod filter;
pub mod matops;
pub mod randsamp;
pub mod smoother;
pub mod specfun;
pub mod stats;
pub mod volproc;

pub use error::{Error, Result};
