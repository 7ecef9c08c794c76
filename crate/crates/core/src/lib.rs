//! Portfolio risk and margining engine.
//!
//! Value-at-Risk and Expected Shortfall under normal, historical and Monte
//! Carlo models; leverage limits derived from them; margin factors and the
//! trade approval rule built on top.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod book;
pub mod dataset;
pub mod derivatives;
pub mod error;
pub mod leverage;
pub mod margin;
pub mod market_data;
pub mod normal;
pub mod risk;
pub mod scenario;

pub use error::{Result, RiskError};
