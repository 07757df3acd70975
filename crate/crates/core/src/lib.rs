//! Deep factor model: a feed-forward return model over stock factor descriptors,
//! layer-wise relevance propagation to explain its predictions, a linear
//! baseline, and a walk-forward quintile backtest.
//!
//! The numeric core ([`net`], [`lrp`], [`baseline`], [`attribution`]) is generic
//! over [`Scalar`]; the data pipeline works in `f64`. The aliases below fix the
//! common `f64` instantiations.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod backtest;
pub mod baseline;
pub mod data;
pub mod error;
pub mod factors;
pub mod lrp;
pub mod month;
pub mod net;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use month::Month;
pub use scalar::Scalar;

pub type Network64 = net::Network<f64>;
pub type Network32 = net::Network<f32>;
pub type ForwardTrace64 = net::ForwardTrace<f64>;
pub type Gradients64 = net::Gradients<f64>;
pub type RelevanceVector64 = lrp::RelevanceVector<f64>;
pub type LinearModel64 = baseline::LinearModel<f64>;
pub type FactorAttribution64 = attribution::FactorAttribution<f64>;
