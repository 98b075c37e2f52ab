#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Macroscopic freeway simulation with local, multivariable and
//! equity-aware coordinated ramp metering.

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod network;

pub use error::{Error, Result};
