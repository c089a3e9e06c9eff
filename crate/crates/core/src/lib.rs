//! Dynamic movement primitives as probabilistic linear dynamical systems.
//!
//! A primitive is learned from demonstrations ([`imitation`]), realized per
//! DOF as a controlled LDS ([`lds`]) and executed with a Kalman filter
//! ([`kalman`]). Sensor feedback modulates the plan through the innovation
//! update, and the per-step predictive log-likelihood feeds an online failure
//! detector ([`monitor`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod dmp;
pub mod error;
pub mod experiment;
pub mod imitation;
pub mod kalman;
pub mod lds;
pub mod model;
pub mod monitor;
pub mod trajectory;

pub use error::{DmpError, Result};
pub use imitation::{learn_primitive, DemoSet, LearnConfig};
pub use model::{PrimitiveModel, TaskSpec};
pub use monitor::{classify_execution, MonitorReport, Verdict};
