//! Exact analysis of cyclic polling systems in which Poisson arrival rates
//! depend on where the server currently is.
//!
//! Queues are 0-based in the API and printed 1-based. The cycle is
//! V1, S1, ..., VN, SN, with `V` a visit and `S` the switch-over that follows.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod model;
pub mod mva;
pub mod numeric;
pub mod pcl;
pub mod simulator;
pub mod stability;
pub mod strategy;
pub mod transforms;
#[doc(hidden)]
pub mod testkit;

pub use error::{PollError, Result};
pub use model::{
    period_sequence, validate, Discipline, Distribution, PeriodId, PeriodKind, PollingModel,
    StrategyProfile,
};
