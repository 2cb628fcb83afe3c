//! Compliant-arm quadrotor simulator, contact-prioritized planner and
//! baseline planners, with a batch evaluation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod harness;
pub mod planners;
pub mod sensing;
pub mod trajgen;
pub mod vehicle;
pub mod world;

pub use error::{Error, Result};
