//! Optimal demand-response contracts for a continuum of consumers with
//! mean-field interaction and common noise.
//!
//! The crate computes closed-form payment-rate schedules, the efforts they
//! induce, principal values and contract comparisons, and checks them
//! against a conditional-law particle simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod cli;
pub mod mfsim;
pub mod model;
pub mod numerics;
pub mod principal;
