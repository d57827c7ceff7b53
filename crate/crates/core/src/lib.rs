//! Numerical laboratory for the generalized pseudo-Hopf bifurcation of planar
//! piecewise-smooth systems.
//!
//! A system is a pair of planar vector fields glued along the switching line
//! `y = 0`. Translating the upper field by `b` along the line creates a sliding
//! segment and, for one sign of `b`, a crossing limit cycle. This crate
//!
//! * computes half-return maps and flight times, either by integrating the
//!   flow ([`flow`], [`returns`]) or from analytic model maps,
//! * finds the crossing cycle of the translated family and its period
//!   ([`bifurcation`]),
//! * predicts how position and period scale with `b` ([`asymptotics`]),
//! * measures those laws over sweeps and compares them with the predictions
//!   ([`sweepfit`]),
//! * renders reports for the command-line front end ([`cli`]).
//!
//! The runnable programs under `examples/` walk through each capability.

// `!(a < b)` is used on purpose so that NaN lands in the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod bifurcation;
pub mod cli;
pub mod fields;
pub mod flow;
pub mod numeric;
pub mod returns;
pub mod sweepfit;

pub use bifurcation::{find_crossing_cycle, sign_data, CycleError, CycleRecord, SignTriple};
pub use fields::{make_builtin, PiecewiseSystem, PlanarField, Poly2};
pub use flow::{flow_to_section, Direction, Half, IntegrationLimits, SectionHit};
pub use returns::{half_return, ReturnData, ReturnProvider, Side};
