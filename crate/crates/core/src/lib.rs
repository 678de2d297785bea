//! Ni-MH discharge modelling.
//!
//! The discharge curve is approximated by `f(t) = A/(B+t) + C/(D+t) + E·t + F`.
//! This crate evaluates and fits that model, regresses its parameters against
//! load, pulse period, duty cycle and temperature, simulates constant and
//! pulsed-load discharges and charging transients, and implements the
//! sliding-window -ΔV full-charge detector.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod curve;
pub mod detector;
pub mod error;
pub mod fitting;
pub mod io;
pub mod lm;
pub mod model;
pub mod phases;
pub mod plot;
pub mod program;
pub mod simulator;

pub use curve::{CurveMeta, DischargeCurve, Sample};
pub use error::{Error, Result};
pub use model::{eval_model, time_to_cutoff, validate_params, ModelParams, ValidityReport};
pub use program::{parse_program, serialize_program, LoadProgram, LoadUnit};
