//! Equivalence of second-order linear differential operators acting in a
//! rank-`m` vector bundle over an `n`-dimensional chart.
//!
//! * [`tensor`]: symbols at a point, quadratic forms, complex eigen machinery.
//! * [`symbol`]: derived quadrics, the eigenframe, the `R_l` family, trace-word
//!   invariants and the regularity conditions.
//! * [`orbit`]: pointwise equivalence of symbols and simultaneous conjugacy.
//! * [`jet`], [`operator`]: truncated Taylor expansions and exact operator calculus.
//! * [`connection`]: quantization, the associated connection and the subsymbol.
//! * [`model`]: invariant fields on a chart, natural coordinates and models.
//! * [`io`]: JSON documents used by the `opequiv` command-line tool.
//! * [`cli`]: the command-line front end.
//! * [`par`], [`sampling`]: batch evaluation and random fixtures.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod connection;
pub mod error;
pub mod io;
pub mod jet;
pub mod model;
pub mod operator;
pub mod orbit;
pub mod par;
pub mod sampling;
pub mod symbol;
pub mod tensor;

pub use error::{Error, Result};
