//! Index of immersions `R^n -> R^2n` fixed at infinity.
//!
//! Two independent routes to the same integer:
//! * signed count of self-intersections ([`intersections`]);
//! * integral of the pulled-back Stiefel form ([`stiefel_form`],
//!   [`quadrature`]).
//!
//! For `n = 1` the integral is the rotation index of a plane curve; for odd
//! `n >= 3` only the parity of the number of double points is defined.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod immersion;
pub mod intersections;
pub mod linalg;
pub mod quadrature;
pub mod stiefel_form;

pub use error::{Error, Result};
