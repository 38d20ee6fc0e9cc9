//! Numerical consumer theory for subjective-value vector fields.
//!
//! Given a field `g` on the strictly positive orthant, whose component ratios
//! are the consumer's exchange rates between goods, this crate
//!
//! - recovers the induced utility and preference relation by integrating the
//!   planar indifference flow ([`preference`]),
//! - tests the weak weak axiom, the weak axiom, the differential conditions
//!   and Ville's axiom, and builds explicit Ville curves ([`axioms`]),
//! - solves the transaction-stopping demand and checks it against utility
//!   maximization ([`demand`]),
//! - simulates improvement processes and classifies their stability
//!   ([`dynamics`]).
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod axioms;
pub mod cheat;
pub mod cli;
pub mod demand;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod ode;
pub mod preference;
pub mod report;
pub mod sampling;

pub use error::{Error, Result};
pub use field::{Builtin, Bundle, Field, FieldSpec, Rescaled};
pub use ode::OdeSettings;
