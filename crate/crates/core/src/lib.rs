//! Provable-in-practice upper bounds on a classifier's target error under
//! distribution shift.
//!
//! The bound adds the source error of the classifier under test to the
//! largest disagreement discrepancy a linear critic can achieve between the
//! unlabeled target sample and the labeled source sample, plus a Hoeffding
//! correction for finite holdouts. The crate also carries the usual
//! comparison estimators (AC, DoC, ATC, COT), the feature reductions and
//! validity score used to tighten the bound, and a seeded synthetic harness
//! for checking coverage end to end.

pub mod baselines;
pub mod bound;
pub mod critic;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod reduction;
pub mod shift;

pub use error::{Error, Result};
