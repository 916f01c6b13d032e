//! Tests of the composite null δx·δy = 0 with standardized estimates
//! (Zx, Zy): closed-form minimax regions, Bayes-optimal regions from a
//! linear program, exact p-values, three-way Latin-square regions, and
//! the estimation and simulation plumbing around them.

pub mod bayes_lp;
pub mod closed_form;
pub mod error;
pub mod gof;
pub mod latin3;
pub mod mediation;
pub mod regions;
pub mod sim;
pub mod pvalue;
pub mod simplex;
pub mod statmath;

pub use error::{Error, Result};
pub use regions::{
    OutsideRule, Provenance, RegionKind, RejectionRegion2D, TestStatisticPair, WeightedRect,
};
pub use statmath::Interval;
