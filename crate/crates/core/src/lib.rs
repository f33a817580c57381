//! Simulation lab for generalization lower bounds of uniformly stable
//! learning algorithms.
//!
//! [`construction`] holds a sparse hard case: a domain of signed, scaled
//! basis vectors, a sign-majority learning rule and the ℓ₁ loss. [`risk`]
//! evaluates its population and empirical risk, [`certify`] checks its
//! stability and loss bound numerically, [`anticoncentration`] verifies the
//! tail inequalities the argument rests on, and [`experiment`] runs seeded
//! Monte Carlo estimates of how often the gap clears `γ/4 + L/(32√n)`.

pub mod anticoncentration;
pub mod certify;
pub mod construction;
pub mod error;
pub mod experiment;
pub mod risk;
pub mod rng;

pub use construction::{ConstructionParams, Instance, LabeledExample, Prediction, Sign, TrainingSet};
pub use error::{LabError, Result};
