//! Exact enumeration, concentration functions and Monte Carlo tools for
//! singularity of square matrices with i.i.d. discrete entries.

pub mod bareiss;
pub mod distribution;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod levy;
pub mod modp;
pub mod par;
pub mod rational;
pub mod sampler;
pub mod smoothing;
pub mod spectral;
pub mod sphere;

pub use distribution::{DiscreteDist, DistStats, PredictedProbabilities};
pub use error::{Error, Result};
pub use rational::Rational;
