//! Open-set video domain adaptation on pre-extracted features.
//!
//! The pipeline trains a small adversarial network (shared transform,
//! classifier head, domain discriminator behind a gradient reversal layer)
//! on labeled source videos and unlabeled target videos, fits a
//! generalized extreme value distribution to the prediction entropies of
//! each predicted class, and uses the per-class entropy thresholds both to
//! weight target samples during domain alignment and to reject unknown
//! classes at inference time.

pub mod data;
pub mod entropy;
pub mod error;
pub mod gev;
pub mod model;
pub mod openset;
pub mod training;

mod optim;

pub use error::{Error, Result};
