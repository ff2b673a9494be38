//! Group-specific decision thresholds for a trained binary classifier.
//!
//! Logits are split into four cells by label and sensitive group, each cell
//! gets a fitted density, and a Gauss–Newton search over `(θ0, θ1)` trades
//! the weighted error rate against fairness residuals built from those
//! densities' tail probabilities.
//!
//! ```
//! use fairthresh::data::Counts;
//! use fairthresh::density::FittedDensity;
//! use fairthresh::objective::{DensityBundle, FairnessKind, ObjectiveSpec};
//! use fairthresh::optimizer::{optimize, OptimOptions};
//!
//! let g = |mean, sd| FittedDensity::Gaussian { mean, sd };
//! let bundle = DensityBundle::new(
//!     [[g(-1.0, 1.0), g(-0.5, 1.0)], [g(1.0, 1.0), g(1.5, 1.0)]],
//!     Counts::new([[300, 300], [300, 300]]),
//! )
//! .unwrap();
//! let spec = ObjectiveSpec::shared(&[FairnessKind::EOd], 10.0).unwrap();
//! let r = optimize(&bundle, &spec, &OptimOptions::default()).unwrap();
//! // Group 1 is group 0 shifted by 0.5, and so are its thresholds.
//! assert!((r.theta.theta1 - r.theta.theta0 - 0.5).abs() < 1e-4);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod data;
pub mod density;
pub mod metrics;
mod numeric;
pub mod objective;
pub mod optimizer;
pub mod output;
pub mod synth;
