//! Random vector field (RVF) estimation of the joint dynamics of a regional
//! variable and its spatial lag.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! * [`panel`] loads unit/year observations, applies a unit crosswalk and
//!   attaches zone partitions (commuting zones) with their validity windows.
//! * [`moran`] builds the row-standardized zone-membership weight matrix,
//!   maps the panel into the Moran space `(y, Wy)` and computes descriptive
//!   spatial statistics (global Moran's I, Moran curve, variance shares).
//! * [`kde`] is the bivariate adaptive kernel density estimator with full
//!   covariance that supplies the weights of the field estimator.
//! * [`rvf`] estimates the expected Moran-space movement on a regular grid.
//! * [`flow`] interpolates the grid field and integrates trajectories.
//! * [`tuning`] picks `(alpha, h)` by forecast mean-square error.
//! * [`io`] reads the CSV inputs and writes the result tables.
//! * [`inference`] runs the transition bootstrap, flags significant arrows,
//!   detects attractors and estimates basin membership probabilities.
//!
//! Loops over grid nodes, trajectories, tuning candidates and bootstrap
//! replicates run on rayon when the `parallel` feature is on (the default).
//! Every result is identical with and without it.

pub mod error;
pub mod flow;
pub mod geom;
pub mod inference;
pub mod io;
pub mod kde;
pub mod moran;
pub mod panel;
pub mod par;
pub mod rvf;
pub mod stats;
pub mod synthetic;
pub mod tuning;

pub use error::{Error, Result};
pub use geom::Vec2;
