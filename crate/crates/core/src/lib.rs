//! Wasserstein geometry of parametric statistical models on finite sample spaces.
//!
//! A weighted graph on the states defines a Wasserstein metric on the probability simplex;
//! pulling it back through a parametrization `θ ↦ p(θ)` gives a Riemannian metric on
//! parameter space. On top of that metric this crate integrates the Fokker–Planck gradient
//! flow of KL divergence, computes geodesics and distances, bounds the Ricci curvature from
//! below and checks the log-Sobolev, Talagrand and HWI inequalities numerically.

pub mod config;
pub mod curvature;
pub mod error;
pub mod experiment;
pub mod expfam;
pub mod flow;
pub mod geodesic;
pub mod ground_metric;
pub mod inequalities;
pub mod linalg;
pub mod manifold;
pub mod report;

pub use error::{Error, Result};
pub use ground_metric::{Distribution, Graph};
pub use manifold::{ParamBox, StatisticalModel};
