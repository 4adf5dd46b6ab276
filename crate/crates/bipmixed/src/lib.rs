//! Bayesian integrative factor analysis for multi-view data with a nested
//! random-effects outcome model.
//!
//! Subjects contribute feature views X^(m) and an outcome y recorded inside
//! families nested in sites. All views share a latent factor matrix U through
//! X^(m) = U A^(m) + E^(m), with spike-and-slab selection on components and
//! features, while the outcome adds fixed effects and family-within-site
//! random intercepts:
//!
//!     y_i = w_i' beta + theta_{f:s} + u_i' alpha + eps_i.
//!
//! Inference is a Metropolis-within-Gibbs chain; prediction averages over the
//! most-visited selection configurations. The crate also ships the simulation
//! benchmark, evaluation metrics, and two reference baselines behind the same
//! interfaces.

pub mod baselines;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod hierarchy;
pub mod hyper;
pub mod io;
pub mod marglik;
pub mod metrics;
pub mod posterior;
pub mod predict;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod state;

pub use baselines::{Method, ModelArchive};
pub use data::{MultiViewDataset, Scaler, ScreeResult};
pub use error::{Error, Result};
pub use hierarchy::{build_hierarchy, HierarchyIndex};
pub use hyper::Hyperparameters;
pub use posterior::PosteriorSummary;
pub use predict::FittedModel;
pub use sampler::{fit, fit_traced};
