//! Local, model-agnostic explanations of regression models.
//!
//! The two main explainers fit a kernel-weighted linear model around each
//! instance, where the distance that defines the neighbourhood weights each
//! feature by its per-instance random-forest permutation importance
//! ([`varimp`]), and group instances whose local coefficients agree into
//! clusters that share one linear explanation ([`supclus`]).
//!
//! Supporting modules provide the synthetic benchmark generators ([`data`]),
//! the forest ([`forest`]), the regression core ([`locreg`]), ICE curves
//! ([`ice`]), comparison explainers ([`baselines`]), evaluation measures
//! ([`evalx`]) and the experiment driver behind the `locimp` binary
//! ([`experiment`]).

pub mod baselines;
pub mod data;
pub mod error;
pub mod evalx;
pub mod experiment;
pub mod forest;
pub mod ice;
pub mod linalg;
pub mod locreg;
pub mod model;
pub mod supclus;
pub mod varimp;

pub use error::{Error, Result};
pub use model::{FnPredictor, Predictor};
