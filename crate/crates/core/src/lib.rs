//! Trajectory planning conditioned on language-model reasoning: a driving
//! strategy paragraph injected into the ego query and a four-category
//! command block that conditions a two-level latent trajectory decoder.
//!
//! Everything runs on CPU in `f64`, including a small reverse-mode
//! autodiff used for training and gradient checks.

pub mod autodiff;
pub mod coarsen;
pub mod command_codec;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod hier_decoder;
pub mod jsonfmt;
pub mod model;
pub mod nn;
pub mod reasoner;
pub mod strategy_injector;
pub mod training;

pub use error::{Error, ShapeError};
