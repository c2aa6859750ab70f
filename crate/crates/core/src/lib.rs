//! Online adaptive neural MPC.
//!
//! A residual network corrects the acceleration rows of a nominal plant
//! model. The network is meta-trained (MAML) over a family of perturbed
//! plants, embedded in a Gauss-Newton multiple-shooting NMPC, and fine-tuned
//! online from differenced velocity measurements.
//!
//! Module map:
//! - [`numcore`]: dense matrices, the MLP and its derivatives, optimizers.
//! - [`dynamics`]: benchmark plants, the residual-augmented model, RK4.
//! - [`metalearn`]: K-shot episodes, inner adaptation and meta-training.
//! - [`nmpc`]: quadratic costs, the box-constrained SQP and the receding-horizon controller.
//! - [`online_adapt`]: sample harvesting, fine-tuning and the closed loop.
//! - [`experiments`]: configs, experiment runners, aggregation and plots.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod metalearn;
pub mod nmpc;
pub mod numcore;
pub mod online_adapt;
pub mod trace;

pub use error::{Error, Result};
