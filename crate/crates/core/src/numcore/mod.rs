//! Dense linear algebra, the residual MLP and its derivatives, optimizers.

mod matrix;
mod mlp;
mod optim;

pub use matrix::{axpy, dot, norm2, norm_inf, DenseMatrix};
pub use mlp::{
    hvp_central_difference, param_count, Activation, FlatParams, LabeledBatch, Loss, MlpCheckpoint,
    MlpModel,
};
pub use optim::{OptimizerKind, OptimizerSpec, OptimizerState};
