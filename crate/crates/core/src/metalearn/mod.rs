//! MAML meta-training of the residual network: K-shot episodes, inner
//! adaptation, first- and second-order meta-gradients, the outer loop.

mod data;
mod maml;

pub use data::{build_episode, build_pool, residual_label, ExcitationConfig, ExcitationPolicy, TaskPool};
pub use maml::{
    evaluate_few_shot, inner_adapt, meta_gradient, meta_train, write_train_log, EpisodeData, EpisodeSource,
    MetaConfig, Reduction, TrainLogRow,
};
