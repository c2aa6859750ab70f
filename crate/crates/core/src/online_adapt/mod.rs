//! The online loop: residual samples from measurements, periodic
//! fine-tuning, model swaps between solves, and the recorded trace.

mod adapt;
mod closed_loop;

pub use adapt::{
    fine_tune, harvest_from_spec, harvest_sample, AdaptConfig, FineTuneOutcome, LabelFilter, ResidualSample, SampleBuffer,
};
pub use closed_loop::{predict_open_loop, run_closed_loop, ControllerKind, LoopSettings, OnlinePredictor};
