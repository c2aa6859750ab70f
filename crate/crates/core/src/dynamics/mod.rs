//! Plant models, the residual-augmented model, RK4 integration, references
//! and task sampling.

mod augmented;
mod integrate;
mod plant;
mod reference;
mod tasks;

pub use augmented::{eval_augmented, eval_augmented_jacobians, AugmentedModel, Dynamics, PlantModel};
pub(crate) use integrate::ratio;
pub use integrate::{
    advance_true, rk4_integrate, rk4_sensitivities, rk4_step, simulate_true, MeasurementNoise, SimTiming,
};
pub use plant::{eval_nominal, eval_true, PhysicalParams, PlantKind, PlantSpec, GRAVITY, QUAD_ARM};
pub use reference::{reference_at, ReferenceSignal};
pub use tasks::{sample_tasks, PlantTask, TaskProtocol};
