//! Multiple-shooting NMPC over the augmented model: quadratic tracking
//! costs, box-bounded Gauss-Newton SQP and the receding-horizon controller.

mod controller;
mod ocp;

pub use controller::{mpc_step, MpcController, MpcStep};
pub use ocp::{shift_controls, solve_ocp, stage_cost, terminal_cost, OcpConfig, OcpSolution, RefWindow};
