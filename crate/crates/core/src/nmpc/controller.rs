use super::ocp::{shift_controls, solve_ocp, OcpConfig, OcpSolution};
use crate::dynamics::{AugmentedModel, Dynamics, ReferenceSignal};
use crate::error::Result;

/// Outcome of one receding-horizon step.
#[derive(Debug, Clone)]
pub struct MpcStep {
    pub u: Vec<f64>,
    pub solution: Option<OcpSolution>,
    /// The solver errored and the previous input is being held.
    pub held: bool,
}

/// Receding-horizon controller around [`solve_ocp`], warm-started from the
/// previous solution.
#[derive(Debug, Clone)]
pub struct MpcController {
    model: AugmentedModel,
    cfg: OcpConfig,
    reference: ReferenceSignal,
    last: Option<OcpSolution>,
    last_u: Vec<f64>,
}

impl MpcController {
    pub fn new(model: AugmentedModel, cfg: OcpConfig, reference: ReferenceSignal) -> Result<Self> {
        let (n, m) = (model.state_dim(), model.input_dim());
        cfg.validate(n, m)?;
        reference.validate(n, m)?;
        let last_u = reference.at(0.0).1;
        Ok(Self {
            model,
            cfg,
            reference,
            last: None,
            last_u,
        })
    }

    pub fn model(&self) -> &AugmentedModel {
        &self.model
    }

    /// Replaces the prediction model between steps.
    pub fn set_model(&mut self, model: AugmentedModel) {
        self.model = model;
    }

    pub fn config(&self) -> &OcpConfig {
        &self.cfg
    }

    pub fn last_solution(&self) -> Option<&OcpSolution> {
        self.last.as_ref()
    }

    /// Reference pairs at `t, t + δt, …, t + t_f`.
    pub fn reference_window(&self, t: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let dt = self.cfg.dt();
        (0..=self.cfg.steps).map(|k| self.reference.at(t + k as f64 * dt)).collect()
    }

    /// Solves from the measured state and returns the first control.
    pub fn step(&mut self, t: f64, x: &[f64]) -> MpcStep {
        let refs = self.reference_window(t);
        let warm = self.last.as_ref().map(shift_controls);
        match solve_ocp(&self.model, x, &refs, &self.cfg, warm.as_deref()) {
            Ok(sol) => {
                self.last_u = sol.controls[0].clone();
                self.last = Some(sol.clone());
                MpcStep {
                    u: self.last_u.clone(),
                    solution: Some(sol),
                    held: false,
                }
            }
            Err(_) => {
                self.last = None;
                MpcStep {
                    u: self.last_u.clone(),
                    solution: None,
                    held: true,
                }
            }
        }
    }
}

/// One receding-horizon step of `controller` at time `t`.
pub fn mpc_step(controller: &mut MpcController, t: f64, x_measured: &[f64]) -> MpcStep {
    controller.step(t, x_measured)
}
