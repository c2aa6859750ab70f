use serde::{Deserialize, Serialize};

use super::mlp::FlatParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Serializable optimizer choice; [`OptimizerState`] is built from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec, num_params: usize) -> Result<Self> {
        if !(spec.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                spec.learning_rate
            )));
        }
        Ok(Self {
            kind: spec.kind,
            learning_rate: spec.learning_rate,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
        })
    }

    pub fn sgd(learning_rate: f64, num_params: usize) -> Result<Self> {
        Self::new(
            OptimizerSpec {
                kind: OptimizerKind::Sgd,
                learning_rate,
            },
            num_params,
        )
    }

    pub fn adam(learning_rate: f64, num_params: usize) -> Result<Self> {
        Self::new(
            OptimizerSpec {
                kind: OptimizerKind::Adam,
                learning_rate,
            },
            num_params,
        )
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. A non-finite gradient is rejected and leaves the state untouched.
    pub fn step(&mut self, params: &FlatParams, grad: &FlatParams) -> Result<FlatParams> {
        if params.len() != grad.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {} parameters, got params {} / grad {}",
                self.first_moment.len(),
                params.len(),
                grad.len()
            )));
        }
        if !grad.is_finite() {
            return Err(Error::Numeric("non-finite gradient; step rejected".into()));
        }
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => Ok(params.add_scaled(-lr, grad)),
            OptimizerKind::Adam => {
                self.step += 1;
                let t = self.step as i32;
                let bc1 = 1.0 - BETA1.powi(t);
                let bc2 = 1.0 - BETA2.powi(t);
                let mut out = params.0.clone();
                for (i, g) in grad.0.iter().enumerate() {
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    out[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                }
                Ok(FlatParams(out))
            }
        }
    }
}
