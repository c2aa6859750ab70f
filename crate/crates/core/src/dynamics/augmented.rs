use std::sync::Arc;

use super::plant::{check_dims, PhysicalParams, PlantKind, PlantSpec};
use crate::error::{check_finite, Error, Result};
use crate::numcore::{DenseMatrix, MlpModel};

/// A continuous-time vector field with Jacobians, as consumed by the
/// integrator and the solver.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;

    /// `(f, ∂f/∂x, ∂f/∂u)`
    fn derivative_and_jacobians(
        &self,
        x: &[f64],
        u: &[f64],
    ) -> Result<(Vec<f64>, DenseMatrix, DenseMatrix)>;
}

/// Plant dynamics under one fixed parameter set (e.g. the simulator truth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantModel {
    pub params: PhysicalParams,
}

impl Dynamics for PlantModel {
    fn state_dim(&self) -> usize {
        self.params.kind().state_dim()
    }

    fn input_dim(&self) -> usize {
        self.params.kind().input_dim()
    }

    fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        super::plant::eval_params(&self.params, x, u)
    }

    fn derivative_and_jacobians(
        &self,
        x: &[f64],
        u: &[f64],
    ) -> Result<(Vec<f64>, DenseMatrix, DenseMatrix)> {
        let f = self.derivative(x, u)?;
        let (a, b) = self.params.jacobians(x, u);
        Ok((f, a, b))
    }
}

/// Nominal dynamics plus a learned correction of the acceleration rows:
/// `ẋ = f_nom(x, u) + [0; f_NN([x; u])]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    nominal: PhysicalParams,
    residual: Option<Arc<MlpModel>>,
}

impl AugmentedModel {
    pub fn nominal(params: PhysicalParams) -> Self {
        Self {
            nominal: params,
            residual: None,
        }
    }

    pub fn from_spec(spec: &PlantSpec) -> Self {
        Self::nominal(spec.nominal_params)
    }

    pub fn with_residual(params: PhysicalParams, residual: MlpModel) -> Result<Self> {
        Self::with_shared_residual(params, Arc::new(residual))
    }

    /// Uses an already shared network snapshot.
    pub fn with_shared_residual(params: PhysicalParams, residual: Arc<MlpModel>) -> Result<Self> {
        let (n_in, n_out) = params.kind().residual_io();
        if residual.input_dim() != n_in || residual.output_dim() != n_out {
            return Err(Error::Config(format!(
                "{:?} needs a residual network with {} inputs and {} outputs, got {:?}",
                params.kind(),
                n_in,
                n_out,
                residual.layer_sizes()
            )));
        }
        Ok(Self {
            nominal: params,
            residual: Some(residual),
        })
    }

    pub fn kind(&self) -> PlantKind {
        self.nominal.kind()
    }

    pub fn nominal_params(&self) -> &PhysicalParams {
        &self.nominal
    }

    pub fn residual(&self) -> Option<&MlpModel> {
        self.residual.as_deref()
    }

    pub fn residual_arc(&self) -> Option<&Arc<MlpModel>> {
        self.residual.as_ref()
    }

    /// The same nominal model without the learned term.
    pub fn without_residual(&self) -> Self {
        Self::nominal(self.nominal)
    }

    fn residual_input(x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(x.len() + u.len());
        z.extend_from_slice(x);
        z.extend_from_slice(u);
        z
    }
}

impl Dynamics for AugmentedModel {
    fn state_dim(&self) -> usize {
        self.kind().state_dim()
    }

    fn input_dim(&self) -> usize {
        self.kind().input_dim()
    }

    fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut f = super::plant::eval_params(&self.nominal, x, u)?;
        if let Some(net) = &self.residual {
            let corr = net.forward(&Self::residual_input(x, u))?;
            for (row, c) in self.kind().accel_rows().iter().zip(&corr) {
                f[*row] += c;
            }
            check_finite(&f, "augmented derivative")?;
        }
        Ok(f)
    }

    fn derivative_and_jacobians(
        &self,
        x: &[f64],
        u: &[f64],
    ) -> Result<(Vec<f64>, DenseMatrix, DenseMatrix)> {
        check_dims(self.kind(), x, u)?;
        let mut f = super::plant::eval_params(&self.nominal, x, u)?;
        let (mut a, mut b) = self.nominal.jacobians(x, u);
        if let Some(net) = &self.residual {
            let (corr, jac) = net.forward_with_jacobian(&Self::residual_input(x, u))?;
            let n = x.len();
            for (k, row) in self.kind().accel_rows().iter().enumerate() {
                f[*row] += corr[k];
                let jrow = jac.row(k);
                for j in 0..n {
                    a[(*row, j)] += jrow[j];
                }
                for j in 0..u.len() {
                    b[(*row, j)] += jrow[n + j];
                }
            }
            check_finite(&f, "augmented derivative")?;
        }
        Ok((f, a, b))
    }
}

/// Evaluates the augmented model at `(x, u)`.
pub fn eval_augmented(model: &AugmentedModel, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    model.derivative(x, u)
}

/// `(∂f/∂x, ∂f/∂u)` of the augmented model.
pub fn eval_augmented_jacobians(
    model: &AugmentedModel,
    x: &[f64],
    u: &[f64],
) -> Result<(DenseMatrix, DenseMatrix)> {
    let (_, a, b) = model.derivative_and_jacobians(x, u)?;
    Ok((a, b))
}
