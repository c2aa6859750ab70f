use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ratio, Dynamics, PhysicalParams, PlantModel, PlantSpec};
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, LabeledBatch, Loss, MlpModel, OptimizerSpec, OptimizerState};

/// One labeled residual datum harvested from consecutive measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    /// `[x; u]` at step k − 1
    pub input: Vec<f64>,
    /// observed minus nominal acceleration
    pub label: Vec<f64>,
    pub t: f64,
}

/// Builds the sample for step `k` from the measurement at `k − 1`, the
/// input applied over that period, and the measurement at `k`.
///
/// The acceleration is the backward difference of the measured velocities;
/// the nominal acceleration is evaluated at `(x_{k−1}, u_{k−1})`.
pub fn harvest_sample(
    prev_x: &[f64],
    prev_u: &[f64],
    curr_x: &[f64],
    dt: f64,
    t: f64,
    nominal: &PhysicalParams,
) -> Result<ResidualSample> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("sampling period must be positive, got {dt}")));
    }
    let model = PlantModel { params: *nominal };
    let f = model.derivative(prev_x, prev_u)?;
    if curr_x.len() != prev_x.len() {
        return Err(Error::Shape("measurement dimensions differ".into()));
    }
    let rows = nominal.kind().accel_rows();
    let label: Vec<f64> = rows
        .iter()
        .map(|&r| (curr_x[r] - prev_x[r]) / dt - f[r])
        .collect();
    if label.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite residual label".into()));
    }
    let mut input = prev_x.to_vec();
    input.extend_from_slice(prev_u);
    Ok(ResidualSample { input, label, t })
}

/// Same as [`harvest_sample`] with the nominal parameters of `spec`.
pub fn harvest_from_spec(
    spec: &PlantSpec,
    prev_x: &[f64],
    prev_u: &[f64],
    curr_x: &[f64],
    dt: f64,
    t: f64,
) -> Result<ResidualSample> {
    harvest_sample(prev_x, prev_u, curr_x, dt, t, &spec.nominal_params)
}

fn mae() -> Loss {
    Loss::Mae
}
fn reject_factor() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// seconds between fine-tune events
    pub t_update: f64,
    pub epochs: usize,
    pub k: usize,
    #[serde(default = "mae")]
    pub loss: Loss,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    pub buffer_capacity: usize,
    #[serde(default = "yes")]
    pub enabled: bool,
    /// an update whose loss grows by more than this factor is rejected
    #[serde(default = "reject_factor")]
    pub reject_factor: f64,
    /// moving-average width over consecutive labels; 1 disables smoothing
    #[serde(default = "one")]
    pub smoothing_width: usize,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl AdaptConfig {
    pub fn new(t_update: f64, epochs: usize, k: usize) -> Self {
        Self {
            t_update,
            epochs,
            k,
            loss: Loss::Mae,
            optimizer: OptimizerSpec::default(),
            buffer_capacity: k.max(1) * 4,
            enabled: true,
            reject_factor: reject_factor(),
            smoothing_width: 1,
        }
    }

    pub fn validate(&self, control_period: f64) -> Result<()> {
        if self.k == 0 || self.k > self.buffer_capacity {
            return Err(Error::Config(format!(
                "need 1 <= k <= buffer_capacity, got {} / {}",
                self.k, self.buffer_capacity
            )));
        }
        if ratio(self.t_update, control_period).is_none() {
            return Err(Error::Config(format!(
                "T_update {} is not a multiple of the control period {control_period}",
                self.t_update
            )));
        }
        if self.smoothing_width == 0 {
            return Err(Error::Config("smoothing_width must be at least 1".into()));
        }
        if !(self.reject_factor > 0.0) {
            return Err(Error::Config("reject_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Centered moving average over the last `width` raw samples: the label is
/// the mean of their labels (the velocity difference across the whole span
/// minus the mean nominal acceleration), the input that of the middle
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFilter {
    width: usize,
    recent: VecDeque<ResidualSample>,
}

impl LabelFilter {
    pub fn new(width: usize) -> Self {
        Self {
            width: width.max(1),
            recent: VecDeque::with_capacity(width.max(1)),
        }
    }

    /// Feeds one raw sample; returns a filtered one once `width` are held.
    pub fn push(&mut self, s: ResidualSample) -> Option<ResidualSample> {
        if self.width == 1 {
            return Some(s);
        }
        if self.recent.len() == self.width {
            self.recent.pop_front();
        }
        self.recent.push_back(s);
        if self.recent.len() < self.width {
            return None;
        }
        let mid = &self.recent[(self.width - 1) / 2];
        let mut label = vec![0.0; mid.label.len()];
        for r in &self.recent {
            for (l, v) in label.iter_mut().zip(&r.label) {
                *l += v;
            }
        }
        for l in &mut label {
            *l /= self.width as f64;
        }
        Some(ResidualSample {
            input: mid.input.clone(),
            label,
            t: mid.t,
        })
    }

    pub fn clear(&mut self) {
        self.recent.clear();
    }
}

/// FIFO of the most recent samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    capacity: usize,
    samples: VecDeque<ResidualSample>,
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, s: ResidualSample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(s);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// The `k` newest samples, oldest first.
    pub fn latest(&self, k: usize) -> Vec<ResidualSample> {
        let start = self.samples.len().saturating_sub(k);
        self.samples.iter().skip(start).cloned().collect()
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub model: MlpModel,
    pub loss_before: f64,
    pub loss_after: f64,
    pub accepted: bool,
}

fn to_batch(samples: &[ResidualSample]) -> Result<LabeledBatch> {
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.input.clone()).collect();
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| s.label.clone()).collect();
    LabeledBatch::new(DenseMatrix::from_rows(&inputs)?, DenseMatrix::from_rows(&targets)?)
}

/// Runs `cfg.epochs` full-batch optimizer steps on the K newest samples and
/// returns an updated copy. `None` when fewer than K samples are available.
/// Updates whose loss grows past `reject_factor ×` the starting loss are
/// rejected and the input model is returned unchanged.
pub fn fine_tune(model: &MlpModel, buffer: &SampleBuffer, cfg: &AdaptConfig) -> Result<Option<FineTuneOutcome>> {
    if buffer.len() < cfg.k {
        return Ok(None);
    }
    let batch = to_batch(&buffer.latest(cfg.k))?;
    let loss_before = model.loss(&batch, cfg.loss)?;
    let mut opt = OptimizerState::new(cfg.optimizer, model.param_count())?;
    let mut params = model.params().clone();
    let mut current = model.clone();
    for _ in 0..cfg.epochs {
        let (_, g) = current.loss_and_gradient(&batch, cfg.loss)?;
        params = opt.step(&params, &g)?;
        current = current.with_params(params.clone())?;
    }
    let loss_after = current.loss(&batch, cfg.loss)?;
    let accepted = loss_after.is_finite() && loss_after <= cfg.reject_factor * loss_before;
    Ok(Some(FineTuneOutcome {
        model: if accepted { current } else { model.clone() },
        loss_before,
        loss_after,
        accepted,
    }))
}
