use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adapt::{fine_tune, harvest_sample, AdaptConfig, LabelFilter, SampleBuffer};
use crate::dynamics::{
    advance_true, ratio, rk4_step, AugmentedModel, MeasurementNoise, PlantTask, ReferenceSignal, SimTiming,
};
use crate::error::{Error, Result};
use crate::nmpc::{MpcController, OcpConfig};
use crate::numcore::MlpModel;
use crate::trace::{RolloutTrace, TraceRow};

/// The three controllers compared in every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// nominal model only
    Nominal,
    /// nominal model plus a freshly initialized network, fine-tuned online
    ResidualMlp,
    /// nominal model plus a meta-trained network, fine-tuned online
    MetaMlp,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Nominal, ControllerKind::ResidualMlp, ControllerKind::MetaMlp];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Nominal => "nominal",
            ControllerKind::ResidualMlp => "residual_mlp",
            ControllerKind::MetaMlp => "meta_mlp",
        }
    }
}

/// Simulation settings of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub timing: SimTiming,
    pub noise_sigma: f64,
    /// When false, timing columns are written as 0 so traces are
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            timing: SimTiming::DEFAULT,
            noise_sigma: 0.0,
            record_wall_time: false,
        }
    }
}

const DIVERGED: f64 = 1e6;

/// Runs sense → learn → act for `duration` seconds on the task's true plant.
///
/// `residual` is the initial network for the learning controllers and must
/// be `None` for the nominal one. Fine-tune events happen at every multiple
/// of `T_update` once the buffer holds K samples; the updated network is
/// swapped into the controller before that step's solve. The trace stops
/// early, with `failed` set, if the plant state diverges.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    task: &PlantTask,
    kind: ControllerKind,
    residual: Option<&MlpModel>,
    ocp: &OcpConfig,
    adapt: &AdaptConfig,
    reference: &ReferenceSignal,
    x0: &[f64],
    duration: f64,
    settings: &LoopSettings,
    seed: u64,
) -> Result<RolloutTrace> {
    let spec = task.spec();
    let dt = settings.timing.control_period;
    let steps = ratio(duration, dt)
        .ok_or_else(|| Error::Config(format!("duration {duration} is not a multiple of {dt}")))?;
    let update_every = ratio(adapt.t_update, dt)
        .ok_or_else(|| Error::Config(format!("T_update {} is not a multiple of {dt}", adapt.t_update)))?;
    adapt.validate(dt)?;
    if x0.len() != spec.state_dim() {
        return Err(Error::Config("initial state has the wrong dimension".into()));
    }

    let mut net: Option<Arc<MlpModel>> = match (kind, residual) {
        (ControllerKind::Nominal, None) => None,
        (ControllerKind::Nominal, Some(_)) => {
            return Err(Error::Config("the nominal controller takes no network".into()))
        }
        (_, Some(n)) => Some(Arc::new(n.clone())),
        (_, None) => return Err(Error::Config(format!("{} needs an initial network", kind.name()))),
    };
    let model = match &net {
        Some(n) => AugmentedModel::with_shared_residual(spec.nominal_params, n.clone())?,
        None => AugmentedModel::from_spec(spec),
    };
    let mut ocp = ocp.clone();
    if ocp.bounds.is_empty() {
        ocp.bounds = spec.input_bounds.clone();
    }
    let mut controller = MpcController::new(model, ocp, reference.clone())?;
    let learning = adapt.enabled && kind != ControllerKind::Nominal;

    let mut noise = MeasurementNoise::new(settings.noise_sigma, seed)?;
    let mut buffer = SampleBuffer::new(adapt.buffer_capacity);
    let mut filter = LabelFilter::new(adapt.smoothing_width);
    let mut trace = RolloutTrace::new(spec.state_dim(), spec.input_dim());
    let mut x = x0.to_vec();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let ms = |d: std::time::Duration| if settings.record_wall_time { d.as_secs_f64() * 1e3 } else { 0.0 };

    for k in 0..steps {
        let t = k as f64 * dt;
        let meas = noise.measure(&x);
        if learning {
            if let Some((px, pu)) = &prev {
                if let Some(s) = harvest_sample(px, pu, &meas, dt, t, &spec.nominal_params)
                    .ok()
                    .and_then(|s| filter.push(s))
                {
                    buffer.push(s);
                }
            }
        }

        let mut row = TraceRow::plant(t, x.clone(), meas.clone(), Vec::new());
        if learning && k > 0 && k % update_every == 0 {
            let started = Instant::now();
            let current = net.as_ref().expect("learning controllers carry a network");
            if let Some(out) = fine_tune(current, &buffer, adapt)? {
                row.finetune_event = true;
                row.ft_loss_before = out.loss_before;
                row.ft_loss_after = out.loss_after;
                if out.accepted {
                    let n = Arc::new(out.model);
                    controller.set_model(AugmentedModel::with_shared_residual(spec.nominal_params, n.clone())?);
                    net = Some(n);
                }
                row.ft_ms = ms(started.elapsed());
            }
        }

        let started = Instant::now();
        let step = controller.step(t, &meas);
        let elapsed = started.elapsed();
        match &step.solution {
            Some(sol) => {
                row.solver_iters = sol.iters;
                row.solver_cost = sol.cost;
            }
            None => {
                row.solver_iters = 0;
                row.solver_cost = f64::NAN;
            }
        }
        row.solve_ms = ms(elapsed);
        row.u = step.u.clone();
        row.x_ref = reference.at(t).0;
        trace.rows.push(row);

        let next = advance_true(spec, &x, &step.u, settings.timing);
        match next {
            Ok(n) if n.iter().all(|v| v.is_finite() && v.abs() < DIVERGED) => {
                prev = Some((meas, step.u));
                x = n;
            }
            Ok(_) | Err(Error::Numeric(_)) => {
                trace.failed = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(trace)
}

/// Rolls a model forward without inputs from `x0` for `steps` RK4 steps of
/// size `dt`. Returns `steps + 1` states including `x0`.
pub fn predict_open_loop(model: &AugmentedModel, x0: &[f64], dt: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    for _ in 0..steps {
        let next = rk4_step(model, out.last().unwrap(), &[], dt)?;
        out.push(next);
    }
    Ok(out)
}

/// Online open-loop predictor for an unforced plant: fine-tunes its network
/// on the latest window of measurements, then predicts ahead.
#[derive(Debug, Clone)]
pub struct OnlinePredictor {
    pub kind: ControllerKind,
    model: AugmentedModel,
    adapt: AdaptConfig,
}

impl OnlinePredictor {
    pub fn new(task: &PlantTask, kind: ControllerKind, residual: Option<&MlpModel>, adapt: AdaptConfig) -> Result<Self> {
        let nominal = task.spec().nominal_params;
        let model = match (kind, residual) {
            (ControllerKind::Nominal, _) => AugmentedModel::nominal(nominal),
            (_, Some(n)) => AugmentedModel::with_residual(nominal, n.clone())?,
            (_, None) => return Err(Error::Config(format!("{} needs an initial network", kind.name()))),
        };
        Ok(Self { kind, model, adapt })
    }

    pub fn model(&self) -> &AugmentedModel {
        &self.model
    }

    /// Harvests samples from consecutive measurements of the window and
    /// fine-tunes on the newest K. No-op for the nominal predictor. With
    /// label smoothing, the first `width − 1` raw samples of the window only
    /// prime the filter.
    pub fn learn(&mut self, window: &[(f64, Vec<f64>)], dt: f64) -> Result<Option<(f64, f64)>> {
        let Some(net) = self.model.residual() else {
            return Ok(None);
        };
        if !self.adapt.enabled {
            return Ok(None);
        }
        let nominal = *self.model.nominal_params();
        let mut buffer = SampleBuffer::new(self.adapt.buffer_capacity);
        let mut filter = LabelFilter::new(self.adapt.smoothing_width);
        for w in window.windows(2) {
            if let Some(s) = harvest_sample(&w[0].1, &[], &w[1].1, dt, w[1].0, &nominal)
                .ok()
                .and_then(|s| filter.push(s))
            {
                buffer.push(s);
            }
        }
        match fine_tune(net, &buffer, &self.adapt)? {
            Some(out) => {
                if out.accepted {
                    self.model = AugmentedModel::with_residual(nominal, out.model)?;
                }
                Ok(Some((out.loss_before, out.loss_after)))
            }
            None => Ok(None),
        }
    }

    pub fn predict(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
        predict_open_loop(&self.model, x0, dt, steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{PlantSpec, TaskProtocol};
    use crate::numcore::Activation;

    fn cart_pole_task(scale: f64) -> PlantTask {
        let p = TaskProtocol::ScaleRange {
            count: 1,
            range: [scale, scale],
            params: None,
        };
        crate::dynamics::sample_tasks(&PlantSpec::cart_pole(), &p, 0).unwrap().remove(0)
    }

    fn cp_ocp() -> OcpConfig {
        OcpConfig::new(vec![5.0, 0.1, 5.0, 0.1], vec![0.1], vec![[-10.0, 10.0]])
    }

    #[test]
    fn fine_tune_events_every_t_update() {
        let spec = PlantSpec::quad_2d();
        let task = PlantTask::with_true_params(&spec, 0, spec.true_params).unwrap();
        let hover = spec.nominal_params.hover_thrust().unwrap();
        let reference = ReferenceSignal::constant(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0], vec![hover, hover]);
        let ocp = OcpConfig::new(vec![5.0, 0.1, 5.0, 0.1, 5.0, 0.1], vec![0.1, 0.1], spec.input_bounds.clone());
        let adapt = AdaptConfig::new(0.2, 2, 5);
        let net = MlpModel::init(&[8, 8, 3], Activation::Tanh, 0).unwrap();
        let tr = run_closed_loop(
            &task,
            ControllerKind::MetaMlp,
            Some(&net),
            &ocp,
            &adapt,
            &reference,
            &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            1.0,
            &LoopSettings::default(),
            0,
        )
        .unwrap();
        let events: Vec<usize> = tr.rows.iter().enumerate().filter(|(_, r)| r.finetune_event).map(|(i, _)| i).collect();
        assert_eq!(events, vec![10, 20, 30, 40]);
    }

    #[test]
    fn nominal_rejects_network_and_learning_needs_one() {
        let task = cart_pole_task(1.0);
        let reference = ReferenceSignal::constant(vec![0.0; 4], vec![0.0]);
        let net = MlpModel::zeros(&[5, 4, 2], Activation::Tanh).unwrap();
        let adapt = AdaptConfig::new(0.2, 1, 5);
        let s = LoopSettings::default();
        assert!(run_closed_loop(&task, ControllerKind::Nominal, Some(&net), &cp_ocp(), &adapt, &reference, &[0.0; 4], 0.1, &s, 0).is_err());
        assert!(run_closed_loop(&task, ControllerKind::MetaMlp, None, &cp_ocp(), &adapt, &reference, &[0.0; 4], 0.1, &s, 0).is_err());
    }

    #[test]
    fn disabled_adaptation_matches_frozen_network() {
        let task = cart_pole_task(1.2);
        let reference = ReferenceSignal::constant(vec![0.0; 4], vec![0.0]);
        let net = MlpModel::init(&[5, 8, 2], Activation::Tanh, 3).unwrap();
        let mut adapt = AdaptConfig::new(0.2, 3, 5);
        adapt.enabled = false;
        let s = LoopSettings::default();
        let x0 = [0.1, 0.0, 0.05, 0.0];
        let a = run_closed_loop(&task, ControllerKind::MetaMlp, Some(&net), &cp_ocp(), &adapt, &reference, &x0, 1.0, &s, 4).unwrap();
        let b = run_closed_loop(&task, ControllerKind::ResidualMlp, Some(&net), &cp_ocp(), &adapt, &reference, &x0, 1.0, &s, 4).unwrap();
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
        assert_eq!(a.finetune_events(), 0);
    }

    #[test]
    fn trace_is_deterministic() {
        let task = cart_pole_task(1.3);
        let reference = ReferenceSignal::constant(vec![0.0; 4], vec![0.0]);
        let net = MlpModel::init(&[5, 8, 2], Activation::Tanh, 3).unwrap();
        let adapt = AdaptConfig::new(0.2, 3, 5);
        let s = LoopSettings {
            noise_sigma: 0.01,
            ..LoopSettings::default()
        };
        let run = || {
            run_closed_loop(&task, ControllerKind::ResidualMlp, Some(&net), &cp_ocp(), &adapt, &reference, &[0.2, 0.0, 0.1, 0.0], 1.0, &s, 9)
                .unwrap()
                .to_csv_string()
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn applied_inputs_respect_bounds() {
        let task = cart_pole_task(1.5);
        let reference = ReferenceSignal::constant(vec![0.0; 4], vec![0.0]);
        let adapt = AdaptConfig::new(0.2, 3, 5);
        let tr = run_closed_loop(&task, ControllerKind::Nominal, None, &cp_ocp(), &adapt, &reference, &[1.0, 0.5, 0.2, 0.2], 2.0, &LoopSettings::default(), 0).unwrap();
        for r in &tr.rows {
            assert!((-10.0..=10.0).contains(&r.u[0]));
        }
    }

    #[test]
    fn matched_predictor_tracks_truth() {
        let spec = PlantSpec::van_der_pol().matched();
        let task = PlantTask::with_true_params(&spec, 0, spec.true_params).unwrap();
        let p = OnlinePredictor::new(&task, ControllerKind::Nominal, None, AdaptConfig::new(1.0, 50, 50)).unwrap();
        let pred = p.predict(&[0.5, 0.5], 0.02, 50).unwrap();
        let truth = crate::dynamics::simulate_true(&spec, &[0.5, 0.5], &vec![vec![]; 50], 1.0, SimTiming::DEFAULT, 0.0, 0).unwrap();
        for (a, b) in pred.iter().zip(&truth.rows) {
            assert!((a[0] - b.x_true[0]).abs() < 1e-6);
        }
    }
}
