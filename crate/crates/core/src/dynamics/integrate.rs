use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::augmented::{Dynamics, PlantModel};
use super::plant::PlantSpec;
use crate::error::{check_finite, Error, Result};
use crate::numcore::DenseMatrix;
use crate::trace::{RolloutTrace, TraceRow};

fn offset(x: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// One classical RK4 step with the input held constant.
pub fn rk4_step<D: Dynamics + ?Sized>(model: &D, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("step size must be positive, got {dt}")));
    }
    let k1 = model.derivative(x, u)?;
    let k2 = model.derivative(&offset(x, &k1, dt / 2.0), u)?;
    let k3 = model.derivative(&offset(x, &k2, dt / 2.0), u)?;
    let k4 = model.derivative(&offset(x, &k3, dt), u)?;
    let next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    check_finite(&next, "RK4 step")?;
    Ok(next)
}

/// RK4 step together with its exact derivatives `(x⁺, ∂x⁺/∂x, ∂x⁺/∂u)`,
/// propagated through the four stages by the chain rule.
pub fn rk4_sensitivities<D: Dynamics + ?Sized>(
    model: &D,
    x: &[f64],
    u: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, DenseMatrix, DenseMatrix)> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("step size must be positive, got {dt}")));
    }
    let n = x.len();
    let m = u.len();
    let eye = DenseMatrix::identity(n);

    // stage i: k_i = f(x + c_i·dt·k_{i-1}, u)
    // dk_i/dx = A_i (I + c_i·dt·dk_{i-1}/dx),  dk_i/du = A_i c_i·dt·dk_{i-1}/du + B_i
    let (k1, a1, b1) = model.derivative_and_jacobians(x, u)?;
    let dk1_dx = a1;
    let dk1_du = b1;

    let stage = |prev_k: &[f64], prev_dx: &DenseMatrix, prev_du: &DenseMatrix, c: f64| {
        let xs = offset(x, prev_k, c * dt);
        let (k, a, b) = model.derivative_and_jacobians(&xs, u)?;
        let dx = a.matmul(&eye.add(&prev_dx.scale(c * dt)));
        let du = a.matmul(&prev_du.scale(c * dt)).add(&b);
        Ok::<_, Error>((k, dx, du))
    };
    let (k2, dk2_dx, dk2_du) = stage(&k1, &dk1_dx, &dk1_du, 0.5)?;
    let (k3, dk3_dx, dk3_du) = stage(&k2, &dk2_dx, &dk2_du, 0.5)?;
    let (k4, dk4_dx, dk4_du) = stage(&k3, &dk3_dx, &dk3_du, 1.0)?;

    let next: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    check_finite(&next, "RK4 step")?;

    let mut ad = dk1_dx.add(&dk2_dx.scale(2.0)).add(&dk3_dx.scale(2.0)).add(&dk4_dx);
    ad = eye.add(&ad.scale(dt / 6.0));
    let bd = if m == 0 {
        DenseMatrix::zeros(n, 0)
    } else {
        dk1_du
            .add(&dk2_du.scale(2.0))
            .add(&dk3_du.scale(2.0))
            .add(&dk4_du)
            .scale(dt / 6.0)
    };
    Ok((next, ad, bd))
}

/// Integrates over `duration` with `substeps` equal RK4 steps.
pub fn rk4_integrate<D: Dynamics + ?Sized>(
    model: &D,
    x: &[f64],
    u: &[f64],
    duration: f64,
    substeps: usize,
) -> Result<Vec<f64>> {
    let h = duration / substeps as f64;
    let mut state = x.to_vec();
    for _ in 0..substeps {
        state = rk4_step(model, &state, u, h)?;
    }
    Ok(state)
}

/// Number of `small` steps that make up `big`, if it divides evenly.
pub(crate) fn ratio(big: f64, small: f64) -> Option<usize> {
    if !(big > 0.0 && small > 0.0) {
        return None;
    }
    let r = (big / small).round();
    if r >= 1.0 && ((r * small) - big).abs() <= 1e-9 * big.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

/// Timing of a ground-truth simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTiming {
    pub control_period: f64,
    pub substep: f64,
}

impl SimTiming {
    pub const DEFAULT: SimTiming = SimTiming {
        control_period: 0.02,
        substep: 0.001,
    };

    pub fn substeps(&self) -> Result<usize> {
        ratio(self.control_period, self.substep).ok_or_else(|| {
            Error::Config(format!(
                "substep {} does not divide the control period {}",
                self.substep, self.control_period
            ))
        })
    }
}

/// Advances the true plant by one control period under zero-order hold.
pub fn advance_true(spec: &PlantSpec, x: &[f64], u: &[f64], timing: SimTiming) -> Result<Vec<f64>> {
    let steps = timing.substeps()?;
    let plant = PlantModel {
        params: spec.true_params,
    };
    rk4_integrate(&plant, x, u, timing.control_period, steps)
}

/// Additive Gaussian measurement noise, deterministic per seed.
pub struct MeasurementNoise {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl MeasurementNoise {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
        }
        let normal = if sigma > 0.0 {
            Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal,
        })
    }

    pub fn measure(&mut self, x: &[f64]) -> Vec<f64> {
        match &self.normal {
            Some(n) => x.iter().map(|v| v + n.sample(&mut self.rng)).collect(),
            None => x.to_vec(),
        }
    }
}

/// Simulates the true plant under a piecewise-constant control schedule
/// (one entry per control period) and records true and noisy measured
/// states at every sampling instant. The trace has one row per control
/// period plus a terminal row holding the final state and the last input.
pub fn simulate_true(
    spec: &PlantSpec,
    x0: &[f64],
    controls: &[Vec<f64>],
    duration: f64,
    timing: SimTiming,
    noise_sigma: f64,
    seed: u64,
) -> Result<RolloutTrace> {
    let substeps = timing.substeps()?;
    let periods = ratio(duration, timing.control_period).ok_or_else(|| {
        Error::Config(format!(
            "duration {duration} is not a multiple of the control period {}",
            timing.control_period
        ))
    })?;
    if controls.len() != periods {
        return Err(Error::Config(format!(
            "{periods} control periods but {} scheduled inputs",
            controls.len()
        )));
    }
    if x0.len() != spec.state_dim() {
        return Err(Error::Shape("initial state dimension".into()));
    }
    let plant = PlantModel {
        params: spec.true_params,
    };
    let mut noise = MeasurementNoise::new(noise_sigma, seed)?;
    let mut trace = RolloutTrace::new(spec.state_dim(), spec.input_dim());
    let mut x = x0.to_vec();
    for (k, u) in controls.iter().enumerate() {
        let meas = noise.measure(&x);
        trace
            .rows
            .push(TraceRow::plant(k as f64 * timing.control_period, x.clone(), meas, u.clone()));
        x = rk4_integrate(&plant, &x, u, timing.control_period, substeps)?;
    }
    let meas = noise.measure(&x);
    let last_u = controls.last().cloned().unwrap_or_default();
    trace
        .rows
        .push(TraceRow::plant(periods as f64 * timing.control_period, x, meas, last_u));
    Ok(trace)
}
