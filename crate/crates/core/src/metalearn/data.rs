use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::maml::{EpisodeData, EpisodeSource};
use crate::dynamics::{advance_true, eval_nominal, eval_true, PlantTask, ReferenceSignal, SimTiming};
use crate::error::{Error, Result};
use crate::nmpc::{MpcController, OcpConfig};
use crate::dynamics::AugmentedModel;
use crate::numcore::{DenseMatrix, LabeledBatch};

/// How inputs are generated while collecting training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ExcitationPolicy {
    /// Unforced plant (no inputs).
    Autonomous,
    /// MPC built on the task's own true model, plus Gaussian input dither.
    /// Trajectory `j` tracks `references[j % len]`.
    Mpc {
        ocp: OcpConfig,
        references: Vec<ReferenceSignal>,
        dither_sigma: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    pub policy: ExcitationPolicy,
    /// per-state uniform ranges for initial conditions
    pub x0_box: Vec<[f64; 2]>,
    pub trajectories: usize,
    /// seconds per trajectory
    pub duration: f64,
}

/// Every labeled sample collected for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPool {
    pub task_id: usize,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
}

const DIVERGED: f64 = 1e6;
const MAX_ATTEMPTS: u64 = 10;

/// Acceleration-row difference between the task's true plant and the nominal
/// model at `(x, u)`.
pub fn residual_label(task: &PlantTask, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let spec = task.spec();
    let t = eval_true(spec, x, u)?;
    let n = eval_nominal(spec, x, u)?;
    Ok(spec.kind.accel_rows().iter().map(|&r| t[r] - n[r]).collect())
}

fn sample_box(rng: &mut ChaCha8Rng, b: &[[f64; 2]]) -> Vec<f64> {
    b.iter()
        .map(|[lo, hi]| if lo == hi { *lo } else { rng.random_range(*lo..*hi) })
        .collect()
}

fn one_trajectory(
    task: &PlantTask,
    cfg: &ExcitationConfig,
    index: usize,
    timing: SimTiming,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>> {
    let spec = task.spec();
    let steps = (cfg.duration / timing.control_period).round() as usize;
    let mut x = sample_box(rng, &cfg.x0_box);
    let mut inputs = Vec::with_capacity(steps);
    let mut labels = Vec::with_capacity(steps);

    let mut controller = match &cfg.policy {
        ExcitationPolicy::Autonomous => None,
        ExcitationPolicy::Mpc { ocp, references, .. } => {
            let model = AugmentedModel::nominal(spec.true_params);
            let reference = references[index % references.len()].clone();
            Some(MpcController::new(model, ocp.clone(), reference)?)
        }
    };
    let dither: Vec<Normal<f64>> = match &cfg.policy {
        ExcitationPolicy::Mpc { dither_sigma, .. } => dither_sigma
            .iter()
            .map(|s| Normal::new(0.0, *s).map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<_>>()?,
        ExcitationPolicy::Autonomous => Vec::new(),
    };

    for k in 0..steps {
        let mut u = match controller.as_mut() {
            Some(c) => c.step(k as f64 * timing.control_period, &x).u,
            None => Vec::new(),
        };
        for (i, v) in u.iter_mut().enumerate() {
            *v += dither[i].sample(rng);
            if let Some([lo, hi]) = spec.input_bounds.get(i) {
                *v = v.clamp(*lo, *hi);
            }
        }
        let mut z = x.clone();
        z.extend_from_slice(&u);
        labels.push(residual_label(task, &x, &u)?);
        inputs.push(z);
        x = match advance_true(spec, &x, &u, timing) {
            Ok(next) => next,
            Err(Error::Numeric(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGED) {
            return Ok(None);
        }
    }
    Ok(Some((inputs, labels)))
}

/// Simulates `cfg.trajectories` runs of the task's true plant and labels
/// every control-period sample. Diverging runs are discarded and redrawn
/// with the next seed.
pub fn build_pool(task: &PlantTask, cfg: &ExcitationConfig, timing: SimTiming, seed: u64) -> Result<TaskPool> {
    let spec = task.spec();
    if cfg.x0_box.len() != spec.state_dim() {
        return Err(Error::Config(format!(
            "initial-state box has {} ranges for {} states",
            cfg.x0_box.len(),
            spec.state_dim()
        )));
    }
    if let ExcitationPolicy::Mpc {
        references,
        dither_sigma,
        ..
    } = &cfg.policy
    {
        if references.is_empty() || dither_sigma.len() != spec.input_dim() {
            return Err(Error::Config("excitation needs a reference and one dither sigma per input".into()));
        }
    }
    let mut pool = TaskPool {
        task_id: task.task_id,
        inputs: Vec::new(),
        labels: Vec::new(),
    };
    for j in 0..cfg.trajectories {
        let mut done = false;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_add((j as u64) << 16).wrapping_add(attempt),
            );
            if let Some((i, l)) = one_trajectory(task, cfg, j, timing, &mut rng)? {
                pool.inputs.extend(i);
                pool.labels.extend(l);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Numeric(format!(
                "task {} diverged in {MAX_ATTEMPTS} attempts",
                task.task_id
            )));
        }
    }
    Ok(pool)
}

impl TaskPool {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<LabeledBatch> {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.inputs[i].clone()).collect();
        let targets: Vec<Vec<f64>> = idx.iter().map(|&i| self.labels[i].clone()).collect();
        LabeledBatch::new(DenseMatrix::from_rows(&rows)?, DenseMatrix::from_rows(&targets)?)
    }
}

impl EpisodeSource for TaskPool {
    fn task_id(&self) -> usize {
        self.task_id
    }

    /// `2K` distinct samples, the first K as support and the rest as query.
    fn draw(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<EpisodeData> {
        if 2 * k > self.len() {
            return Err(Error::Config(format!(
                "task {} has {} samples, an episode needs {}",
                self.task_id,
                self.len(),
                2 * k
            )));
        }
        let idx = rand::seq::index::sample(rng, self.len(), 2 * k).into_vec();
        Ok(EpisodeData {
            task_id: self.task_id,
            support: self.batch(&idx[..k])?,
            query: self.batch(&idx[k..])?,
        })
    }
}

/// Simulates a task and draws one K-shot episode from it.
pub fn build_episode(
    task: &PlantTask,
    k: usize,
    excitation: &ExcitationConfig,
    timing: SimTiming,
    seed: u64,
) -> Result<EpisodeData> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    let pool = build_pool(task, excitation, timing, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    pool.draw(k, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_tasks, PhysicalParams, PlantSpec, TaskProtocol};

    fn vdp_excitation() -> ExcitationConfig {
        ExcitationConfig {
            policy: ExcitationPolicy::Autonomous,
            x0_box: vec![[-2.0, 2.0]; 2],
            trajectories: 1,
            duration: 10.0,
        }
    }

    #[test]
    fn vdp_label_at_reference_point() {
        let task = PlantTask::with_true_params(&PlantSpec::van_der_pol(), 0, PhysicalParams::VanDerPol { mu: 0.2 }).unwrap();
        let l = residual_label(&task, &[0.0, 1.0], &[]).unwrap();
        assert!((l[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn episode_has_k_disjoint_samples() {
        let task = &sample_tasks(&PlantSpec::van_der_pol(), &TaskProtocol::VdpGrid, 0).unwrap()[2];
        let ep = build_episode(task, 50, &vdp_excitation(), SimTiming::DEFAULT, 1).unwrap();
        assert_eq!(ep.support.len(), 50);
        assert_eq!(ep.query.len(), 50);
        for i in 0..50 {
            for j in 0..50 {
                assert_ne!(ep.support.inputs.row(i), ep.query.inputs.row(j));
            }
        }
        assert!(ep.support.targets.is_finite());
    }

    #[test]
    fn matched_task_has_zero_labels() {
        let spec = PlantSpec::cart_pole();
        let p = TaskProtocol::ScaleRange {
            count: 1,
            range: [1.0, 1.0],
            params: None,
        };
        let task = &sample_tasks(&spec, &p, 0).unwrap()[0];
        let excitation = ExcitationConfig {
            policy: ExcitationPolicy::Mpc {
                ocp: OcpConfig::new(vec![5.0, 0.1, 5.0, 0.1], vec![0.1], spec.input_bounds.clone()),
                references: vec![ReferenceSignal::constant(vec![0.0; 4], vec![0.0])],
                dither_sigma: vec![1.0],
            },
            x0_box: vec![[-1.0, 1.0], [-0.5, 0.5], [-0.2, 0.2], [-0.2, 0.2]],
            trajectories: 1,
            duration: 1.0,
        };
        let ep = build_episode(task, 10, &excitation, SimTiming::DEFAULT, 3).unwrap();
        assert!(ep.support.targets.max_abs() == 0.0);
        assert_eq!(ep.support.inputs.cols(), 5);
    }

    #[test]
    fn pool_is_seeded() {
        let task = &sample_tasks(&PlantSpec::van_der_pol(), &TaskProtocol::VdpGrid, 0).unwrap()[5];
        let a = build_pool(task, &vdp_excitation(), SimTiming::DEFAULT, 4).unwrap();
        let b = build_pool(task, &vdp_excitation(), SimTiming::DEFAULT, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
    }
}
