use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plant::{PhysicalParams, PlantKind, PlantSpec};
use crate::error::{Error, Result};

/// One plant instance of the task distribution: the nominal parameters are
/// shared, the true parameters are nominal times `scale_factors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTask {
    pub task_id: usize,
    pub base: PlantSpec,
    pub scale_factors: BTreeMap<String, f64>,
}

impl PlantTask {
    /// Builds a task from `base` by scaling its nominal parameters.
    pub fn scaled(base: &PlantSpec, task_id: usize, scale_factors: BTreeMap<String, f64>) -> Result<Self> {
        let true_params = base.nominal_params.scaled(&scale_factors)?;
        let spec = PlantSpec {
            true_params,
            ..base.clone()
        };
        spec.validate()?;
        Ok(Self {
            task_id,
            base: spec,
            scale_factors,
        })
    }

    /// A task with explicitly given true parameters.
    pub fn with_true_params(base: &PlantSpec, task_id: usize, true_params: PhysicalParams) -> Result<Self> {
        let spec = PlantSpec {
            true_params,
            ..base.clone()
        };
        spec.validate()?;
        Ok(Self {
            task_id,
            base: spec,
            scale_factors: BTreeMap::new(),
        })
    }

    pub fn spec(&self) -> &PlantSpec {
        &self.base
    }

    pub fn kind(&self) -> PlantKind {
        self.base.kind
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum TaskProtocol {
    /// μ ∈ {0.0, 0.1, …, 1.0} for the Van der Pol oscillator.
    VdpGrid,
    /// Independent uniform multipliers in `[lo, hi]` for each named parameter.
    ScaleRange {
        count: usize,
        range: [f64; 2],
        #[serde(default)]
        params: Option<Vec<String>>,
    },
}

/// Draws a set of tasks around `spec`'s nominal parameters.
pub fn sample_tasks(spec: &PlantSpec, protocol: &TaskProtocol, seed: u64) -> Result<Vec<PlantTask>> {
    match protocol {
        TaskProtocol::VdpGrid => {
            if spec.kind != PlantKind::VanDerPol {
                return Err(Error::Config("the μ grid only applies to the Van der Pol plant".into()));
            }
            (0..=10)
                .map(|i| PlantTask::with_true_params(spec, i, PhysicalParams::VanDerPol { mu: i as f64 / 10.0 }))
                .collect()
        }
        TaskProtocol::ScaleRange { count, range, params } => {
            let [lo, hi] = *range;
            if !(lo <= hi) || !(lo > 0.0) || !hi.is_finite() {
                return Err(Error::Config(format!("invalid scale range [{lo}, {hi}]")));
            }
            if *count == 0 {
                return Err(Error::Config("task count must be at least 1".into()));
            }
            let names: Vec<String> = match params {
                Some(p) => p.clone(),
                None => spec.kind.default_scaled_params().iter().map(|s| s.to_string()).collect(),
            };
            for n in &names {
                if !spec.kind.param_names().contains(&n.as_str()) {
                    return Err(Error::Config(format!("{:?} has no parameter {n}", spec.kind)));
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..*count)
                .map(|id| {
                    let factors = names
                        .iter()
                        .map(|n| {
                            let f = if lo == hi { lo } else { rng.random_range(lo..=hi) };
                            (n.clone(), f)
                        })
                        .collect();
                    PlantTask::scaled(spec, id, factors)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vdp_grid_has_eleven_exact_values() {
        let tasks = sample_tasks(&PlantSpec::van_der_pol(), &TaskProtocol::VdpGrid, 0).unwrap();
        assert_eq!(tasks.len(), 11);
        for (i, t) in tasks.iter().enumerate() {
            assert_eq!(t.base.true_params.get("mu"), Some(i as f64 / 10.0));
            assert_eq!(t.base.nominal_params.get("mu"), Some(0.7));
        }
    }

    #[test]
    fn scale_range_stays_in_range_and_is_seeded() {
        let p = TaskProtocol::ScaleRange {
            count: 100,
            range: [0.75, 2.0],
            params: None,
        };
        let spec = PlantSpec::quad_2d();
        let tasks = sample_tasks(&spec, &p, 5).unwrap();
        assert_eq!(tasks.len(), 100);
        for t in &tasks {
            assert_eq!(t.scale_factors.len(), 2);
            for f in t.scale_factors.values() {
                assert!((0.75..=2.0).contains(f));
            }
            let m = t.base.true_params.get("m").unwrap();
            let m_nom = spec.nominal_params.get("m").unwrap();
            assert_eq!(m, m_nom * t.scale_factors["m"]);
        }
        assert_eq!(tasks, sample_tasks(&spec, &p, 5).unwrap());
        assert_ne!(tasks, sample_tasks(&spec, &p, 6).unwrap());
    }

    #[test]
    fn unit_range_reproduces_nominal() {
        let p = TaskProtocol::ScaleRange {
            count: 3,
            range: [1.0, 1.0],
            params: None,
        };
        let spec = PlantSpec::cart_pole();
        for t in sample_tasks(&spec, &p, 0).unwrap() {
            assert_eq!(t.base.true_params, spec.nominal_params);
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let spec = PlantSpec::cart_pole();
        for range in [[2.0, 1.0], [0.0, 1.0], [-1.0, 1.0]] {
            let p = TaskProtocol::ScaleRange {
                count: 3,
                range,
                params: None,
            };
            assert!(matches!(sample_tasks(&spec, &p, 0), Err(Error::Config(_))));
        }
        let p = TaskProtocol::ScaleRange {
            count: 3,
            range: [1.0, 2.0],
            params: Some(vec!["I_yy".into()]),
        };
        assert!(sample_tasks(&spec, &p, 0).is_err());
    }
}
