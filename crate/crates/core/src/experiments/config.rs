use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{PlantKind, PlantSpec, ReferenceSignal, SimTiming, TaskProtocol};
use crate::error::{Error, Result};
use crate::metalearn::{ExcitationConfig, ExcitationPolicy, MetaConfig};
use crate::nmpc::OcpConfig;
use crate::numcore::{Activation, OptimizerKind};
use crate::online_adapt::{AdaptConfig, ControllerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    VdpPredict,
    CartpoleStab,
    QuadStab,
    QuadTrack,
    MetaTrain,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::VdpPredict => "vdp_predict",
            ExperimentKind::CartpoleStab => "cartpole_stab",
            ExperimentKind::QuadStab => "quad_stab",
            ExperimentKind::QuadTrack => "quad_track",
            ExperimentKind::MetaTrain => "meta_train",
        }
    }
}

/// Network, meta-training hyperparameters, data collection and checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaBlock {
    pub architecture: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(flatten)]
    pub config: MetaConfig,
    pub excitation: ExcitationConfig,
    /// where the meta-trained network is written and read
    pub checkpoint: PathBuf,
}

/// Closed-loop / prediction trial settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBlock {
    pub controllers: Vec<ControllerKind>,
    /// seconds per trial
    pub duration: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    pub x0_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub reference: Option<ReferenceSignal>,
    #[serde(default = "default_period")]
    pub control_period: f64,
    #[serde(default = "default_substep")]
    pub substep: f64,
    #[serde(default)]
    pub record_wall_time: bool,
    /// prediction window for the Van der Pol benchmark, seconds
    #[serde(default = "one_second")]
    pub window: f64,
    /// start the freshly initialized network with a zero output layer so
    /// its initial residual is exactly zero
    #[serde(default)]
    pub zero_fresh_output: bool,
}

fn default_period() -> f64 {
    SimTiming::DEFAULT.control_period
}
fn default_substep() -> f64 {
    SimTiming::DEFAULT.substep
}
fn one_second() -> f64 {
    1.0
}

/// Trial and epoch counts used with `--paper-scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperScale {
    pub trials: usize,
    pub epochs: usize,
}

/// One experiment, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub plant: PlantSpec,
    pub tasks: TaskProtocol,
    #[serde(default)]
    pub ocp: Option<OcpConfig>,
    pub adapt: AdaptConfig,
    pub meta: MetaBlock,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub run: RunBlock,
    pub paper_scale: PaperScale,
}

impl ExperimentConfig {
    /// Reads a config; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if self.meta.checkpoint.is_relative() {
            self.meta.checkpoint = base.join(&self.meta.checkpoint);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn timing(&self) -> SimTiming {
        SimTiming {
            control_period: self.run.control_period,
            substep: self.run.substep,
        }
    }

    /// Applies `--paper-scale`, `--trials` and `--seed`.
    pub fn apply_overrides(&mut self, paper_scale: bool, trials: Option<usize>, seed: Option<u64>) {
        if paper_scale {
            self.trials = self.paper_scale.trials;
            self.meta.config.epochs = self.paper_scale.epochs;
        }
        if let Some(t) = trials {
            self.trials = t;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        self.plant.validate()?;
        let (n, m) = (self.plant.state_dim(), self.plant.input_dim());
        let expected_plant = match self.experiment {
            ExperimentKind::VdpPredict => Some(PlantKind::VanDerPol),
            ExperimentKind::CartpoleStab => Some(PlantKind::CartPole),
            ExperimentKind::QuadStab | ExperimentKind::QuadTrack => Some(PlantKind::Quad2d),
            ExperimentKind::MetaTrain => None,
        };
        if let Some(k) = expected_plant {
            if k != self.plant.kind {
                return err(format!("{} runs on {k:?}, config has {:?}", self.experiment.name(), self.plant.kind));
            }
        }
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        self.meta.config.validate()?;
        let (n_in, n_out) = self.plant.kind.residual_io();
        let arch = &self.meta.architecture;
        if arch.len() < 2 || arch[0] != n_in || *arch.last().unwrap() != n_out {
            return err(format!("{:?} needs a network [{n_in}, …, {n_out}], got {arch:?}", self.plant.kind));
        }
        if self.meta.excitation.x0_box.len() != n {
            return err("excitation x0_box needs one range per state".into());
        }
        if self.plant.kind != PlantKind::VanDerPol {
            match &self.ocp {
                Some(o) => o.validate(n, m)?,
                None => return err("controlled plants need an ocp block".into()),
            }
        }
        let timing = self.timing();
        timing.substeps()?;
        self.adapt.validate(timing.control_period)?;
        if self.run.controllers.is_empty() {
            return err("at least one controller kind is required".into());
        }
        if self.run.x0_box.len() != n {
            return err("run.x0_box needs one range per state".into());
        }
        if self.run.x0_box.iter().any(|[lo, hi]| !(lo <= hi)) {
            return err("x0_box ranges must be ordered".into());
        }
        if !(self.run.noise_sigma >= 0.0) {
            return err("noise_sigma must be non-negative".into());
        }
        if let Some(r) = &self.run.reference {
            r.validate(n, m)?;
        }
        if crate::dynamics::ratio(self.run.duration, timing.control_period).is_none() {
            return err(format!("duration {} is not a multiple of the control period", self.run.duration));
        }
        Ok(())
    }

    /// The shipped configuration of each experiment.
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::VdpPredict | ExperimentKind::MetaTrain => vdp_default(kind),
            ExperimentKind::CartpoleStab => cartpole_default(),
            ExperimentKind::QuadStab => quad_default(false),
            ExperimentKind::QuadTrack => quad_default(true),
        }
    }
}

fn all_controllers() -> Vec<ControllerKind> {
    ControllerKind::ALL.to_vec()
}

fn vdp_default(kind: ExperimentKind) -> ExperimentConfig {
    let plant = PlantSpec::van_der_pol();
    let mut meta = MetaConfig::new(1e-2, 1e-3, 2000, 50);
    meta.meta_optimizer = OptimizerKind::Adam;
    let mut adapt = AdaptConfig::new(1.0, 50, 50);
    adapt.buffer_capacity = 50;
    ExperimentConfig {
        experiment: kind,
        plant,
        tasks: TaskProtocol::VdpGrid,
        ocp: None,
        adapt,
        meta: MetaBlock {
            architecture: vec![2, 64, 64, 1],
            activation: Activation::Tanh,
            config: meta,
            excitation: ExcitationConfig {
                policy: ExcitationPolicy::Autonomous,
                x0_box: vec![[-2.0, 2.0]; 2],
                trajectories: 3,
                duration: 10.0,
            },
            checkpoint: PathBuf::from("checkpoints/vdp_meta.json"),
        },
        trials: 10,
        seed: 0,
        output_dir: PathBuf::from("out/vdp_predict"),
        run: RunBlock {
            controllers: all_controllers(),
            duration: 10.0,
            noise_sigma: 0.025,
            x0_box: vec![[0.5, 0.5]; 2],
            reference: None,
            control_period: default_period(),
            substep: default_substep(),
            record_wall_time: false,
            window: 1.0,
            zero_fresh_output: true,
        },
        paper_scale: PaperScale {
            trials: 10,
            epochs: 20000,
        },
    }
}

fn cartpole_default() -> ExperimentConfig {
    let plant = PlantSpec::cart_pole();
    let ocp = OcpConfig::new(vec![5.0, 0.1, 5.0, 0.1], vec![0.1], plant.input_bounds.clone());
    let mut meta = MetaConfig::new(1e-3, 1e-4, 2000, 20);
    meta.meta_optimizer = OptimizerKind::Adam;
    let reference = ReferenceSignal::constant(vec![0.0; 4], vec![0.0]);
    let x0_box = vec![[-1.0, 1.0], [-0.5, 0.5], [-0.2, 0.2], [-0.2, 0.2]];
    ExperimentConfig {
        experiment: ExperimentKind::CartpoleStab,
        tasks: TaskProtocol::ScaleRange {
            count: 50,
            range: [0.75, 2.0],
            params: None,
        },
        ocp: Some(ocp.clone()),
        adapt: AdaptConfig::new(0.2, 20, 20),
        meta: MetaBlock {
            architecture: vec![5, 64, 64, 64, 2],
            activation: Activation::Tanh,
            config: meta,
            excitation: ExcitationConfig {
                policy: ExcitationPolicy::Mpc {
                    ocp,
                    references: vec![reference.clone()],
                    dither_sigma: vec![1.0],
                },
                x0_box: x0_box.clone(),
                trajectories: 3,
                duration: 10.0,
            },
            checkpoint: PathBuf::from("checkpoints/cartpole_meta.json"),
        },
        trials: 20,
        seed: 0,
        output_dir: PathBuf::from("out/cartpole_stab"),
        run: RunBlock {
            controllers: all_controllers(),
            duration: 10.0,
            noise_sigma: 0.0,
            x0_box,
            reference: Some(reference),
            control_period: default_period(),
            substep: default_substep(),
            record_wall_time: false,
            window: 1.0,
            zero_fresh_output: true,
        },
        paper_scale: PaperScale {
            trials: 100,
            epochs: 20000,
        },
        plant,
    }
}

/// Circle of radius 0.5 m around (0, 1) with a 15 s period.
pub fn circle_reference(u_ref: Vec<f64>) -> ReferenceSignal {
    ReferenceSignal::Circle {
        center: [0.0, 1.0],
        radius: 0.5,
        period: 15.0,
        u_ref,
    }
}

fn quad_default(track: bool) -> ExperimentConfig {
    let plant = PlantSpec::quad_2d();
    let hover = plant.nominal_params.hover_thrust().unwrap();
    let ocp = OcpConfig::new(vec![5.0, 0.1, 5.0, 0.1, 5.0, 0.1], vec![0.1, 0.1], plant.input_bounds.clone());
    let mut meta = MetaConfig::new(1e-3, 1e-4, 2000, 20);
    meta.meta_optimizer = OptimizerKind::Adam;
    let hover_ref = ReferenceSignal::constant(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0], vec![hover, hover]);
    let circle = circle_reference(vec![hover, hover]);
    let stab_box = vec![[-0.5, 0.5], [-0.1, 0.1], [0.5, 1.5], [-0.1, 0.1], [-0.1, 0.1], [-0.1, 0.1]];
    let track_box = vec![[0.4, 0.6], [-0.05, 0.05], [0.9, 1.1], [-0.05, 0.05], [-0.05, 0.05], [-0.05, 0.05]];
    ExperimentConfig {
        experiment: if track {
            ExperimentKind::QuadTrack
        } else {
            ExperimentKind::QuadStab
        },
        tasks: TaskProtocol::ScaleRange {
            count: 100,
            range: [0.75, 2.0],
            params: None,
        },
        ocp: Some(ocp.clone()),
        adapt: AdaptConfig::new(0.2, 20, 20),
        meta: MetaBlock {
            architecture: vec![8, 64, 64, 64, 3],
            activation: Activation::Tanh,
            config: meta,
            excitation: ExcitationConfig {
                policy: ExcitationPolicy::Mpc {
                    ocp,
                    references: vec![hover_ref.clone(), hover_ref.clone(), circle.clone()],
                    dither_sigma: vec![0.01, 0.01],
                },
                x0_box: stab_box.clone(),
                trajectories: 3,
                duration: 10.0,
            },
            checkpoint: PathBuf::from("checkpoints/quad_meta.json"),
        },
        trials: 10,
        seed: 0,
        output_dir: PathBuf::from(if track { "out/quad_track" } else { "out/quad_stab" }),
        run: RunBlock {
            controllers: all_controllers(),
            duration: if track { 15.0 } else { 10.0 },
            noise_sigma: 0.0,
            x0_box: if track { track_box } else { stab_box },
            reference: Some(if track { circle } else { hover_ref }),
            control_period: default_period(),
            substep: default_substep(),
            record_wall_time: false,
            window: 1.0,
            zero_fresh_output: true,
        },
        paper_scale: PaperScale {
            trials: 20,
            epochs: 20000,
        },
        plant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for kind in [
            ExperimentKind::VdpPredict,
            ExperimentKind::CartpoleStab,
            ExperimentKind::QuadStab,
            ExperimentKind::QuadTrack,
            ExperimentKind::MetaTrain,
        ] {
            let cfg = ExperimentConfig::default_for(kind);
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::CartpoleStab);
        cfg.apply_overrides(true, None, Some(7));
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.meta.config.epochs, 20000);
        assert_eq!(cfg.seed, 7);
        cfg.apply_overrides(false, Some(3), None);
        assert_eq!(cfg.trials, 3);
    }

    #[test]
    fn wrong_plant_is_config_error() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::CartpoleStab);
        cfg.plant = PlantSpec::quad_2d();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        ExperimentConfig::default_for(ExperimentKind::VdpPredict).save(&p).unwrap();
        let cfg = ExperimentConfig::load(&p).unwrap();
        assert_eq!(cfg.output_dir, dir.path().join("out/vdp_predict"));
        std::fs::write(&p, "{\"experiment\": \"vdp_predict\"}").unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(Error::Config(_))));
    }
}
