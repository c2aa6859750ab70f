use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, ExperimentKind};
use super::metrics::{aggregate, Definitions, Manifest, MetricsSummary};
use super::plot::plot;
use crate::dynamics::{simulate_true, PlantTask};
use crate::error::{Error, Result};
use crate::metalearn::{build_pool, meta_train, write_train_log, TaskPool};
use crate::numcore::MlpModel;
use crate::online_adapt::{run_closed_loop, ControllerKind, LoopSettings, OnlinePredictor};
use crate::trace::fmt_f64;

/// Runs whatever `cfg.experiment` names. Meta-training returns no summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Option<MetricsSummary>> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::MetaTrain => {
            run_meta_train(cfg)?;
            Ok(None)
        }
        ExperimentKind::VdpPredict => run_vdp_predict(cfg).map(Some),
        ExperimentKind::CartpoleStab | ExperimentKind::QuadStab | ExperimentKind::QuadTrack => {
            run_closed_loop_trials(cfg).map(Some)
        }
    }
}

/// Training log path that goes with a checkpoint.
pub fn train_log_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    checkpoint.with_file_name(format!("{stem}_train_log.csv"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Builds the task family, collects data, meta-trains and writes the
/// checkpoint plus its training log.
pub fn run_meta_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let tasks = crate::dynamics::sample_tasks(&cfg.plant, &cfg.tasks, cfg.seed)?;
    let timing = cfg.timing();
    let pools: Vec<TaskPool> = tasks
        .iter()
        .map(|t| {
            let seed = cfg.seed.wrapping_add(1_000_003u64.wrapping_mul(t.task_id as u64 + 1));
            build_pool(t, &cfg.meta.excitation, timing, seed)
        })
        .collect::<Result<_>>()?;
    let net = MlpModel::init(&cfg.meta.architecture, cfg.meta.activation, cfg.seed)?;
    let (theta, log) = meta_train(&net, &pools, net.params(), &cfg.meta.config, cfg.seed)?;
    let trained = net.with_params(theta)?;
    let path = cfg.meta.checkpoint.clone();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    trained.save_json(&path)?;
    write_train_log(&train_log_path(&path), &log)?;
    Ok(path)
}

fn load_meta(cfg: &ExperimentConfig) -> Result<Option<MlpModel>> {
    if !cfg.run.controllers.contains(&ControllerKind::MetaMlp) {
        return Ok(None);
    }
    let path = &cfg.meta.checkpoint;
    if !path.exists() {
        return Err(Error::Config(format!(
            "meta checkpoint {} does not exist; run meta-train first",
            path.display()
        )));
    }
    let net = MlpModel::load_json(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if net.layer_sizes() != cfg.meta.architecture.as_slice() {
        return Err(Error::Config(format!(
            "checkpoint layers {:?} differ from the configured {:?}",
            net.layer_sizes(),
            cfg.meta.architecture
        )));
    }
    Ok(Some(net))
}

fn deploy_task(cfg: &ExperimentConfig) -> Result<PlantTask> {
    PlantTask::with_true_params(&cfg.plant, 0, cfg.plant.true_params)
}

/// Seed of trial `i`.
pub fn trial_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

fn sample_x0(cfg: &ExperimentConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cfg.run
        .x0_box
        .iter()
        .map(|[lo, hi]| if lo == hi { *lo } else { rng.random_range(*lo..*hi) })
        .collect()
}

fn initial_network(
    cfg: &ExperimentConfig,
    kind: ControllerKind,
    meta: Option<&MlpModel>,
    seed: u64,
) -> Result<Option<MlpModel>> {
    Ok(match kind {
        ControllerKind::Nominal => None,
        ControllerKind::ResidualMlp => {
            let net = MlpModel::init(&cfg.meta.architecture, cfg.meta.activation, seed)?;
            Some(if cfg.run.zero_fresh_output { zero_output_layer(&net)? } else { net })
        }
        ControllerKind::MetaMlp => Some(meta.expect("checkpoint loaded").clone()),
    })
}

/// Copy of `net` whose last layer's weights and biases are zero.
pub fn zero_output_layer(net: &MlpModel) -> Result<MlpModel> {
    let sizes = net.layer_sizes();
    let (fan_in, fan_out) = (sizes[sizes.len() - 2], sizes[sizes.len() - 1]);
    let mut p = net.params().clone();
    let n = p.0.len();
    for v in &mut p.0[n - fan_in * fan_out - fan_out..] {
        *v = 0.0;
    }
    net.with_params(p)
}

fn manifest(cfg: &ExperimentConfig) -> Manifest {
    Manifest {
        experiment: cfg.experiment,
        trials: cfg.trials,
        seed: cfg.seed,
        controllers: cfg.run.controllers.clone(),
        duration: cfg.run.duration,
        control_period: cfg.run.control_period,
        record_wall_time: cfg.run.record_wall_time,
        definitions: Definitions {
            late_window: [5.0, cfg.run.duration.max(5.0)],
            ..Definitions::default()
        },
        traces: BTreeMap::new(),
        predictions: Vec::new(),
    }
}

fn finish(cfg: &ExperimentConfig, m: &Manifest) -> Result<MetricsSummary> {
    m.save(&cfg.output_dir)?;
    let summary = aggregate(&cfg.output_dir)?;
    plot(&cfg.output_dir)?;
    Ok(summary)
}

/// Cart-pole stabilization and quadrotor stabilization / tracking: every
/// trial runs each controller kind from the same initial state.
pub fn run_closed_loop_trials(cfg: &ExperimentConfig) -> Result<MetricsSummary> {
    cfg.validate()?;
    let meta = load_meta(cfg)?;
    let task = deploy_task(cfg)?;
    let ocp = cfg
        .ocp
        .as_ref()
        .ok_or_else(|| Error::Config("closed-loop experiments need an ocp block".into()))?;
    let reference = cfg
        .run
        .reference
        .as_ref()
        .ok_or_else(|| Error::Config("closed-loop experiments need run.reference".into()))?;
    let settings = LoopSettings {
        timing: cfg.timing(),
        noise_sigma: cfg.run.noise_sigma,
        record_wall_time: cfg.run.record_wall_time,
    };
    let trials_dir = cfg.output_dir.join("trials");
    create_dir(&trials_dir)?;
    let mut m = manifest(cfg);
    for i in 0..cfg.trials {
        let seed = trial_seed(cfg.seed, i);
        let x0 = sample_x0(cfg, seed);
        for &kind in &cfg.run.controllers {
            let net = initial_network(cfg, kind, meta.as_ref(), seed)?;
            let trace = run_closed_loop(
                &task,
                kind,
                net.as_ref(),
                ocp,
                &cfg.adapt,
                reference,
                &x0,
                cfg.run.duration,
                &settings,
                seed,
            )?;
            let rel = PathBuf::from("trials").join(format!("{}_trial_{i:03}.csv", kind.name()));
            trace.write_csv(&cfg.output_dir.join(&rel))?;
            m.traces.entry(kind.name().to_string()).or_default().push(rel);
        }
    }
    finish(cfg, &m)
}

fn ms(started: Instant, record: bool) -> f64 {
    if record {
        started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

/// Van der Pol prediction benchmark. Each trial simulates the noisy true
/// oscillator; at every window boundary each predictor fine-tunes on the
/// previous window of measurements and predicts the next window open loop
/// from the current measurement.
pub fn run_vdp_predict(cfg: &ExperimentConfig) -> Result<MetricsSummary> {
    cfg.validate()?;
    let meta = load_meta(cfg)?;
    let task = deploy_task(cfg)?;
    let dt = cfg.run.control_period;
    let steps = (cfg.run.duration / dt).round() as usize;
    let learn_steps = (cfg.adapt.t_update / dt).round() as usize;
    let horizon = crate::dynamics::ratio(cfg.run.window, dt)
        .ok_or_else(|| Error::Config("prediction window is not a multiple of the period".into()))?;
    if learn_steps == 0 || horizon == 0 || learn_steps + horizon > steps {
        return Err(Error::Config("trial too short for one learn + predict window".into()));
    }
    let trials_dir = cfg.output_dir.join("trials");
    create_dir(&trials_dir)?;
    let kinds = cfg.run.controllers.clone();
    let mut m = manifest(cfg);
    let record = cfg.run.record_wall_time;

    for i in 0..cfg.trials {
        let seed = trial_seed(cfg.seed, i);
        let x0 = sample_x0(cfg, seed);
        let truth = simulate_true(
            task.spec(),
            &x0,
            &vec![Vec::new(); steps],
            cfg.run.duration,
            cfg.timing(),
            cfg.run.noise_sigma,
            seed,
        )?;
        let mut predictors: Vec<OnlinePredictor> = kinds
            .iter()
            .map(|&k| OnlinePredictor::new(&task, k, initial_network(cfg, k, meta.as_ref(), seed)?.as_ref(), cfg.adapt.clone()))
            .collect::<Result<_>>()?;

        let mut header = vec![
            "window_start".to_string(),
            "step".into(),
            "t".into(),
            "x_true[0]".into(),
            "x_true[1]".into(),
            "x_meas[0]".into(),
            "x_meas[1]".into(),
        ];
        for k in &kinds {
            let n = k.name();
            header.extend([
                format!("{n}[0]"),
                format!("{n}[1]"),
                format!("{n}_predict_ms"),
                format!("{n}_ft_ms"),
                format!("{n}_ft_loss_before"),
                format!("{n}_ft_loss_after"),
            ]);
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;

        let mut start = learn_steps;
        while start + horizon <= steps {
            let first = start.saturating_sub(learn_steps + cfg.adapt.smoothing_width - 1);
            let window: Vec<(f64, Vec<f64>)> = truth.rows[first..=start]
                .iter()
                .map(|r| (r.t, r.x_meas.clone()))
                .collect();
            let x_start = truth.rows[start].x_meas.clone();
            let mut per_kind = Vec::with_capacity(kinds.len());
            for p in predictors.iter_mut() {
                let t0 = Instant::now();
                let ft = p.learn(&window, dt)?;
                let ft_ms = if ft.is_some() { ms(t0, record) } else { f64::NAN };
                let t1 = Instant::now();
                let pred = p.predict(&x_start, dt, horizon)?;
                let predict_ms = ms(t1, record);
                per_kind.push((pred, predict_ms, ft_ms, ft));
            }
            for s in 0..=horizon {
                let row = &truth.rows[start + s];
                let mut rec = vec![
                    fmt_f64(truth.rows[start].t),
                    s.to_string(),
                    fmt_f64(row.t),
                    fmt_f64(row.x_true[0]),
                    fmt_f64(row.x_true[1]),
                    fmt_f64(row.x_meas[0]),
                    fmt_f64(row.x_meas[1]),
                ];
                for (pred, pms, fms, ft) in &per_kind {
                    let (before, after) = ft.unwrap_or((f64::NAN, f64::NAN));
                    rec.extend([
                        fmt_f64(pred[s][0]),
                        fmt_f64(pred[s][1]),
                        fmt_f64(*pms),
                        fmt_f64(*fms),
                        fmt_f64(before),
                        fmt_f64(after),
                    ]);
                }
                w.write_record(&rec)?;
            }
            start += horizon;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
        let rel = PathBuf::from("trials").join(format!("predict_trial_{i:03}.csv"));
        let path = cfg.output_dir.join(&rel);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        m.predictions.push(rel);
        let rel = PathBuf::from("trials").join(format!("plant_trial_{i:03}.csv"));
        truth.write_csv(&cfg.output_dir.join(&rel))?;
        m.traces.entry("plant".into()).or_default().push(rel);
    }
    finish(cfg, &m)
}
