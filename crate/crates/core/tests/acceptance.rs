//! End-to-end acceptance suite.
//!
//! Runs every criterion in turn and prints one `criterion N (name): PASS|FAIL`
//! line each. A panic or error inside a criterion counts as FAIL. The process
//! exits non-zero on a FAIL only when `ACCEPTANCE_STRICT=1` is set; a report
//! run always completes so the full table is visible.
//!
//! `ACCEPTANCE_ONLY=5,9` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use adaptive_nmpc::dynamics::{
    rk4_integrate, rk4_sensitivities, rk4_step, Dynamics, PlantModel, PlantSpec, TaskProtocol,
};
use adaptive_nmpc::experiments::{run_experiment, run_meta_train, ExperimentConfig, MetricsSummary};
use adaptive_nmpc::metalearn::{inner_adapt, meta_gradient, EpisodeData, MetaConfig};
use adaptive_nmpc::nmpc::{solve_ocp, OcpConfig};
use adaptive_nmpc::numcore::{Activation, DenseMatrix, LabeledBatch, Loss, MlpModel};
use adaptive_nmpc::online_adapt::ControllerKind;
use adaptive_nmpc::trace::RolloutTrace;
use adaptive_nmpc::Result as CoreResult;
use nalgebra::{Matrix1, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn core<T>(r: CoreResult<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(elapsed: Duration, budget_s: f64) -> std::result::Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < budget_s,
        format!("runtime {:.1} s exceeds {budget_s} s", elapsed.as_secs_f64()),
    )
}

/// Relative error with an absolute floor for components near zero.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn random_batch(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize, rows: usize) -> LabeledBatch {
    let x: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    LabeledBatch::new(DenseMatrix::from_rows(&x).unwrap(), DenseMatrix::from_rows(&y).unwrap()).unwrap()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for net_id in 0..20u64 {
        let mut sizes = vec![rng.random_range(1..=8)];
        for _ in 0..rng.random_range(1..=3) {
            sizes.push(rng.random_range(4..=64));
        }
        sizes.push(rng.random_range(1..=3));
        if net_id == 0 {
            sizes = vec![8, 64, 64, 64, 3];
        }
        let net = core(MlpModel::init(&sizes, Activation::Tanh, net_id))?;
        let batch = random_batch(&mut rng, sizes[0], *sizes.last().unwrap(), 6);
        let g = core(net.param_gradient(&batch, Loss::Mse))?;
        for i in 0..net.param_count() {
            let mut p = net.params().clone();
            p.0[i] += h;
            let lp = core(core(net.with_params(p.clone()))?.loss(&batch, Loss::Mse))?;
            p.0[i] -= 2.0 * h;
            let lm = core(core(net.with_params(p))?.loss(&batch, Loss::Mse))?;
            let fd = (lp - lm) / (2.0 * h);
            let e = rel_err(fd, g.0[i], 1e-3);
            worst = worst.max(e);
            ensure(e < 1e-5, format!("{sizes:?} parameter {i}: fd {fd} vs {}", g.0[i]))?;
            checked += 1;
        }
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let j = core(net.input_jacobian(&x))?;
        for c in 0..sizes[0] {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let fp = core(net.forward(&xp))?;
            let fm = core(net.forward(&xm))?;
            for r in 0..fp.len() {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                let e = rel_err(fd, j[(r, c)], 1e-3);
                worst = worst.max(e);
                ensure(e < 1e-5, format!("{sizes:?} jacobian ({r},{c}): fd {fd} vs {}", j[(r, c)]))?;
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("{checked} components, worst rel err {worst:.2e}"))
}

fn episode(rng: &mut ChaCha8Rng) -> EpisodeData {
    EpisodeData {
        task_id: 0,
        support: random_batch(rng, 2, 1, 10),
        query: random_batch(rng, 2, 1, 10),
    }
}

fn composite(net: &MlpModel, theta: &adaptive_nmpc::numcore::FlatParams, ep: &EpisodeData, alpha: f64) -> f64 {
    let adapted = inner_adapt(net, theta, &ep.support, alpha, 1, Loss::Mse, 0).unwrap();
    net.with_params(adapted).unwrap().loss(&ep.query, Loss::Mse).unwrap()
}

fn meta_gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for (sizes, seed) in [(vec![2, 1], 1u64), (vec![2, 4, 1], 2), (vec![2, 8, 1], 3), (vec![2, 8, 1], 4)] {
        let net = core(MlpModel::init(&sizes, Activation::Tanh, seed))?;
        let ep = episode(&mut rng);
        let alpha = 0.1;
        let mut cfg = MetaConfig::new(alpha, 1e-3, 1, 10);
        cfg.second_order = true;
        let (g, _) = core(meta_gradient(&net, net.params(), &ep, &cfg))?;
        let h = 1e-5;
        for i in 0..g.len() {
            let (mut p, mut m) = (net.params().clone(), net.params().clone());
            p.0[i] += h;
            m.0[i] -= h;
            let fd = (composite(&net, &p, &ep, alpha) - composite(&net, &m, &ep, alpha)) / (2.0 * h);
            let e = rel_err(fd, g.0[i], 1e-3);
            worst = worst.max(e);
            ensure(e < 1e-4, format!("{sizes:?} component {i}: fd {fd} vs {}", g.0[i]))?;
        }
        let mut zero = cfg.clone();
        zero.inner_lr = 0.0;
        let (second, _) = core(meta_gradient(&net, net.params(), &ep, &zero))?;
        zero.second_order = false;
        let (first, _) = core(meta_gradient(&net, net.params(), &ep, &zero))?;
        ensure(first == second, format!("{sizes:?}: first-order differs from second-order at zero inner rate"))?;
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("worst rel err {worst:.2e}, first-order identical at zero inner rate"))
}

fn integrator_order() -> Outcome {
    let vdp = PlantModel {
        params: PlantSpec::van_der_pol().true_params,
    };
    let end = |dt: f64| rk4_integrate(&vdp, &[1.0, 0.5], &[], 1.0, (1.0 / dt).round() as usize).unwrap();
    let dt = 0.1;
    let reference = end(dt / 64.0);
    let err = |x: Vec<f64>| ((x[0] - reference[0]).powi(2) + (x[1] - reference[1]).powi(2)).sqrt();
    let order = (err(end(dt)) / err(end(dt / 2.0))).log2();
    ensure(order >= 3.7, format!("empirical order {order:.3}"))?;

    let cases: Vec<(PlantSpec, Vec<f64>, Vec<f64>)> = vec![
        (PlantSpec::van_der_pol(), vec![1.2, -0.7], vec![]),
        (PlantSpec::cart_pole(), vec![0.1, 0.5, 0.6, -1.2], vec![3.0]),
        (PlantSpec::quad_2d(), vec![0.2, 0.1, 0.9, -0.3, 0.15, 0.4], vec![0.14, 0.12]),
    ];
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (spec, x, u) in cases {
        let model = PlantModel { params: spec.true_params };
        let (n, m) = (x.len(), u.len());
        let dt = 0.05;
        let (_, ad, bd) = core(rk4_sensitivities(&model, &x, &u, dt))?;
        for j in 0..n + m {
            let (mut xp, mut up, mut xm, mut um) = (x.clone(), u.clone(), x.clone(), u.clone());
            if j < n {
                xp[j] += h;
                xm[j] -= h;
            } else {
                up[j - n] += h;
                um[j - n] -= h;
            }
            let fp = core(rk4_step(&model, &xp, &up, dt))?;
            let fm = core(rk4_step(&model, &xm, &um, dt))?;
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let an = if j < n { ad[(i, j)] } else { bd[(i, j - n)] };
                let e = rel_err(fd, an, 1e-3);
                worst = worst.max(e);
                ensure(e < 1e-5, format!("{:?} ({i},{j}): fd {fd} vs {an}", spec.kind))?;
            }
        }
    }
    Ok(format!("order {order:.3}, worst sensitivity rel err {worst:.2e}"))
}

struct DoubleIntegrator;

impl Dynamics for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn derivative(&self, x: &[f64], u: &[f64]) -> CoreResult<Vec<f64>> {
        Ok(vec![x[1], u[0]])
    }
    fn derivative_and_jacobians(&self, x: &[f64], u: &[f64]) -> CoreResult<(Vec<f64>, DenseMatrix, DenseMatrix)> {
        Ok((
            self.derivative(x, u)?,
            DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]])?,
            DenseMatrix::from_rows(&[vec![0.0], vec![1.0]])?,
        ))
    }
}

/// Finite-horizon discrete LQR by the backward Riccati recursion.
fn riccati_controls(dt: f64, q: [f64; 2], r: f64, n: usize, x0: [f64; 2]) -> Vec<f64> {
    let a = Matrix2::new(1.0, dt, 0.0, 1.0);
    let b = Vector2::new(0.5 * dt * dt, dt);
    let qm = Matrix2::from_diagonal(&Vector2::new(q[0], q[1]));
    let mut p = qm;
    let mut gains = vec![Vector2::zeros().transpose(); n];
    for k in (0..n).rev() {
        let s = Matrix1::new(r) + b.transpose() * p * b;
        let gain = s.try_inverse().unwrap() * b.transpose() * p * a;
        p = qm + a.transpose() * p * a - a.transpose() * p * b * gain;
        gains[k] = gain;
    }
    let mut x = Vector2::new(x0[0], x0[1]);
    let mut u = Vec::with_capacity(n);
    for gain in gains {
        let uk = -(gain * x)[0];
        u.push(uk);
        x = a * x + b * uk;
    }
    u
}

fn solver_optimality() -> Outcome {
    let start = Instant::now();
    let n = 20;
    let q = [1.0, 0.1];
    let r = 0.05;
    let x0 = [1.0, -0.5];
    let oracle = riccati_controls(1.0 / n as f64, q, r, n, x0);
    let refs = vec![(vec![0.0, 0.0], vec![0.0]); n + 1];
    let mut cfg = OcpConfig::new(q.to_vec(), vec![r], vec![]);
    cfg.steps = n;
    let sol = core(solve_ocp(&DoubleIntegrator, &x0, &refs, &cfg, None))?;
    let dev = sol
        .controls
        .iter()
        .zip(&oracle)
        .map(|(u, o)| (u[0] - o).abs())
        .fold(0.0, f64::max);
    ensure(dev < 1e-4, format!("max control deviation {dev:.2e}"))?;

    let peak = oracle.iter().map(|u| u.abs()).fold(0.0, f64::max);
    let bound = 0.5 * peak;
    cfg.bounds = vec![[-bound, bound]];
    let tight = core(solve_ocp(&DoubleIntegrator, &x0, &refs, &cfg, None))?;
    let mut saturated = 0;
    for (k, (u, o)) in tight.controls.iter().zip(&oracle).enumerate() {
        ensure(u[0].abs() <= bound, format!("control {k} = {} outside ±{bound}", u[0]))?;
        if o.abs() > bound {
            ensure(
                u[0] == bound.copysign(*o),
                format!("control {k} = {} not on the bound {bound} (unconstrained {o})", u[0]),
            )?;
            saturated += 1;
        }
    }
    ensure(saturated > 0, "bound never active")?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("max deviation {dev:.2e}, {saturated} controls exactly on the bound"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn config(&self, file: &str, out: &str, checkpoint: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::load(&configs_dir().join(file)).unwrap();
        cfg.output_dir = self.root.join(out);
        cfg.meta.checkpoint = self.root.join(checkpoint);
        cfg
    }
}

fn kind<'a>(s: &'a MetricsSummary, k: ControllerKind) -> std::result::Result<&'a adaptive_nmpc::experiments::KindMetrics, String> {
    s.kinds.get(k.name()).ok_or_else(|| format!("summary lacks {}", k.name()))
}

fn run(cfg: &ExperimentConfig) -> std::result::Result<MetricsSummary, String> {
    core(cfg.validate())?;
    core(run_experiment(cfg))?.ok_or_else(|| "no summary produced".to_string())
}

fn train_and_run(cfg: &ExperimentConfig) -> std::result::Result<MetricsSummary, String> {
    if !cfg.meta.checkpoint.exists() {
        core(run_meta_train(cfg))?;
    }
    run(cfg)
}

fn vdp_prediction(ws: &Workspace) -> Outcome {
    let start = Instant::now();
    let cfg = ws.config("vdp_predict.json", "vdp", "vdp_meta.json");
    let s = train_and_run(&cfg)?;
    let rmse = |k| -> std::result::Result<f64, String> {
        kind(&s, k)?.rmse.map(|r| r.mean).ok_or_else(|| "missing rmse".to_string())
    };
    let (meta, fresh, nominal) = (rmse(ControllerKind::MetaMlp)?, rmse(ControllerKind::ResidualMlp)?, rmse(ControllerKind::Nominal)?);
    let ordering = s.ordering_holds.unwrap_or(0);
    let detail = format!(
        "meta {meta:.4}, fresh {fresh:.4}, nominal {nominal:.4}, ordering {ordering}/{}, ratio {:.2}",
        s.trials,
        meta / nominal
    );
    ensure(ordering * 10 >= 8 * s.trials, format!("ordering holds on too few seeds: {detail}"))?;
    ensure((0.03..=0.30).contains(&nominal), format!("nominal out of band: {detail}"))?;
    ensure(meta < 0.6 * nominal, format!("meta not below 0.6 x nominal: {detail}"))?;
    within(start.elapsed(), 600.0)?;
    Ok(detail)
}

fn cartpole_stabilization(ws: &Workspace) -> Outcome {
    let start = Instant::now();
    let cfg = ws.config("cartpole_stab.json", "cartpole", "cartpole_meta.json");
    let s = train_and_run(&cfg)?;
    let nominal = kind(&s, ControllerKind::Nominal)?;
    let meta = kind(&s, ControllerKind::MetaMlp)?;
    let fresh = kind(&s, ControllerKind::ResidualMlp)?;
    let rate = |k: &adaptive_nmpc::experiments::KindMetrics| k.success_rate.unwrap_or(0.0);
    let settle = |k: &adaptive_nmpc::experiments::KindMetrics| k.settle_time.map(|s| s.mean).unwrap_or(f64::INFINITY);
    let detail = format!(
        "success nominal {:.0}% meta {:.0}% fresh {:.0}%, settle meta {:.2} s fresh {:.2} s",
        100.0 * rate(nominal),
        100.0 * rate(meta),
        100.0 * rate(fresh),
        settle(meta),
        settle(fresh)
    );
    ensure(rate(nominal) == 0.0, format!("nominal succeeded: {detail}"))?;
    ensure(rate(meta) >= 0.95, format!("meta success too low: {detail}"))?;
    ensure(settle(meta) < settle(fresh), format!("meta not faster than fresh: {detail}"))?;
    ensure(settle(meta) <= 4.0, format!("meta settle above 4 s: {detail}"))?;
    within(start.elapsed(), 1200.0)?;
    Ok(detail)
}

fn quad_stabilization(ws: &Workspace) -> Outcome {
    let start = Instant::now();
    let cfg = ws.config("quad_stab.json", "quad_stab", "quad_meta.json");
    let s = train_and_run(&cfg)?;
    let nominal = kind(&s, ControllerKind::Nominal)?;
    let meta = kind(&s, ControllerKind::MetaMlp)?;
    let fresh = kind(&s, ControllerKind::ResidualMlp)?;
    let steady = nominal.steady_state_error.map(|s| s.mean).unwrap_or(f64::NAN);
    let regulated = meta.regulated_by_deadline.unwrap_or(0.0);
    let ttt = |k: &adaptive_nmpc::experiments::KindMetrics| k.time_to_tolerance.map(|s| s.mean).unwrap_or(f64::INFINITY);
    let detail = format!(
        "nominal steady-state {steady:.4} m, meta regulated within 4 s on {:.0}%, time-to-tolerance meta {:.2} s fresh {:.2} s",
        100.0 * regulated,
        ttt(meta),
        ttt(fresh)
    );
    ensure(steady > 0.05, format!("nominal steady-state error not above 0.05 m: {detail}"))?;
    ensure(regulated >= 0.8, format!("meta regulated too rarely: {detail}"))?;
    ensure(ttt(fresh) > ttt(meta), format!("fresh not slower than meta: {detail}"))?;
    within(start.elapsed(), 1200.0)?;
    Ok(detail)
}

fn quad_tracking(ws: &Workspace) -> Outcome {
    let start = Instant::now();
    let cfg = ws.config("quad_track.json", "quad_track", "quad_meta.json");
    let s = train_and_run(&cfg)?;
    let err = |k, late: bool| -> std::result::Result<f64, String> {
        let m = kind(&s, k)?;
        let stat = if late { m.late_error } else { m.early_error };
        stat.map(|s| s.mean).ok_or_else(|| "missing tracking error".to_string())
    };
    let meta_late = err(ControllerKind::MetaMlp, true)?;
    let nominal_late = err(ControllerKind::Nominal, true)?;
    let meta_early = err(ControllerKind::MetaMlp, false)?;
    let fresh_early = err(ControllerKind::ResidualMlp, false)?;
    let detail = format!(
        "late meta {meta_late:.4} vs nominal {nominal_late:.4}, early meta {meta_early:.4} vs fresh {fresh_early:.4}"
    );
    ensure(meta_late < nominal_late, format!("meta not below nominal late: {detail}"))?;
    ensure(meta_early < fresh_early, format!("meta not below fresh early: {detail}"))?;
    within(start.elapsed(), 1200.0)?;
    Ok(detail)
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn determinism(ws: &Workspace) -> Outcome {
    let mut compared = 0;
    let mut vdp = ws.config("vdp_predict.json", "det_vdp_a", "det_vdp_meta_a.json");
    vdp.trials = 3;
    core(run_meta_train(&vdp))?;
    run(&vdp)?;
    let mut vdp_b = vdp.clone();
    vdp_b.output_dir = ws.root.join("det_vdp_b");
    vdp_b.meta.checkpoint = ws.root.join("det_vdp_meta_b.json");
    core(run_meta_train(&vdp_b))?;
    run(&vdp_b)?;
    let ca = std::fs::read(&vdp.meta.checkpoint).unwrap();
    let cb = std::fs::read(&vdp_b.meta.checkpoint).unwrap();
    ensure(ca == cb, "meta-trained checkpoints differ")?;

    let mut cart = ws.config("cartpole_stab.json", "det_cart_a", "det_cart_meta.json");
    cart.trials = 2;
    cart.run.duration = 3.0;
    cart.meta.config.epochs = 50;
    core(run_meta_train(&cart))?;
    run(&cart)?;
    let mut cart_b = cart.clone();
    cart_b.output_dir = ws.root.join("det_cart_b");
    run(&cart_b)?;

    for (a, b) in [(&vdp.output_dir, &vdp_b.output_dir), (&cart.output_dir, &cart_b.output_dir)] {
        let sa = snapshot(a);
        let sb = snapshot(b);
        ensure(sa.keys().eq(sb.keys()), format!("{} and {} hold different files", a.display(), b.display()))?;
        ensure(sa.keys().any(|k| k.ends_with("summary.json")), "no summary written")?;
        for (name, bytes) in &sa {
            ensure(&sb[name] == bytes, format!("{} differs between runs", name.display()))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} CSV/JSON files and the checkpoint byte-identical"))
}

/// Root mean square of the true-state deviation over every row and state
/// entry, together with the RMS of its per-row Euclidean norm.
fn state_rms(a: &RolloutTrace, b: &RolloutTrace) -> (f64, f64) {
    let rows = a.rows.len().min(b.rows.len());
    let sum: f64 = a.rows[..rows]
        .iter()
        .zip(&b.rows[..rows])
        .map(|(p, q)| p.x_true.iter().zip(&q.x_true).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum();
    let n = a.state_dim as f64;
    ((sum / (rows as f64 * n)).sqrt(), (sum / rows as f64).sqrt())
}

fn null_residual(ws: &Workspace) -> Outcome {
    let mut cfg = ws.config("cartpole_stab.json", "null", "null_meta.json");
    cfg.plant = cfg.plant.matched();
    cfg.tasks = TaskProtocol::ScaleRange {
        count: 5,
        range: [1.0, 1.0],
        params: None,
    };
    cfg.meta.config.epochs = 300;
    cfg.trials = 3;
    core(run_meta_train(&cfg))?;
    run(&cfg)?;
    let trials = cfg.output_dir.join("trials");
    let mut worst = 0.0f64;
    let mut worst_norm = 0.0f64;
    let mut lines = Vec::new();
    for i in 0..cfg.trials {
        let load = |k: ControllerKind| core(RolloutTrace::read_csv(&trials.join(format!("{}_trial_{i:03}.csv", k.name()))));
        let nominal = load(ControllerKind::Nominal)?;
        for k in [ControllerKind::ResidualMlp, ControllerKind::MetaMlp] {
            let trace = load(k)?;
            ensure(trace.rows.len() == nominal.rows.len(), format!("{} trial {i} length differs", k.name()))?;
            let (rms, norm) = state_rms(&trace, &nominal);
            worst = worst.max(rms);
            worst_norm = worst_norm.max(norm);
            lines.push(format!("{} {i}: {rms:.4}", k.name()));
        }
    }
    let detail = format!(
        "worst state RMS {worst:.4}, Euclidean {worst_norm:.4} ({})",
        lines.join(", ")
    );
    ensure(worst < 1e-2, detail.clone())?;
    Ok(detail)
}

fn throughput_reporting(ws: &Workspace) -> Outcome {
    let mut cfg = ws.config("cartpole_stab.json", "timing", "timing_meta.json");
    cfg.trials = 1;
    cfg.run.duration = 2.0;
    cfg.meta.config.epochs = 20;
    cfg.run.record_wall_time = true;
    let s = train_and_run(&cfg)?;
    let t = &s.throughput;
    ensure(t.wall_time_recorded, "wall time not recorded")?;
    ensure(t.reference.control_hz == [45.0, 50.0], "reference control rate missing")?;
    let mut parts = Vec::new();
    for k in ControllerKind::ALL {
        let kt = t.kinds.get(k.name()).ok_or_else(|| format!("no throughput for {}", k.name()))?;
        let solve = kt.solve_ms.ok_or_else(|| format!("{} lacks solve percentiles", k.name()))?;
        let hz = kt.control_hz.ok_or_else(|| format!("{} lacks control rate", k.name()))?;
        if k != ControllerKind::Nominal {
            kt.ft_ms.ok_or_else(|| format!("{} lacks fine-tune percentiles", k.name()))?;
        }
        parts.push(format!("{} {:.0} Hz (solve p50 {:.2} ms)", k.name(), hz, solve.median));
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.output_dir.join("summary.json")).unwrap()).unwrap();
    ensure(summary["throughput"]["reference"].is_object(), "summary.json lacks reference metadata")?;
    Ok(parts.join(", "))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let tmp = tempfile::tempdir().unwrap();
    let ws = Workspace {
        root: tmp.path().to_path_buf(),
    };
    let criteria: Vec<(usize, &str, Box<dyn Fn(&Workspace) -> Outcome>)> = vec![
        (1, "gradient correctness", Box::new(|_| gradient_correctness())),
        (2, "meta-gradient correctness", Box::new(|_| meta_gradient_correctness())),
        (3, "integrator order and sensitivities", Box::new(|_| integrator_order())),
        (4, "solver optimality", Box::new(|_| solver_optimality())),
        (5, "van der pol prediction", Box::new(vdp_prediction)),
        (6, "cart-pole stabilization", Box::new(cartpole_stabilization)),
        (7, "quadrotor stabilization", Box::new(quad_stabilization)),
        (8, "quadrotor tracking", Box::new(quad_tracking)),
        (9, "determinism", Box::new(determinism)),
        (10, "null residual", Box::new(null_residual)),
        (11, "throughput reporting", Box::new(throughput_reporting)),
    ];
    let mut failed = 0;
    for (id, name, check) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&ws))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS {detail} ({secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL {detail} ({secs:.1} s)");
            }
        }
    }
    println!("acceptance: {failed} criteria failed");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
