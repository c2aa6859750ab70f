use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_sensitivities, rk4_step, Dynamics};
use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

fn default_max_iters() -> usize {
    30
}
fn default_tol() -> f64 {
    1e-6
}
fn default_reg() -> f64 {
    1e-6
}

/// Finite-horizon tracking problem: horizon, diagonal weights and input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpConfig {
    /// prediction horizon in seconds
    pub horizon: f64,
    pub steps: usize,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// per-channel `[u_min, u_max]`; empty means unbounded
    #[serde(default)]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default = "default_max_iters")]
    pub sqp_max_iters: usize,
    #[serde(default = "default_tol")]
    pub sqp_tol: f64,
    #[serde(default = "default_reg")]
    pub reg_lambda: f64,
}

impl OcpConfig {
    /// Horizon 1 s over 20 steps with the default solver settings.
    pub fn new(q: Vec<f64>, r: Vec<f64>, bounds: Vec<[f64; 2]>) -> Self {
        Self {
            horizon: 1.0,
            steps: 20,
            q,
            r,
            bounds,
            sqp_max_iters: default_max_iters(),
            sqp_tol: default_tol(),
            reg_lambda: default_reg(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self, state_dim: usize, input_dim: usize) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.steps == 0 || !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return err(format!("need steps >= 1 and horizon > 0, got {} / {}", self.steps, self.horizon));
        }
        if self.q.len() != state_dim || self.r.len() != input_dim {
            return err(format!(
                "weights have {}/{} entries, plant needs {state_dim}/{input_dim}",
                self.q.len(),
                self.r.len()
            ));
        }
        if self.q.iter().chain(&self.r).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return err("weights must be finite and non-negative".into());
        }
        if !self.bounds.is_empty() && self.bounds.len() != input_dim {
            return err(format!("{} bounds for {input_dim} inputs", self.bounds.len()));
        }
        if self.bounds.iter().any(|[lo, hi]| !(lo <= hi)) {
            return err("input bounds must satisfy lo <= hi".into());
        }
        if !(self.sqp_tol > 0.0) || !(self.reg_lambda >= 0.0) || self.sqp_max_iters == 0 {
            return err("need sqp_tol > 0, reg_lambda >= 0 and sqp_max_iters >= 1".into());
        }
        Ok(())
    }

    fn clamp(&self, u: &mut [f64]) {
        for (v, [lo, hi]) in u.iter_mut().zip(&self.bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    /// `N + 1` states
    pub states: Vec<Vec<f64>>,
    /// `N` controls
    pub controls: Vec<Vec<f64>>,
    pub cost: f64,
    pub iters: usize,
    pub converged: bool,
    /// wall-clock seconds
    pub solve_time: f64,
}

/// `‖x − x_ref‖²_Q + ‖u − u_ref‖²_R` with diagonal weights.
pub fn stage_cost(x: &[f64], u: &[f64], x_ref: &[f64], u_ref: &[f64], q: &[f64], r: &[f64]) -> f64 {
    terminal_cost(x, x_ref, q) + terminal_cost(u, u_ref, r)
}

/// `‖x_N − x_ref‖²_Q`
pub fn terminal_cost(x: &[f64], x_ref: &[f64], q: &[f64]) -> f64 {
    x.iter()
        .zip(x_ref)
        .zip(q)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum()
}

/// Reference pairs `(x_ref, u_ref)` for nodes `0..=N`.
pub type RefWindow = [(Vec<f64>, Vec<f64>)];

fn trajectory_cost(states: &[Vec<f64>], controls: &[Vec<f64>], refs: &RefWindow, cfg: &OcpConfig) -> f64 {
    let n = controls.len();
    let mut c = 0.0;
    for k in 0..n {
        c += stage_cost(&states[k], &controls[k], &refs[k].0, &refs[k].1, &cfg.q, &cfg.r);
    }
    c + terminal_cost(&states[n], &refs[n].0, &cfg.q)
}

fn rollout<D: Dynamics + ?Sized>(model: &D, x0: &[f64], controls: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.to_vec());
    for u in controls {
        let next = rk4_step(model, states.last().unwrap(), u, dt)?;
        states.push(next);
    }
    Ok(states)
}

/// Minimizes `½ dᵀ H d + gᵀ d` over the box `lo ≤ d ≤ hi` by enumerating
/// active sets. Returns the minimizer and a per-channel "free" mask.
fn box_qp(h: &DenseMatrix, g: &[f64], lo: &[f64], hi: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    let m = g.len();
    let mut best: Option<(f64, Vec<f64>, Vec<bool>)> = None;
    let combos = 3usize.pow(m as u32);
    for code in 0..combos {
        // 0 free, 1 at lower bound, 2 at upper bound
        let mut state = Vec::with_capacity(m);
        let mut c = code;
        for _ in 0..m {
            state.push(c % 3);
            c /= 3;
        }
        if state.iter().enumerate().any(|(i, s)| match s {
            1 => !lo[i].is_finite(),
            2 => !hi[i].is_finite(),
            _ => false,
        }) {
            continue;
        }
        let mut d = vec![0.0; m];
        for i in 0..m {
            match state[i] {
                1 => d[i] = lo[i],
                2 => d[i] = hi[i],
                _ => {}
            }
        }
        let free: Vec<usize> = (0..m).filter(|i| state[*i] == 0).collect();
        if !free.is_empty() {
            let nf = free.len();
            let mut hff = DenseMatrix::zeros(nf, nf);
            let mut rhs = DenseMatrix::zeros(nf, 1);
            for (a, &i) in free.iter().enumerate() {
                let mut r = -g[i];
                for j in 0..m {
                    if state[j] != 0 {
                        r -= h[(i, j)] * d[j];
                    }
                }
                rhs.as_mut_slice()[a] = r;
                for (b, &j) in free.iter().enumerate() {
                    hff.row_mut(a)[b] = h[(i, j)];
                }
            }
            let sol = hff.cholesky_solve(&rhs)?;
            for (a, &i) in free.iter().enumerate() {
                d[i] = sol.as_slice()[a];
            }
            if free.iter().any(|&i| d[i] < lo[i] || d[i] > hi[i]) {
                continue;
            }
        }
        let hd = h.mat_vec(&d);
        let obj: f64 = (0..m).map(|i| 0.5 * d[i] * hd[i] + g[i] * d[i]).sum();
        if best.as_ref().map_or(true, |(o, _, _)| obj < *o) {
            best = Some((obj, d, state.iter().map(|s| *s == 0).collect()));
        }
    }
    let (_, d, free) = best.ok_or_else(|| Error::Numeric("box QP has no feasible candidate".into()))?;
    Ok((d, free))
}

struct BackwardPass {
    ff: Vec<Vec<f64>>,
    fb: Vec<DenseMatrix>,
}

fn backward_pass<D: Dynamics + ?Sized>(
    model: &D,
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
    refs: &RefWindow,
    cfg: &OcpConfig,
    reg: f64,
) -> Result<BackwardPass> {
    let n_steps = controls.len();
    let n = states[0].len();
    let m = controls.first().map_or(0, |u| u.len());
    let dt = cfg.dt();
    let two_q = DenseMatrix::from_diag(&cfg.q.iter().map(|w| 2.0 * w).collect::<Vec<_>>());
    let two_r = DenseMatrix::from_diag(&cfg.r.iter().map(|w| 2.0 * w).collect::<Vec<_>>());

    let mut vx: Vec<f64> = (0..n)
        .map(|i| 2.0 * cfg.q[i] * (states[n_steps][i] - refs[n_steps].0[i]))
        .collect();
    let mut vxx = two_q.clone();
    let mut ff = vec![Vec::new(); n_steps];
    let mut fb = vec![DenseMatrix::zeros(m, n); n_steps];

    for k in (0..n_steps).rev() {
        let (x, u) = (&states[k], &controls[k]);
        let (_, a, b) = rk4_sensitivities(model, x, u, dt)?;
        let lx: Vec<f64> = (0..n).map(|i| 2.0 * cfg.q[i] * (x[i] - refs[k].0[i])).collect();
        let lu: Vec<f64> = (0..m).map(|i| 2.0 * cfg.r[i] * (u[i] - refs[k].1[i])).collect();

        let qx: Vec<f64> = lx.iter().zip(a.tr_mat_vec(&vx)).map(|(p, q)| p + q).collect();
        let qu: Vec<f64> = lu.iter().zip(b.tr_mat_vec(&vx)).map(|(p, q)| p + q).collect();
        let vxx_a = vxx.matmul(&a);
        let vxx_b = vxx.matmul(&b);
        let qxx = two_q.add(&a.tr_matmul(&vxx_a));
        let mut quu = two_r.add(&b.tr_matmul(&vxx_b));
        for i in 0..m {
            quu.row_mut(i)[i] += reg;
        }
        let qux = b.tr_matmul(&vxx_a);

        let lo: Vec<f64> = (0..m)
            .map(|i| cfg.bounds.get(i).map_or(f64::NEG_INFINITY, |bd| bd[0] - u[i]))
            .collect();
        let hi: Vec<f64> = (0..m)
            .map(|i| cfg.bounds.get(i).map_or(f64::INFINITY, |bd| bd[1] - u[i]))
            .collect();
        let (kff, free) = box_qp(&quu, &qu, &lo, &hi)?;

        // feedback only on the free channels
        let mut kfb = DenseMatrix::zeros(m, n);
        let free_idx: Vec<usize> = (0..m).filter(|i| free[*i]).collect();
        if !free_idx.is_empty() {
            let nf = free_idx.len();
            let mut hff = DenseMatrix::zeros(nf, nf);
            let mut rhs = DenseMatrix::zeros(nf, n);
            for (p, &i) in free_idx.iter().enumerate() {
                for (q, &j) in free_idx.iter().enumerate() {
                    hff.row_mut(p)[q] = quu[(i, j)];
                }
                for j in 0..n {
                    rhs.row_mut(p)[j] = -qux[(i, j)];
                }
            }
            let sol = hff.cholesky_solve(&rhs)?;
            for (p, &i) in free_idx.iter().enumerate() {
                kfb.row_mut(i).copy_from_slice(sol.row(p));
            }
        }

        // V_x = Q_x + Kᵀ Q_uu k + Kᵀ Q_u + Q_uxᵀ k
        let quu_k = quu.mat_vec(&kff);
        let t1 = kfb.tr_mat_vec(&quu_k);
        let t2 = kfb.tr_mat_vec(&qu);
        let t3 = qux.tr_mat_vec(&kff);
        vx = (0..n).map(|i| qx[i] + t1[i] + t2[i] + t3[i]).collect();
        // V_xx = Q_xx + Kᵀ Q_uu K + Kᵀ Q_ux + Q_uxᵀ K
        let kt_quu_k = kfb.tr_matmul(&quu.matmul(&kfb));
        let kt_qux = kfb.tr_matmul(&qux);
        let mut v = qxx.add(&kt_quu_k).add(&kt_qux).add(&kt_qux.transpose());
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (v[(i, j)] + v[(j, i)]);
                v.row_mut(i)[j] = s;
                v.row_mut(j)[i] = s;
            }
        }
        vxx = v;
        ff[k] = kff;
        fb[k] = kfb;
    }
    Ok(BackwardPass { ff, fb })
}

/// Shifts a previous solution by one node, repeating the last control.
pub fn shift_controls(prev: &OcpSolution) -> Vec<Vec<f64>> {
    let mut c: Vec<Vec<f64>> = prev.controls.iter().skip(1).cloned().collect();
    if let Some(last) = prev.controls.last() {
        c.push(last.clone());
    }
    c
}

/// Solves the tracking OCP from `x0` by Gauss-Newton SQP.
///
/// Every iterate is a simulated trajectory of its controls, so the shooting
/// gaps are closed. Each iteration linearizes the RK4 map along the current
/// trajectory, solves the LQ subproblem by a Riccati recursion with exact
/// per-stage box projection, then line-searches the nonlinear rollout
/// `u = clamp(ū + α·k + K(x − x̄))` for a strict cost decrease.
///
/// `warm` supplies the initial control guess (already shifted); `None` starts
/// from the reference inputs.
pub fn solve_ocp<D: Dynamics + ?Sized>(
    model: &D,
    x0: &[f64],
    refs: &RefWindow,
    cfg: &OcpConfig,
    warm: Option<&[Vec<f64>]>,
) -> Result<OcpSolution> {
    let start = Instant::now();
    let n = model.state_dim();
    let m = model.input_dim();
    cfg.validate(n, m)?;
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("initial state must be finite with the plant dimension".into()));
    }
    if refs.len() != cfg.steps + 1 {
        return Err(Error::Argument(format!("need {} reference pairs, got {}", cfg.steps + 1, refs.len())));
    }
    if refs.iter().any(|(x, u)| x.len() != n || u.len() != m) {
        return Err(Error::Shape("reference dimensions".into()));
    }
    let dt = cfg.dt();

    let mut controls: Vec<Vec<f64>> = match warm {
        Some(w) if w.len() == cfg.steps && w.iter().all(|u| u.len() == m) => w.to_vec(),
        _ => refs[..cfg.steps].iter().map(|(_, u)| u.clone()).collect(),
    };
    for u in &mut controls {
        cfg.clamp(u);
    }
    let mut states = rollout(model, x0, &controls, dt).map_err(|e| Error::Solver {
        iter: 0,
        msg: format!("initial rollout: {e}"),
    })?;
    let mut cost = trajectory_cost(&states, &controls, refs, cfg);
    if !cost.is_finite() {
        return Err(Error::Solver {
            iter: 0,
            msg: "initial rollout cost is not finite".into(),
        });
    }

    let mut converged = false;
    let mut iters = 0;
    let mut reg = cfg.reg_lambda;
    while iters < cfg.sqp_max_iters {
        iters += 1;
        let bp = match backward_pass(model, &states, &controls, refs, cfg, reg) {
            Ok(bp) => bp,
            Err(Error::Numeric(_)) if reg < 1e6 => {
                reg = (reg * 10.0).max(1e-6);
                continue;
            }
            Err(e) => {
                return Err(Error::Solver {
                    iter: iters,
                    msg: e.to_string(),
                })
            }
        };
        let step_size = bp.ff.iter().map(|k| crate::numcore::norm_inf(k)).fold(0.0, f64::max);
        if step_size < cfg.sqp_tol {
            converged = true;
            break;
        }

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..12 {
            let mut new_states = Vec::with_capacity(cfg.steps + 1);
            let mut new_controls = Vec::with_capacity(cfg.steps);
            new_states.push(x0.to_vec());
            let mut ok = true;
            for k in 0..cfg.steps {
                let x = &new_states[k];
                let dx: Vec<f64> = x.iter().zip(&states[k]).map(|(a, b)| a - b).collect();
                let fbk = bp.fb[k].mat_vec(&dx);
                let mut u: Vec<f64> = (0..m)
                    .map(|i| controls[k][i] + alpha * bp.ff[k][i] + fbk[i])
                    .collect();
                cfg.clamp(&mut u);
                match rk4_step(model, x, &u, dt) {
                    Ok(next) => new_states.push(next),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
                new_controls.push(u);
            }
            if ok {
                let c = trajectory_cost(&new_states, &new_controls, refs, cfg);
                if c.is_finite() && c < cost {
                    accepted = Some((new_states, new_controls, c));
                    break;
                }
            }
            alpha *= 0.5;
        }

        match accepted {
            Some((s, c, new_cost)) => {
                let du = c
                    .iter()
                    .zip(&controls)
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
                    .fold(0.0, f64::max);
                states = s;
                controls = c;
                cost = new_cost;
                reg = cfg.reg_lambda;
                if du < cfg.sqp_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // the model predicts no further improvement along this direction
                converged = step_size * alpha < cfg.sqp_tol;
                break;
            }
        }
    }

    Ok(OcpSolution {
        states,
        controls,
        cost,
        iters,
        converged,
        solve_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AugmentedModel, PlantSpec};

    struct DoubleIntegrator;

    impl Dynamics for DoubleIntegrator {
        fn state_dim(&self) -> usize {
            2
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![x[1], u[0]])
        }
        fn derivative_and_jacobians(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, DenseMatrix, DenseMatrix)> {
            Ok((
                self.derivative(x, u)?,
                DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]])?,
                DenseMatrix::from_rows(&[vec![0.0], vec![1.0]])?,
            ))
        }
    }

    fn window(x: Vec<f64>, u: Vec<f64>, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![(x, u); n + 1]
    }

    #[test]
    fn costs() {
        let q = [5.0, 0.1, 5.0, 0.1];
        assert_eq!(stage_cost(&[1.0, 0.0, 0.0, 0.0], &[0.0], &[0.0; 4], &[0.0], &q, &[0.1]), 5.0);
        assert_eq!(terminal_cost(&[0.0, 1.0, 0.0, 0.0], &[0.0; 4], &q), 0.1);
        assert_eq!(stage_cost(&[0.3; 4], &[1.0], &[0.3; 4], &[1.0], &q, &[0.1]), 0.0);
        let a = terminal_cost(&[0.5, 0.0, 0.0, 0.0], &[0.0; 4], &q);
        let b = terminal_cost(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4], &q);
        assert_eq!(b, 4.0 * a);
    }

    #[test]
    fn box_qp_matches_brute_force() {
        let h = DenseMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let g = [-3.0, 1.0];
        let (lo, hi) = ([-1.0, -1.0], [1.0, 0.2]);
        let (d, _) = box_qp(&h, &g, &lo, &hi).unwrap();
        let obj = |d: &[f64]| {
            let hd = h.mat_vec(d);
            0.5 * (d[0] * hd[0] + d[1] * hd[1]) + g[0] * d[0] + g[1] * d[1]
        };
        let mut best = f64::INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let p = [lo[0] + (hi[0] - lo[0]) * i as f64 / 200.0, lo[1] + (hi[1] - lo[1]) * j as f64 / 200.0];
                best = best.min(obj(&p));
            }
        }
        assert!(obj(&d) <= best + 1e-12);
    }

    #[test]
    fn already_optimal_start() {
        let mut cfg = OcpConfig::new(vec![1.0, 1.0], vec![0.1], vec![[-1.0, 1.0]]);
        cfg.steps = 10;
        let sol = solve_ocp(&DoubleIntegrator, &[0.0, 0.0], &window(vec![0.0, 0.0], vec![0.0], 10), &cfg, None).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert!(sol.converged);
        assert!(sol.controls.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn saturates_at_bound() {
        let mut cfg = OcpConfig::new(vec![100.0, 1.0], vec![1e-4], vec![[-1.0, 1.0]]);
        cfg.steps = 10;
        let sol = solve_ocp(&DoubleIntegrator, &[0.0, 0.0], &window(vec![10.0, 0.0], vec![0.0], 10), &cfg, None).unwrap();
        assert_eq!(sol.controls[0][0], 1.0);
        assert!(sol.controls.iter().all(|u| (-1.0..=1.0).contains(&u[0])));
    }

    #[test]
    fn states_are_rollout_of_controls() {
        let spec = PlantSpec::cart_pole();
        let model = AugmentedModel::from_spec(&spec);
        let cfg = OcpConfig::new(vec![5.0, 0.1, 5.0, 0.1], vec![0.1], spec.input_bounds.clone());
        let x0 = [0.5, 0.0, 0.15, 0.0];
        let sol = solve_ocp(&model, &x0, &window(vec![0.0; 4], vec![0.0], 20), &cfg, None).unwrap();
        let states = rollout(&model, &x0, &sol.controls, cfg.dt()).unwrap();
        for (a, b) in states.iter().zip(&sol.states) {
            for (p, q) in a.iter().zip(b) {
                assert!((p - q).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn quad_hover_from_cold_start() {
        let spec = PlantSpec::quad_2d();
        let model = AugmentedModel::from_spec(&spec);
        let hover = spec.nominal_params.hover_thrust().unwrap();
        let cfg = OcpConfig::new(vec![5.0, 0.1, 5.0, 0.1, 5.0, 0.1], vec![0.1, 0.1], spec.input_bounds.clone());
        let refs = window(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0], vec![hover, hover], 20);
        let sol = solve_ocp(&model, &[0.05, 0.0, 0.95, 0.0, 0.0, 0.0], &refs, &cfg, None).unwrap();
        assert!(sol.converged, "{} iterations", sol.iters);
        assert!(sol.iters <= 10);
    }

    #[test]
    fn rejects_bad_window() {
        let cfg = OcpConfig::new(vec![1.0, 1.0], vec![0.1], vec![]);
        assert!(solve_ocp(&DoubleIntegrator, &[0.0, 0.0], &window(vec![0.0, 0.0], vec![0.0], 3), &cfg, None).is_err());
    }
}
