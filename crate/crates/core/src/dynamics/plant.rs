use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::numcore::DenseMatrix;

/// Standard gravity used by every plant.
pub const GRAVITY: f64 = 9.81;
/// Distance between the two quadrotor thrust lines, in metres.
pub const QUAD_ARM: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    VanDerPol,
    CartPole,
    Quad2d,
}

impl PlantKind {
    pub fn state_dim(self) -> usize {
        match self {
            PlantKind::VanDerPol => 2,
            PlantKind::CartPole => 4,
            PlantKind::Quad2d => 6,
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            PlantKind::VanDerPol => 0,
            PlantKind::CartPole => 1,
            PlantKind::Quad2d => 2,
        }
    }

    /// Number of position (and velocity) coordinates.
    pub fn pos_dim(self) -> usize {
        self.accel_rows().len()
    }

    /// State indices holding velocities; their derivative rows are the
    /// accelerations the residual corrects.
    pub fn accel_rows(self) -> &'static [usize] {
        match self {
            PlantKind::VanDerPol => &[1],
            PlantKind::CartPole => &[1, 3],
            PlantKind::Quad2d => &[1, 3, 5],
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            PlantKind::VanDerPol => &["mu"],
            PlantKind::CartPole => &["m_c", "m_p", "l", "g"],
            PlantKind::Quad2d => &["m", "I_yy", "d", "g"],
        }
    }

    /// Parameters that must stay strictly positive.
    fn positive_params(self) -> &'static [&'static str] {
        match self {
            PlantKind::VanDerPol => &[],
            PlantKind::CartPole => &["m_c", "m_p", "l"],
            PlantKind::Quad2d => &["m", "I_yy", "d"],
        }
    }

    /// Parameters varied across meta-training tasks by default.
    pub fn default_scaled_params(self) -> &'static [&'static str] {
        match self {
            PlantKind::VanDerPol => &["mu"],
            PlantKind::CartPole => &["m_c", "m_p", "l"],
            PlantKind::Quad2d => &["m", "I_yy"],
        }
    }

    /// Residual-network input width `n + m` and output width `n_x`.
    pub fn residual_io(self) -> (usize, usize) {
        (self.state_dim() + self.input_dim(), self.pos_dim())
    }
}

/// Physical parameters of one plant instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhysicalParams {
    VanDerPol { mu: f64 },
    CartPole { m_c: f64, m_p: f64, l: f64, g: f64 },
    Quad2d { m: f64, i_yy: f64, d: f64, g: f64 },
}

impl PhysicalParams {
    pub fn kind(&self) -> PlantKind {
        match self {
            PhysicalParams::VanDerPol { .. } => PlantKind::VanDerPol,
            PhysicalParams::CartPole { .. } => PlantKind::CartPole,
            PhysicalParams::Quad2d { .. } => PlantKind::Quad2d,
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let kind = self.kind();
        kind.param_names()
            .iter()
            .map(|n| (n.to_string(), self.get(n).unwrap()))
            .collect()
    }

    pub fn from_map(kind: PlantKind, map: &BTreeMap<String, f64>) -> Result<Self> {
        let names = kind.param_names();
        if map.len() != names.len() || names.iter().any(|n| !map.contains_key(*n)) {
            return Err(Error::Config(format!(
                "{kind:?} needs exactly the parameters {names:?}, got {:?}",
                map.keys().collect::<Vec<_>>()
            )));
        }
        let v = |n: &str| map[n];
        let p = match kind {
            PlantKind::VanDerPol => PhysicalParams::VanDerPol { mu: v("mu") },
            PlantKind::CartPole => PhysicalParams::CartPole {
                m_c: v("m_c"),
                m_p: v("m_p"),
                l: v("l"),
                g: v("g"),
            },
            PlantKind::Quad2d => PhysicalParams::Quad2d {
                m: v("m"),
                i_yy: v("I_yy"),
                d: v("d"),
                g: v("g"),
            },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind();
        for n in kind.param_names() {
            if !self.get(n).unwrap().is_finite() {
                return Err(Error::Config(format!("parameter {n} is not finite")));
            }
        }
        for n in kind.positive_params() {
            if !(self.get(n).unwrap() > 0.0) {
                return Err(Error::Config(format!("parameter {n} must be positive")));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match (*self, name) {
            (PhysicalParams::VanDerPol { mu }, "mu") => Some(mu),
            (PhysicalParams::CartPole { m_c, .. }, "m_c") => Some(m_c),
            (PhysicalParams::CartPole { m_p, .. }, "m_p") => Some(m_p),
            (PhysicalParams::CartPole { l, .. }, "l") => Some(l),
            (PhysicalParams::CartPole { g, .. }, "g") => Some(g),
            (PhysicalParams::Quad2d { m, .. }, "m") => Some(m),
            (PhysicalParams::Quad2d { i_yy, .. }, "I_yy") => Some(i_yy),
            (PhysicalParams::Quad2d { d, .. }, "d") => Some(d),
            (PhysicalParams::Quad2d { g, .. }, "g") => Some(g),
            _ => None,
        }
    }

    /// Multiplies the named parameters by the given factors.
    pub fn scaled(&self, factors: &BTreeMap<String, f64>) -> Result<Self> {
        let mut map = self.to_map();
        for (name, f) in factors {
            let v = map
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            *v *= f;
        }
        Self::from_map(self.kind(), &map)
    }

    /// Per-motor thrust holding a quadrotor at hover; `None` for other plants.
    pub fn hover_thrust(&self) -> Option<f64> {
        match *self {
            PhysicalParams::Quad2d { m, g, .. } => Some(m * g / 2.0),
            _ => None,
        }
    }

    /// Continuous-time state derivative.
    pub fn derivative(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match *self {
            PhysicalParams::VanDerPol { mu } => {
                out[0] = x[1];
                out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
            }
            PhysicalParams::CartPole { m_c, m_p, l, g } => {
                let total = m_c + m_p;
                let (th, om, f) = (x[2], x[3], u[0]);
                let (s, c) = th.sin_cos();
                let num = g * s + c * (-f - m_p * l * om * om * s) / total;
                let den = l * (4.0 / 3.0 - m_p * c * c / total);
                let th_dd = num / den;
                let p_dd = (f + m_p * l * (om * om * s - th_dd * c)) / total;
                out[0] = x[1];
                out[1] = p_dd;
                out[2] = om;
                out[3] = th_dd;
            }
            PhysicalParams::Quad2d { m, i_yy, d, g } => {
                let (s, c) = x[4].sin_cos();
                let thrust = u[0] + u[1];
                out[0] = x[1];
                out[1] = s * thrust / m;
                out[2] = x[3];
                out[3] = c * thrust / m - g;
                out[4] = x[5];
                out[5] = (u[1] - u[0]) * d / i_yy;
            }
        }
    }

    /// Analytic Jacobians `(∂f/∂x, ∂f/∂u)`.
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> (DenseMatrix, DenseMatrix) {
        let kind = self.kind();
        let (n, m) = (kind.state_dim(), kind.input_dim());
        let mut a = DenseMatrix::zeros(n, n);
        let mut b = DenseMatrix::zeros(n, m);
        match *self {
            PhysicalParams::VanDerPol { mu } => {
                a[(0, 1)] = 1.0;
                a[(1, 0)] = -2.0 * mu * x[0] * x[1] - 1.0;
                a[(1, 1)] = mu * (1.0 - x[0] * x[0]);
            }
            PhysicalParams::CartPole { m_c, m_p, l, g } => {
                let total = m_c + m_p;
                let (th, om, f) = (x[2], x[3], u[0]);
                let (s, c) = th.sin_cos();
                let inner = -f - m_p * l * om * om * s;
                let num = g * s + c * inner / total;
                let den = l * (4.0 / 3.0 - m_p * c * c / total);
                let th_dd = num / den;

                let num_th = g * c - s * inner / total - c * m_p * l * om * om * c / total;
                let num_om = -c * 2.0 * m_p * l * om * s / total;
                let num_f = -c / total;
                let den_th = l * 2.0 * m_p * c * s / total;

                let th_dd_th = (num_th * den - num * den_th) / (den * den);
                let th_dd_om = num_om / den;
                let th_dd_f = num_f / den;

                let p_dd_th = m_p * l * (om * om * c - th_dd_th * c + th_dd * s) / total;
                let p_dd_om = m_p * l * (2.0 * om * s - th_dd_om * c) / total;
                let p_dd_f = (1.0 - m_p * l * th_dd_f * c) / total;

                a[(0, 1)] = 1.0;
                a[(1, 2)] = p_dd_th;
                a[(1, 3)] = p_dd_om;
                a[(2, 3)] = 1.0;
                a[(3, 2)] = th_dd_th;
                a[(3, 3)] = th_dd_om;
                b[(1, 0)] = p_dd_f;
                b[(3, 0)] = th_dd_f;
            }
            PhysicalParams::Quad2d { m, i_yy, d, .. } => {
                let (s, c) = x[4].sin_cos();
                let thrust = u[0] + u[1];
                a[(0, 1)] = 1.0;
                a[(1, 4)] = c * thrust / m;
                a[(2, 3)] = 1.0;
                a[(3, 4)] = -s * thrust / m;
                a[(4, 5)] = 1.0;
                b[(1, 0)] = s / m;
                b[(1, 1)] = s / m;
                b[(3, 0)] = c / m;
                b[(3, 1)] = c / m;
                b[(5, 0)] = -d / i_yy;
                b[(5, 1)] = d / i_yy;
            }
        }
        (a, b)
    }
}

impl Serialize for PhysicalParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PhysicalParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        let kind = if map.contains_key("mu") {
            PlantKind::VanDerPol
        } else if map.contains_key("m_c") {
            PlantKind::CartPole
        } else {
            PlantKind::Quad2d
        };
        PhysicalParams::from_map(kind, &map).map_err(serde::de::Error::custom)
    }
}

/// A plant: its true parameters (used only by the simulator), the nominal
/// parameters the controller believes, and actuator limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub kind: PlantKind,
    pub true_params: PhysicalParams,
    pub nominal_params: PhysicalParams,
    /// per-channel `[u_min, u_max]`
    #[serde(default)]
    pub input_bounds: Vec<[f64; 2]>,
}

impl PlantSpec {
    pub fn new(
        true_params: PhysicalParams,
        nominal_params: PhysicalParams,
        input_bounds: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let spec = Self {
            kind: true_params.kind(),
            true_params,
            nominal_params,
            input_bounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_params.kind() != self.kind || self.nominal_params.kind() != self.kind {
            return Err(Error::Config(format!(
                "parameter sets do not describe a {:?} plant",
                self.kind
            )));
        }
        self.true_params.validate()?;
        self.nominal_params.validate()?;
        if self.input_bounds.len() != self.kind.input_dim() {
            return Err(Error::Config(format!(
                "{:?} has {} inputs but {} bounds were given",
                self.kind,
                self.kind.input_dim(),
                self.input_bounds.len()
            )));
        }
        for [lo, hi] in &self.input_bounds {
            if !(lo <= hi) {
                return Err(Error::Config(format!("input bound [{lo}, {hi}] is not ordered")));
            }
        }
        Ok(())
    }

    /// μ_real = 0.2 against a nominal μ = 0.7.
    pub fn van_der_pol() -> Self {
        Self::new(
            PhysicalParams::VanDerPol { mu: 0.2 },
            PhysicalParams::VanDerPol { mu: 0.7 },
            vec![],
        )
        .unwrap()
    }

    /// True cart-pole (m_c = 1, m_p = 0.1, l = 0.5); nominal masses and
    /// length at 66 %; force limited to ±10 N.
    pub fn cart_pole() -> Self {
        let s = 0.66;
        Self::new(
            PhysicalParams::CartPole {
                m_c: 1.0,
                m_p: 0.1,
                l: 0.5,
                g: GRAVITY,
            },
            PhysicalParams::CartPole {
                m_c: s * 1.0,
                m_p: s * 0.1,
                l: s * 0.5,
                g: GRAVITY,
            },
            vec![[-10.0, 10.0]],
        )
        .unwrap()
    }

    /// True quadrotor (m = 0.027 kg, I_yy = 1.4e-5); nominal mass at 66 %
    /// and inertia at 80 %; each thrust in [0, 0.3] N.
    pub fn quad_2d() -> Self {
        Self::new(
            PhysicalParams::Quad2d {
                m: 0.027,
                i_yy: 1.4e-5,
                d: QUAD_ARM,
                g: GRAVITY,
            },
            PhysicalParams::Quad2d {
                m: 0.66 * 0.027,
                i_yy: 0.8 * 1.4e-5,
                d: QUAD_ARM,
                g: GRAVITY,
            },
            vec![[0.0, 0.3]; 2],
        )
        .unwrap()
    }

    pub fn default_for(kind: PlantKind) -> Self {
        match kind {
            PlantKind::VanDerPol => Self::van_der_pol(),
            PlantKind::CartPole => Self::cart_pole(),
            PlantKind::Quad2d => Self::quad_2d(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.kind.input_dim()
    }

    /// Copy whose true parameters equal the nominal ones.
    pub fn matched(&self) -> Self {
        Self {
            true_params: self.nominal_params,
            ..self.clone()
        }
    }
}

pub(crate) fn check_dims(kind: PlantKind, x: &[f64], u: &[f64]) -> Result<()> {
    if x.len() != kind.state_dim() || u.len() != kind.input_dim() {
        return Err(Error::Shape(format!(
            "{kind:?} expects state {} / input {}, got {} / {}",
            kind.state_dim(),
            kind.input_dim(),
            x.len(),
            u.len()
        )));
    }
    Ok(())
}

/// f(x, u) under the plant's true parameters.
pub fn eval_true(spec: &PlantSpec, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    eval_params(&spec.true_params, x, u)
}

/// f(x, u) under the plant's nominal parameters.
pub fn eval_nominal(spec: &PlantSpec, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    eval_params(&spec.nominal_params, x, u)
}

pub(crate) fn eval_params(params: &PhysicalParams, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_dims(params.kind(), x, u)?;
    check_finite(x, "state")?;
    check_finite(u, "input")?;
    let mut out = vec![0.0; x.len()];
    params.derivative(x, u, &mut out);
    check_finite(&out, "state derivative")?;
    Ok(out)
}
