use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A reference trajectory for the controller: state and feed-forward input
/// as functions of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSignal {
    Constant {
        x_ref: Vec<f64>,
        u_ref: Vec<f64>,
    },
    /// Circle in the x–z plane of the planar quadrotor, counter-clockwise
    /// starting at angle 0.
    Circle {
        center: [f64; 2],
        radius: f64,
        period: f64,
        u_ref: Vec<f64>,
    },
}

impl ReferenceSignal {
    pub fn constant(x_ref: Vec<f64>, u_ref: Vec<f64>) -> Self {
        ReferenceSignal::Constant { x_ref, u_ref }
    }

    pub fn validate(&self, state_dim: usize, input_dim: usize) -> Result<()> {
        match self {
            ReferenceSignal::Constant { x_ref, u_ref } => {
                if x_ref.len() != state_dim || u_ref.len() != input_dim {
                    return Err(Error::Config(format!(
                        "reference has {}/{} entries, plant needs {state_dim}/{input_dim}",
                        x_ref.len(),
                        u_ref.len()
                    )));
                }
                if x_ref.iter().chain(u_ref).any(|v| !v.is_finite()) {
                    return Err(Error::Config("reference contains non-finite values".into()));
                }
            }
            ReferenceSignal::Circle {
                radius,
                period,
                u_ref,
                center,
            } => {
                if state_dim != 6 || u_ref.len() != input_dim {
                    return Err(Error::Config(
                        "circle reference needs the 6-state planar quadrotor".into(),
                    ));
                }
                if !(*period > 0.0) || !(*radius >= 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::Config(format!(
                        "circle needs period > 0 and radius >= 0, got {period} / {radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(x_ref(t), u_ref(t))`
    pub fn at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            ReferenceSignal::Constant { x_ref, u_ref } => (x_ref.clone(), u_ref.clone()),
            ReferenceSignal::Circle {
                center,
                radius,
                period,
                u_ref,
            } => {
                let w = 2.0 * std::f64::consts::PI / period;
                let (s, c) = (w * t).sin_cos();
                let x = vec![
                    center[0] + radius * c,
                    -radius * w * s,
                    center[1] + radius * s,
                    radius * w * c,
                    0.0,
                    0.0,
                ];
                (x, u_ref.clone())
            }
        }
    }
}

/// Evaluates the reference at time `t`.
pub fn reference_at(reference: &ReferenceSignal, t: f64) -> (Vec<f64>, Vec<f64>) {
    reference.at(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle() -> ReferenceSignal {
        ReferenceSignal::Circle {
            center: [0.0, 1.0],
            radius: 0.5,
            period: 15.0,
            u_ref: vec![0.1, 0.1],
        }
    }

    #[test]
    fn circle_start_point() {
        let (x, u) = reference_at(&circle(), 0.0);
        assert_eq!(x[0], 0.5);
        assert_eq!(x[1], 0.0);
        assert_eq!(x[2], 1.0);
        assert!((x[3] - PI / 15.0).abs() < 1e-15);
        assert_eq!(&x[4..], &[0.0, 0.0]);
        assert_eq!(u, vec![0.1, 0.1]);
    }

    #[test]
    fn circle_is_periodic() {
        let (a, _) = reference_at(&circle(), 0.0);
        let (b, _) = reference_at(&circle(), 15.0);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_velocity_is_derivative_of_position() {
        let h = 1e-5;
        let t = 3.7;
        let (xp, _) = reference_at(&circle(), t + h);
        let (xm, _) = reference_at(&circle(), t - h);
        let (x, _) = reference_at(&circle(), t);
        assert!(((xp[0] - xm[0]) / (2.0 * h) - x[1]).abs() < 1e-8);
        assert!(((xp[2] - xm[2]) / (2.0 * h) - x[3]).abs() < 1e-8);
    }

    #[test]
    fn constant_is_constant() {
        let r = ReferenceSignal::constant(vec![1.0, 2.0], vec![]);
        assert_eq!(r.at(0.0), r.at(123.4));
        assert!(r.validate(2, 0).is_ok());
        assert!(r.validate(4, 1).is_err());
    }

    #[test]
    fn invalid_circle() {
        let r = ReferenceSignal::Circle {
            center: [0.0, 1.0],
            radius: 0.5,
            period: 0.0,
            u_ref: vec![0.1, 0.1],
        };
        assert!(r.validate(6, 2).is_err());
        assert!(circle().validate(6, 2).is_ok());
    }
}
