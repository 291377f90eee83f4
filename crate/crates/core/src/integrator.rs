//! Fixed-step explicit integration with rotation re-projection.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, IntegratorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub method: Method,
    /// Rotations are re-projected when `‖R Rᵀ − I‖_F` exceeds this.
    pub reproject_threshold: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 1e-3,
            method: Method::Rk4,
            reproject_threshold: 1e-9,
        }
    }
}

impl IntegratorConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(format!("dt must lie in (0, 0.1], got {}", self.dt));
        }
        if !(self.reproject_threshold >= 0.0) {
            return Err(format!(
                "reproject_threshold must be nonnegative, got {}",
                self.reproject_threshold
            ));
        }
        Ok(())
    }
}

/// A state that can be advanced by an explicit Runge-Kutta scheme.
///
/// Rotation-valued components are integrated in the ambient matrix space;
/// [`IntegrableState::reproject`] pulls them back onto SO(3).
pub trait IntegrableState: Clone {
    type Derivative;

    fn time(&self) -> f64;

    fn set_time(&mut self, t: f64);

    /// `self + h·d`, with time advanced by `h`.
    fn displaced(&self, d: &Self::Derivative, h: f64) -> Self;

    /// `Σ wₖ dₖ`
    fn combine(terms: &[(f64, &Self::Derivative)]) -> Self::Derivative;

    fn reproject(&mut self, threshold: f64) -> Result<(), GeomError>;

    fn is_finite(&self) -> bool;
}

/// Advances `state` by one step of `config.dt`.
///
/// `step_index` is only used to label a [`IntegratorError::NonFiniteState`].
pub fn step<S, F>(
    state: &S,
    mut derivative: F,
    config: &IntegratorConfig,
    step_index: u64,
) -> Result<S, IntegratorError>
where
    S: IntegrableState,
    F: FnMut(&S) -> S::Derivative,
{
    let h = config.dt;
    let mut next = match config.method {
        Method::Euler => state.displaced(&derivative(state), h),
        Method::Rk4 => {
            let k1 = derivative(state);
            let k2 = derivative(&state.displaced(&k1, 0.5 * h));
            let k3 = derivative(&state.displaced(&k2, 0.5 * h));
            let k4 = derivative(&state.displaced(&k3, h));
            let incr = S::combine(&[
                (1.0 / 6.0, &k1),
                (1.0 / 3.0, &k2),
                (1.0 / 3.0, &k3),
                (1.0 / 6.0, &k4),
            ]);
            state.displaced(&incr, h)
        }
    };
    next.set_time(state.time() + h);
    if !next.is_finite() {
        return Err(IntegratorError::NonFiniteState {
            t: next.time(),
            step: step_index,
        });
    }
    next.reproject(config.reproject_threshold)
        .map_err(|source| IntegratorError::Reprojection {
            t: next.time(),
            step: step_index,
            source,
        })?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom3::{exp_so3, hat, Mat3, Rotation, Vec3};

    #[derive(Clone, Debug, PartialEq)]
    struct Scalar {
        t: f64,
        x: f64,
    }

    impl IntegrableState for Scalar {
        type Derivative = f64;
        fn time(&self) -> f64 {
            self.t
        }
        fn set_time(&mut self, t: f64) {
            self.t = t;
        }
        fn displaced(&self, d: &f64, h: f64) -> Self {
            Scalar {
                t: self.t + h,
                x: self.x + h * d,
            }
        }
        fn combine(terms: &[(f64, &f64)]) -> f64 {
            terms.iter().map(|(w, d)| w * **d).sum()
        }
        fn reproject(&mut self, _: f64) -> Result<(), GeomError> {
            Ok(())
        }
        fn is_finite(&self) -> bool {
            self.x.is_finite()
        }
    }

    #[derive(Clone, Debug)]
    struct Spin {
        t: f64,
        r: Rotation,
    }

    impl IntegrableState for Spin {
        type Derivative = Mat3;
        fn time(&self) -> f64 {
            self.t
        }
        fn set_time(&mut self, t: f64) {
            self.t = t;
        }
        fn displaced(&self, d: &Mat3, h: f64) -> Self {
            Spin {
                t: self.t + h,
                r: Rotation::from_matrix_unchecked(*self.r.matrix() + d.scale(h)),
            }
        }
        fn combine(terms: &[(f64, &Mat3)]) -> Mat3 {
            terms
                .iter()
                .fold(Mat3::ZERO, |acc, (w, d)| acc + d.scale(*w))
        }
        fn reproject(&mut self, threshold: f64) -> Result<(), GeomError> {
            if self.r.orthogonality_drift() > threshold {
                self.r = crate::geom3::project_to_so3(self.r.matrix())?;
            }
            Ok(())
        }
        fn is_finite(&self) -> bool {
            self.r.matrix().is_finite()
        }
    }

    fn spin_error(dt: f64, t_end: f64) -> f64 {
        let w = Vec3::new(0.4, -0.7, 1.1);
        let cfg = IntegratorConfig {
            dt,
            ..Default::default()
        };
        let mut s = Spin {
            t: 0.0,
            r: Rotation::IDENTITY,
        };
        let n = (t_end / dt).round() as u64;
        for k in 0..n {
            s = step(&s, |s: &Spin| *s.r.matrix() * hat(w), &cfg, k).unwrap();
        }
        let exact = exp_so3(w.scale(n as f64 * dt));
        (*s.r.matrix() - *exact.matrix()).frobenius_norm()
    }

    #[test]
    fn zero_derivative_only_advances_time() {
        let cfg = IntegratorConfig::default();
        let s = Scalar { t: 2.0, x: 1.5 };
        let next = step(&s, |_: &Scalar| 0.0, &cfg, 0).unwrap();
        assert_eq!(next.x, 1.5);
        assert_eq!(next.t, 2.0 + 1e-3);
    }

    #[test]
    fn rk4_exponential_decay() {
        let cfg = IntegratorConfig {
            dt: 0.01,
            ..Default::default()
        };
        let mut s = Scalar { t: 0.0, x: 1.0 };
        for k in 0..100 {
            s = step(&s, |s: &Scalar| -s.x, &cfg, k).unwrap();
        }
        assert!((s.x - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn euler_is_first_order() {
        let cfg = IntegratorConfig {
            dt: 0.01,
            method: Method::Euler,
            ..Default::default()
        };
        let mut s = Scalar { t: 0.0, x: 1.0 };
        for k in 0..100 {
            s = step(&s, |s: &Scalar| -s.x, &cfg, k).unwrap();
        }
        assert!((s.x - 0.99f64.powi(100)).abs() < 1e-12);
    }

    #[test]
    fn rk4_rotation_convergence_order() {
        let coarse = spin_error(0.02, 2.0);
        let fine = spin_error(0.01, 2.0);
        assert!(coarse / fine >= 8.0, "ratio {}", coarse / fine);
        assert!(spin_error(1e-3, 2.0) < 1e-10);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let cfg = IntegratorConfig::default();
        let s = Scalar { t: 0.0, x: 1.0 };
        let err = step(&s, |_: &Scalar| f64::NAN, &cfg, 17).unwrap_err();
        assert!(matches!(
            err,
            IntegratorError::NonFiniteState { step: 17, .. }
        ));
    }

    #[test]
    fn deterministic() {
        let a = spin_error(0.005, 1.0);
        let b = spin_error(0.005, 1.0);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn config_bounds() {
        assert!(IntegratorConfig::default().check().is_ok());
        for dt in [0.0, -1.0, 0.2, f64::NAN] {
            let c = IntegratorConfig {
                dt,
                ..Default::default()
            };
            assert!(c.check().is_err());
        }
    }
}
