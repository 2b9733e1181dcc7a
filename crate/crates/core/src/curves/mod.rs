//! Optimal deterministic curves and the explicit constant chain of the tube estimates.
//!
//! The variance curve solves the Euler–Lagrange equation of `∫(v'²/v + v) dt` with
//! `v(0) = V0`, `v(T) = ȳ`. Writing `v = V0·u²` linearises it to `u'' = u/4`, whose
//! solution is available in closed form; everything here evaluates that closed form
//! directly, never by interpolation.

mod bounds;
mod constants;

pub use bounds::{
    cdf_tail_log_bound, density_constants, m_t_constant, rate_function, rate_integral, raw_tube_log_bound,
    segment_log_bound, small_ball_chain, small_ball_log_bound, small_ball_radius, theorem_log_bound, wing_floors,
    CdfTailBound, DensityConstants, DensityPlaceholders, SmallBallBound, SmallBallChain,
};
pub use constants::{
    bound_constants, epsilon_delta_q, log_c_t, log_d_t, log_e_t, log_q_mu, tech_constants, BoundConstants,
    TechConstants, MU, RADIUS_RATIO,
};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::ModelSpec;

/// `ψ(r) = r⁻⁶(ln(1/r) + 1)` on `(0, 1]`.
pub fn psi(r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid(format!("psi needs r in (0, 1], got {r}")));
    }
    Ok(r.powi(-6) * (1.0 - r.ln()))
}

/// Lower limits on `|y|`: the first makes the curves monotone and regular, the second
/// is the extra requirement of the tail and small-ball statements.
pub fn y_threshold(spec: &ModelSpec) -> (f64, f64) {
    let v0 = spec.v0;
    let a = 1.0 + 2.0 * (0.5 * spec.horizon).sinh();
    let vmax = v0.max(1.0);
    (v0 * a * a, 2.0 * vmax * vmax * (1.0 + v0))
}

/// Closed-form optimal curve for a given arrival level `ȳ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormCurve {
    pub y: f64,
    pub y_bar: f64,
    pub v0: f64,
    pub horizon: f64,
}

/// All curve quantities at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub u: f64,
    pub u_prime: f64,
    pub u_second: f64,
    pub v: f64,
    pub v_prime: f64,
    pub v_second: f64,
    pub x: f64,
    pub x_prime: f64,
    pub r: f64,
}

impl ClosedFormCurve {
    /// Curve towards the arrival point `(y, ȳ)` with no admissibility check.
    pub fn new(y: f64, y_bar: f64, v0: f64, horizon: f64) -> Result<Self> {
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(invalid(format!("V0 must be positive, got {v0}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if !(y_bar > 0.0 && y_bar.is_finite() && y.is_finite()) {
            return Err(invalid(format!("bad arrival point ({y}, {y_bar})")));
        }
        Ok(Self { y, y_bar, v0, horizon })
    }

    /// The standard arrival `ȳ = |y| + V0`.
    pub fn for_target(y: f64, v0: f64, horizon: f64) -> Result<Self> {
        Self::new(y, y.abs() + v0, v0, horizon)
    }

    fn amplitude(&self) -> f64 {
        (self.y_bar / self.v0).sqrt() - (-0.5 * self.horizon).exp()
    }

    pub fn u(&self, t: f64) -> f64 {
        let s = (0.5 * self.horizon).sinh();
        self.amplitude() * (0.5 * t).sinh() / s + (-0.5 * t).exp()
    }

    pub fn u_prime(&self, t: f64) -> f64 {
        let s = (0.5 * self.horizon).sinh();
        self.amplitude() * (0.5 * t).cosh() / (2.0 * s) - 0.5 * (-0.5 * t).exp()
    }

    pub fn eval(&self, t: f64) -> CurvePoint {
        let u = self.u(t);
        let u_prime = self.u_prime(t);
        let u_second = 0.25 * u;
        let v = self.v0 * u * u;
        let v_prime = 2.0 * self.v0 * u * u_prime;
        let v_second = 2.0 * self.v0 * (u_prime * u_prime + u * u_second);
        let sign = if self.y < 0.0 { -1.0 } else { 1.0 };
        CurvePoint {
            u,
            u_prime,
            u_second,
            v,
            v_prime,
            v_second,
            x: sign * (v - self.v0),
            x_prime: sign * v_prime,
            r: 0.5 * (self.v0.min(1.0) * v).sqrt(),
        }
    }

    /// Window `h = √(V0/ȳ)·tanh(T/2)` of the regularity class of the rate function.
    pub fn regularity_window(&self) -> f64 {
        (self.v0 / self.y_bar).sqrt() * (0.5 * self.horizon).tanh()
    }
}

/// The curves `(x̃, ṽ, R̃)` and the auxiliary `u` sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveTriple {
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub u_prime: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub v_prime: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub r_tilde: Vec<f64>,
    pub y: f64,
    pub y_bar: f64,
    #[serde(skip)]
    pub closed_form: ClosedFormCurve,
}

/// Uniform grid `0 = t₀ < … < t_N = T` with the last knot exactly `T`.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| {
            if i == steps {
                horizon
            } else {
                horizon * i as f64 / steps as f64
            }
        })
        .collect()
}

impl CurveTriple {
    pub fn sample(closed_form: ClosedFormCurve, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(invalid(format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self::on_grid(closed_form, uniform_grid(closed_form.horizon, steps)))
    }

    /// Evaluates the closed form on an arbitrary grid.
    pub fn on_grid(closed_form: ClosedFormCurve, grid: Vec<f64>) -> Self {
        let n = grid.len();
        let mut out = Self {
            u: Vec::with_capacity(n),
            u_prime: Vec::with_capacity(n),
            v_tilde: Vec::with_capacity(n),
            v_prime: Vec::with_capacity(n),
            x_tilde: Vec::with_capacity(n),
            r_tilde: Vec::with_capacity(n),
            grid,
            y: closed_form.y,
            y_bar: closed_form.y_bar,
            closed_form,
        };
        for &t in &out.grid {
            let p = closed_form.eval(t);
            out.u.push(p.u);
            out.u_prime.push(p.u_prime);
            out.v_tilde.push(p.v);
            out.v_prime.push(p.v_prime);
            out.x_tilde.push(p.x);
            out.r_tilde.push(p.r);
        }
        // Pin the endpoint conditions exactly.
        out.x_tilde[0] = 0.0;
        out.v_tilde[0] = closed_form.v0;
        out
    }

    pub fn horizon(&self) -> f64 {
        self.closed_form.horizon
    }

    pub fn v0(&self) -> f64 {
        self.closed_form.v0
    }

    pub fn regularity_window(&self) -> f64 {
        self.closed_form.regularity_window()
    }
}

/// The optimal curves towards `y` on `steps` uniform steps.
///
/// `|y|` must exceed the first component of [`y_threshold`]; below it `ṽ` need not be
/// monotone and the estimates built on it do not apply.
pub fn optimal_curves(y: f64, spec: &ModelSpec, steps: usize) -> Result<CurveTriple> {
    if y == 0.0 || !y.is_finite() {
        return Err(invalid(format!("target must be finite and non-zero, got {y}")));
    }
    let (threshold, _) = y_threshold(spec);
    if y.abs() <= threshold {
        return Err(Error::BelowThreshold { y: y.abs(), threshold });
    }
    CurveTriple::sample(ClosedFormCurve::for_target(y, spec.v0, spec.horizon)?, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_heston;
    use proptest::prelude::*;

    fn spec(v0: f64, t: f64) -> ModelSpec {
        make_heston(1.0, 0.09, 0.3, -0.5, v0, t).unwrap()
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(1.0).unwrap(), 1.0);
        let expected = 64.0 * (2f64.ln() + 1.0);
        assert!((psi(0.5).unwrap() - expected).abs() < 1e-12);
        assert!((psi(0.5).unwrap() - 108.3614).abs() < 1e-4);
        assert!(psi(0.0).is_err());
        assert!(psi(1.0 + 1e-12).is_err());
    }

    #[test]
    fn psi_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 1..=1000 {
            let p = psi(i as f64 / 1000.0).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn thresholds() {
        let (a, b) = y_threshold(&spec(0.04, 1.0));
        let expected = 0.04 * (1.0 + 2.0 * 0.5f64.sinh()).powi(2);
        assert!((a - expected).abs() < 1e-15);
        assert!((a - 0.16683).abs() < 1e-5);
        assert!((b - 2.0 * 1.04).abs() < 1e-15);
        let (a, b) = y_threshold(&spec(1.0, 1e-12));
        assert!((a - 1.0).abs() < 1e-11);
        assert_eq!(b, 4.0);
    }

    #[test]
    fn boundary_values() {
        let c = optimal_curves(1.0, &spec(0.04, 1.0), 1000).unwrap();
        let n = c.grid.len() - 1;
        assert_eq!(c.u[0], 1.0);
        assert!((c.u[n] / 26f64.sqrt() - 1.0).abs() < 1e-12);
        assert!((c.v_tilde[n] - 1.04).abs() < 1e-12);
        assert!((c.x_tilde[n] - 1.0).abs() < 1e-12);
        assert!((c.r_tilde[n] - 0.5 * (0.04f64 * 1.04).sqrt()).abs() < 1e-12);
        assert!((c.r_tilde[n] - 0.10198).abs() < 1e-5);
    }

    #[test]
    fn linear_ode_residual() {
        let c = optimal_curves(1.0, &spec(0.04, 1.0), 1000).unwrap();
        let dt = c.grid[1] - c.grid[0];
        for i in 1..c.grid.len() - 1 {
            let d2 = (c.u[i + 1] - 2.0 * c.u[i] + c.u[i - 1]) / (dt * dt);
            assert!((d2 - 0.25 * c.u[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn negative_target_mirrors_log_price() {
        let s = spec(0.04, 1.0);
        let up = optimal_curves(1.0, &s, 100).unwrap();
        let down = optimal_curves(-1.0, &s, 100).unwrap();
        assert_eq!(up.v_tilde, down.v_tilde);
        for (a, b) in up.x_tilde.iter().zip(&down.x_tilde) {
            assert_eq!(*a, -*b);
        }
        assert!((down.x_tilde[100] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_sub_threshold_targets() {
        let s = spec(0.04, 1.0);
        assert!(matches!(optimal_curves(0.1, &s, 10), Err(Error::BelowThreshold { .. })));
        assert!(optimal_curves(0.0, &s, 10).is_err());
        assert!(optimal_curves(1.0, &s, 1).is_err());
    }

    #[test]
    fn class_membership_of_variance_derivative() {
        for &(y, v0, t) in &[(1.0, 0.04, 1.0), (5.0, 0.09, 2.0), (3.0, 0.5, 0.5)] {
            let c = optimal_curves(y, &spec(v0, t), 400).unwrap();
            let h = c.regularity_window();
            for i in 0..c.grid.len() {
                for j in 0..c.grid.len() {
                    if (c.grid[i] - c.grid[j]).abs() < h {
                        assert!(c.v_prime[i] <= 4.0 * c.v_prime[j]);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn endpoint_conditions(v0 in 0.01f64..2.0, t in 0.1f64..5.0, k in 1.01f64..50.0, neg in any::<bool>()) {
            let s = spec(v0, t);
            let y = k * y_threshold(&s).0 * if neg { -1.0 } else { 1.0 };
            let c = optimal_curves(y, &s, 50).unwrap();
            prop_assert_eq!(c.u[0], 1.0);
            let target = (c.y_bar / v0).sqrt();
            prop_assert!((c.u[50] / target - 1.0).abs() <= 1e-12);
            prop_assert_eq!(c.x_tilde[0], 0.0);
            prop_assert_eq!(c.v_tilde[0], v0);
        }

        #[test]
        fn monotone_and_regular_above_threshold(v0 in 0.01f64..2.0, t in 0.1f64..5.0, k in 1.001f64..20.0) {
            let s = spec(v0, t);
            let y = k * y_threshold(&s).0;
            let c = optimal_curves(y, &s, 200).unwrap();
            for i in 0..c.grid.len() {
                prop_assert!(c.u_prime[i] >= 0.25 - 1e-12);
                prop_assert!(c.r_tilde[i] <= 0.5 * c.v_tilde[i] * (1.0 + 1e-12));
                prop_assert!((c.v_tilde[i] - v0 * c.u[i] * c.u[i]).abs() <= 1e-12 * c.v_tilde[i]);
                if i > 0 {
                    prop_assert!(c.v_tilde[i] > c.v_tilde[i - 1]);
                    prop_assert!(c.u_prime[i] > c.u_prime[i - 1]);
                }
            }
        }

        #[test]
        fn nonlinear_euler_lagrange(v0 in 0.01f64..2.0, t in 0.1f64..5.0, k in 1.001f64..20.0) {
            let s = spec(v0, t);
            let cf = ClosedFormCurve::for_target(k * y_threshold(&s).0, v0, t).unwrap();
            for i in 1..100 {
                let p = cf.eval(t * i as f64 / 100.0);
                let lhs = p.v_second / p.v_prime;
                let rhs = p.v_prime / (2.0 * p.v) + p.v / (2.0 * p.v_prime);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
            }
        }
    }
}
