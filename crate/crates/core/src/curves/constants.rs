use std::f64::consts::{LN_2, SQRT_2};

use serde::Serialize;

use crate::logbound::DoubleDouble;
use crate::model::ModelSpec;
use crate::stats::{abs_brownian_sup_cdf, abs_brownian_sup_log_cdf};

/// Tube radius as a fraction of the variance curve.
pub const RADIUS_RATIO: f64 = 0.5;
/// Regularity class parameter of the curves.
pub const MU: f64 = 4.0;

/// Envelope constants of the drift, diffusion and their Lipschitz moduli along the tube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TechConstants {
    pub c: f64,
    /// Ellipticity floor without the `ρ̄²` factor.
    pub lambda: f64,
    pub gamma: f64,
    pub l: f64,
    pub l_t: f64,
    pub c2: f64,
    pub radius_ratio: f64,
}

pub fn tech_constants(spec: &ModelSpec) -> TechConstants {
    let b = spec.bounds;
    let r = RADIUS_RATIO;
    let v0 = spec.v0;
    let c = 2.0 * (0.5 * b.eta_hi * b.eta_hi + b.k + 2.0 * b.eta_hi + b.sigma_hi) * (1.0 + r) * v0.max(1.0) / v0;
    let e2 = b.eta_hi * b.eta_hi;
    let s2 = b.sigma_hi * b.sigma_hi;
    let lambda = b.eta_lo * b.eta_lo * b.sigma_lo * b.sigma_lo / (2.0 * (e2 + s2)) * (1.0 - r) / (1.0 + r);
    let gamma = (e2 + s2) * (1.0 + r);
    let c2 = spec.envelope.c2;
    let l = spec
        .envelope
        .l_override
        .unwrap_or_else(|| c2 * (8.0 * (1.0 + r) * b.k * b.k * v0.max(1.0) / v0 + e2.max(s2) / ((1.0 - r) * v0 * v0)));
    TechConstants {
        c,
        lambda,
        gamma,
        l,
        l_t: l * (c2 * spec.horizon * spec.horizon).exp(),
        c2,
        radius_ratio: r,
    }
}

/// `ln q_μ` with `q_μ = 8¹²e²μ⁷³`.
pub fn log_q_mu(mu: f64) -> f64 {
    36.0 * LN_2 + 2.0 + 73.0 * mu.ln()
}

/// `ln c_T` for `c_T = c*(1/T + 1)e^{c*T²}`.
pub fn log_c_t(c_star: f64, t: f64) -> DoubleDouble {
    DoubleDouble::from_product(c_star, t * t).add_f64(c_star.ln() + (1.0 / t + 1.0).ln())
}

/// `ln d_T` for `d_T = 2c*(1/T² + 1)e^{(c*+1)T²}`.
pub fn log_d_t(c_star: f64, t: f64) -> DoubleDouble {
    DoubleDouble::from_product(c_star, t * t)
        .add_f64(t * t)
        .add_f64(LN_2 + c_star.ln() + (1.0 / (t * t) + 1.0).ln())
}

/// `ln e_T` for `e_T = 136c*(1/T² + 1)e^{(c*+1)T}`.
pub fn log_e_t(c_star: f64, t: f64) -> DoubleDouble {
    DoubleDouble::from_product(c_star, t)
        .add_f64(t)
        .add_f64(136f64.ln() + c_star.ln() + (1.0 / (t * t) + 1.0).ln())
}

/// `(ε₀, δ₀, q)`: the correlation-driven cone width, the short time step it allows and the
/// probability that a Brownian motion stays in the matching band up to time one.
pub fn epsilon_delta_q(spec: &ModelSpec) -> (f64, f64, f64) {
    let b = spec.bounds;
    let eps0 = if spec.rho == 0.0 {
        1.0
    } else {
        (spec.rho_bar() * b.eta_lo * b.sigma_lo / (4.0 * SQRT_2 * spec.rho.abs() * b.eta_hi)).min(1.0)
    };
    let q = abs_brownian_sup_cdf(eps0 / (4.0 * SQRT_2 * b.sigma_hi));
    let delta0 = (eps0 * eps0 * q / (160.0 * b.k * b.k)).min(0.5 * spec.horizon);
    (eps0, delta0, q)
}

/// The full constant chain. Quantities that overflow a double are kept as logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    #[serde(flatten)]
    pub tech: TechConstants,
    pub rho_bar: f64,
    pub gamma_t: f64,
    pub mu: f64,
    pub log_q_mu: f64,
    /// `φ = ρ̄²λ/γ`.
    pub phi: f64,
    /// `ln Q(μ)` with `Q = (q_μ/φ²)·ln(q_μ/φ)`.
    #[serde(rename = "log_Q")]
    pub log_q: f64,
    pub log_c_star: f64,
    pub c_star: f64,
    pub log_c_t: DoubleDouble,
    pub log_d_t: DoubleDouble,
    pub log_e_t: DoubleDouble,
    pub epsilon0: f64,
    pub delta0: f64,
    pub q_sup: f64,
    /// Logs of `δ₀` and `q`; the plain values underflow for strongly correlated models.
    pub log_delta0: f64,
    pub log_q_sup: f64,
}

pub fn bound_constants(spec: &ModelSpec) -> BoundConstants {
    let tech = tech_constants(spec);
    let t = spec.horizon;
    let rho_bar = spec.rho_bar();
    let rb2 = rho_bar * rho_bar;
    let vmin = spec.v0.min(1.0);
    let gamma_t = (2.0 * (tech.c * tech.c + tech.l_t) / (vmin * rb2 * tech.lambda)).max(1.0);
    let log_q_mu = log_q_mu(MU);
    let phi = rb2 * tech.lambda / tech.gamma;
    let log_q = log_q_mu - 2.0 * phi.ln() + (log_q_mu - phi.ln()).ln();

    // Γ_T with its ρ̄² and e^{C₂T²} factors stripped.
    let damp = (-tech.c2 * t * t).exp();
    let gamma_hat = (2.0 * (tech.c * tech.c * damp + tech.l_t * damp) / (vmin * tech.lambda)).max(1.0);
    let log_ratio = tech.gamma.ln() + log_q_mu - tech.lambda.ln();
    let log_c_star = (4f64.ln() + (20.0 * spec.v0 + 1.0).ln() + gamma_hat.ln() + 2.0 * tech.gamma.ln() + log_q_mu
        - 2.0 * tech.lambda.ln()
        + log_ratio.ln())
    .max(0.0);
    let c_star = log_c_star.exp();
    let (epsilon0, delta0, q_sup) = epsilon_delta_q(spec);
    let b = spec.bounds;
    let log_q_sup = abs_brownian_sup_log_cdf(epsilon0 / (4.0 * SQRT_2 * b.sigma_hi));
    let log_delta0 = (2.0 * epsilon0.ln() + log_q_sup - (160.0 * b.k * b.k).ln()).min((0.5 * spec.horizon).ln());
    BoundConstants {
        tech,
        rho_bar,
        gamma_t,
        mu: MU,
        log_q_mu,
        phi,
        log_q,
        log_c_star,
        c_star,
        log_c_t: log_c_t(c_star, t),
        log_d_t: log_d_t(c_star, t),
        log_e_t: log_e_t(c_star, t),
        epsilon0,
        delta0,
        q_sup,
        log_delta0,
        log_q_sup,
    }
}

impl BoundConstants {
    /// Replaces `c*` (for instance by a larger admissible value) and recomputes the time
    /// constants. Values below one are raised to one.
    pub fn with_c_star(mut self, c_star: f64, horizon: f64) -> Self {
        let c_star = c_star.max(1.0);
        self.c_star = c_star;
        self.log_c_star = c_star.ln();
        self.log_c_t = log_c_t(c_star, horizon);
        self.log_d_t = log_d_t(c_star, horizon);
        self.log_e_t = log_e_t(c_star, horizon);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bounded_skew_heston, make_heston, HypothesisBounds};

    fn unit_bounds_spec(k: f64, hi: f64, v0: f64) -> ModelSpec {
        make_heston(1.0, 0.09, 0.3, 0.0, v0, 1.0)
            .unwrap()
            .with_bounds(HypothesisBounds {
                k,
                eta_lo: 0.5,
                eta_hi: hi,
                sigma_lo: 0.5,
                sigma_hi: hi,
            })
            .unwrap()
    }

    #[test]
    fn envelope_constant_reference() {
        let tc = tech_constants(&unit_bounds_spec(2.0, 2.0, 1.0));
        assert!((tc.c - 30.0).abs() < 1e-12);
    }

    #[test]
    fn q_mu_reference() {
        let lq = log_q_mu(4.0);
        assert!((lq - (182.0 * LN_2 + 2.0)).abs() < 1e-12);
        assert!((lq - 128.15).abs() < 0.01);
        // 8^12 e^2 4^73 ≈ 4.53e55
        assert!((lq / 10f64.ln() - 4.53e55f64.log10()).abs() < 1e-3);
    }

    #[test]
    fn lambda_not_above_gamma() {
        for spec in [
            make_heston(1.0, 0.09, 0.3, -0.5, 0.09, 1.0).unwrap(),
            bounded_skew_heston(2.0, 0.04, 1.5, 0.7, 0.04, 2.0, 1.2, 0.5).unwrap(),
        ] {
            let bc = bound_constants(&spec);
            assert!(bc.tech.lambda <= bc.tech.gamma);
            assert!(bc.phi > 0.0 && bc.phi <= 1.0);
            assert!(bc.c_star >= 1.0);
            assert!(bc.log_c_t.hi > 0.0);
            assert!(bc.epsilon0 > 0.0 && bc.epsilon0 <= 1.0);
            assert!(bc.delta0 <= 0.5 * spec.horizon);
            assert!(bc.q_sup >= 0.0 && bc.q_sup < 1.0);
        }
    }

    #[test]
    fn eigenvalues_of_unit_diagonal_case() {
        // η ≡ 1, σ ≡ 1, ρ = 0: σσ* = v·I.
        let spec = bounded_skew_heston(1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let tc = tech_constants(&spec);
        for &v in &[0.0, 0.3, 4.0] {
            let (lo, hi) = spec.covariance_eigenvalues(0.5, 0.2, v);
            assert_eq!(lo, v);
            assert_eq!(hi, v);
            assert!(tc.lambda * v <= lo && hi <= tc.gamma * v);
        }
    }

    #[test]
    fn time_constant_formulas() {
        // c* = 1, T = 1
        assert!((log_c_t(1.0, 1.0).to_f64() - (2f64.ln() + 1.0)).abs() < 1e-15);
        assert!((log_d_t(1.0, 1.0).to_f64() - (4f64.ln() + 2.0)).abs() < 1e-15);
        let e_t = log_e_t(1.0, 1.0).to_f64().exp();
        assert!((e_t - 136.0 * 2.0 * 1f64.exp().powi(2)).abs() < 1e-9);
        assert!((e_t - 2009.823).abs() < 0.001);
    }

    #[test]
    fn epsilon_at_zero_correlation() {
        let spec = make_heston(1.0, 0.09, 0.3, 0.0, 0.09, 1.0).unwrap();
        assert_eq!(epsilon_delta_q(&spec).0, 1.0);
        let spec = spec.with_rho(-0.5).unwrap();
        assert!(epsilon_delta_q(&spec).0 < 1.0);
    }

    #[test]
    fn envelope_overrides_are_used() {
        use crate::model::EnvelopeConfig;
        let spec = make_heston(1.0, 0.09, 0.3, -0.5, 0.09, 1.0)
            .unwrap()
            .with_envelope(EnvelopeConfig {
                c2: 2.0,
                l_override: Some(3.0),
            })
            .unwrap();
        let tc = tech_constants(&spec);
        assert_eq!(tc.l, 3.0);
        assert!((tc.l_t - 3.0 * 2f64.exp()).abs() < 1e-12);
    }
}
