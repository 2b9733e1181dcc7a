//! Square-root local-stochastic-volatility model specifications.
//!
//! The log-price `X` and variance `V` follow
//!
//! ```text
//! dX = -½ η(t,X)² V dt + η(t,X) √V (ρ dW¹ + ρ̄ dW²)
//! dV = β(t,V) dt + σ(t,V) √V dW¹
//! ```
//!
//! with `X₀ = 0`, `V₀ > 0` and `ρ̄ = √(1-ρ²)`. Coefficients are plain closures so the
//! library can carry arbitrary members of the class; the bound metadata (`K`, `η̲`, `η̄`,
//! `σ̲`, `σ̄`) is declared by whoever builds the spec and audited by
//! [`validate_hypotheses`].

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};

/// A coefficient `(time, state) -> value`. Must be pure.
pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Smallest admissible `K`; the regularity constant must be strictly above one.
const K_FLOOR: f64 = 1.0 + 1e-9;

/// Declared constants of the regularity and growth hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisBounds {
    pub k: f64,
    pub eta_lo: f64,
    pub eta_hi: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl HypothesisBounds {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.k, self.eta_lo, self.eta_hi, self.sigma_lo, self.sigma_hi]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("hypothesis bounds must be finite"));
        }
        if self.k <= 1.0 {
            return Err(invalid(format!("K must exceed 1, got {}", self.k)));
        }
        if !(0.0 < self.eta_lo && self.eta_lo < 1.0 && 1.0 < self.eta_hi) {
            return Err(invalid(format!(
                "need 0 < eta_lo < 1 < eta_hi, got ({}, {})",
                self.eta_lo, self.eta_hi
            )));
        }
        if !(0.0 < self.sigma_lo && self.sigma_lo < 1.0 && 1.0 < self.sigma_hi) {
            return Err(invalid(format!(
                "need 0 < sigma_lo < 1 < sigma_hi, got ({}, {})",
                self.sigma_lo, self.sigma_hi
            )));
        }
        Ok(())
    }
}

/// Which constructor produced a spec. Used for reporting and hashing only.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Heston {
        kappa: f64,
        theta: f64,
        xi: f64,
    },
    BoundedSkewHeston {
        kappa: f64,
        theta: f64,
        xi: f64,
        eta0: f64,
        epsilon: f64,
    },
    Custom {
        name: String,
    },
}

impl Family {
    /// Heston parameters `(kappa, theta, xi)` when the variance is a CIR process with
    /// constant vol-of-variance.
    pub fn cir_parameters(&self) -> Option<(f64, f64, f64)> {
        match *self {
            Family::Heston { kappa, theta, xi } => Some((kappa, theta, xi)),
            Family::BoundedSkewHeston { kappa, theta, xi, .. } => Some((kappa, theta, xi)),
            Family::Custom { .. } => None,
        }
    }
}

/// The constants that enter the Lipschitz envelope but are not pinned numerically by the
/// underlying estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeConfig {
    /// Constant of the increment-moment estimate `E[sup|ΔV|²] ≤ C₂ e^{C₂T²} (s-t)`.
    pub c2: f64,
    /// Replaces the explicit Lipschitz bracket `L` when set.
    pub l_override: Option<f64>,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            c2: 1.0,
            l_override: None,
        }
    }
}

/// A member of the model class together with its declared hypothesis constants.
#[derive(Clone)]
pub struct ModelSpec {
    pub eta: Coefficient,
    pub beta: Coefficient,
    pub sigma: Coefficient,
    pub rho: f64,
    pub v0: f64,
    pub horizon: f64,
    pub bounds: HypothesisBounds,
    pub envelope: EnvelopeConfig,
    pub family: Family,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("family", &self.family)
            .field("rho", &self.rho)
            .field("v0", &self.v0)
            .field("horizon", &self.horizon)
            .field("bounds", &self.bounds)
            .field("envelope", &self.envelope)
            .finish()
    }
}

impl ModelSpec {
    /// Builds a spec from arbitrary coefficients, checking the scalar invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eta: Coefficient,
        beta: Coefficient,
        sigma: Coefficient,
        rho: f64,
        v0: f64,
        horizon: f64,
        bounds: HypothesisBounds,
        family: Family,
    ) -> Result<Self> {
        if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
            return Err(invalid(format!("rho must lie in (-1, 1), got {rho}")));
        }
        if !(v0.is_finite() && v0 > 0.0) {
            return Err(invalid(format!("V0 must be positive, got {v0}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        bounds.validate()?;
        Ok(Self {
            eta,
            beta,
            sigma,
            rho,
            v0,
            horizon,
            bounds,
            envelope: EnvelopeConfig::default(),
            family,
        })
    }

    pub fn with_bounds(mut self, bounds: HypothesisBounds) -> Result<Self> {
        bounds.validate()?;
        self.bounds = bounds;
        Ok(self)
    }

    pub fn with_envelope(mut self, envelope: EnvelopeConfig) -> Result<Self> {
        if !(envelope.c2.is_finite() && envelope.c2 > 0.0) {
            return Err(invalid(format!("C2 must be positive, got {}", envelope.c2)));
        }
        if let Some(l) = envelope.l_override {
            if !(l.is_finite() && l > 0.0) {
                return Err(invalid(format!("L override must be positive, got {l}")));
            }
        }
        self.envelope = envelope;
        Ok(self)
    }

    /// Same model on a different horizon.
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// Same coefficients with another correlation.
    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
            return Err(invalid(format!("rho must lie in (-1, 1), got {rho}")));
        }
        self.rho = rho;
        Ok(self)
    }

    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    /// Exact eigenvalues `(smallest, largest)` of the diffusion matrix `σσ*` at `(t, x, v)`.
    pub fn covariance_eigenvalues(&self, t: f64, x: f64, v: f64) -> (f64, f64) {
        let eta = (self.eta)(t, x);
        let sig = (self.sigma)(t, v);
        let a = eta * eta * v;
        let d = sig * sig * v;
        let b = self.rho * eta * sig * v;
        let half_trace = 0.5 * (a + d);
        let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let largest = half_trace + radius;
        // det / largest avoids cancellation in the small root.
        let det = a * d - b * b;
        let smallest = if largest > 0.0 { det / largest } else { 0.0 };
        (smallest, largest)
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {value}")))
    }
}

/// Smallest `K` with `|κ(θ-v)| ≤ K(1+v)` on `v ≥ 0`, floored just above one.
fn affine_drift_constant(kappa: f64, theta: f64) -> f64 {
    (kappa * theta.max(1.0)).max(K_FLOOR)
}

/// Heston: `η ≡ 1`, `β(t,v) = κ(θ-v)`, `σ ≡ ξ`.
pub fn make_heston(kappa: f64, theta: f64, xi: f64, rho: f64, v0: f64, horizon: f64) -> Result<ModelSpec> {
    check_positive("kappa", kappa)?;
    check_positive("theta", theta)?;
    check_positive("xi", xi)?;
    let lo = 0.5 * xi.min(1.0);
    let bounds = HypothesisBounds {
        k: affine_drift_constant(kappa, theta),
        eta_lo: lo,
        eta_hi: 2.0,
        sigma_lo: lo,
        sigma_hi: 2.0 * xi.max(1.0),
    };
    ModelSpec::new(
        Arc::new(|_, _| 1.0),
        Arc::new(move |_, v| kappa * (theta - v)),
        Arc::new(move |_, _| xi),
        rho,
        v0,
        horizon,
        bounds,
        Family::Heston { kappa, theta, xi },
    )
}

/// Heston variance with a bounded skew `η(t,x) = clip(η₀(1 + ε tanh x), η̲, η̄)`.
///
/// The declared bounds enclose the range of the unclipped skew, so the clip only guards
/// against rounding. The skew has Lipschitz constant `η₀|ε|` in `x` and none in `t`.
#[allow(clippy::too_many_arguments)]
pub fn bounded_skew_heston(
    kappa: f64,
    theta: f64,
    xi: f64,
    rho: f64,
    v0: f64,
    horizon: f64,
    eta0: f64,
    epsilon: f64,
) -> Result<ModelSpec> {
    check_positive("kappa", kappa)?;
    check_positive("theta", theta)?;
    check_positive("xi", xi)?;
    check_positive("eta0", eta0)?;
    if !(epsilon.is_finite() && epsilon.abs() < 1.0) {
        return Err(invalid(format!("epsilon must lie in (-1, 1), got {epsilon}")));
    }
    let eta_lo = 0.5 * (eta0 * (1.0 - epsilon.abs())).min(1.0);
    let eta_hi = 2.0 * (eta0 * (1.0 + epsilon.abs())).max(1.0);
    let bounds = HypothesisBounds {
        k: affine_drift_constant(kappa, theta).max(eta0 * epsilon.abs()),
        eta_lo,
        eta_hi,
        sigma_lo: 0.5 * xi.min(1.0),
        sigma_hi: 2.0 * xi.max(1.0),
    };
    ModelSpec::new(
        Arc::new(move |_, x| (eta0 * (1.0 + epsilon * x.tanh())).clamp(eta_lo, eta_hi)),
        Arc::new(move |_, v| kappa * (theta - v)),
        Arc::new(move |_, _| xi),
        rho,
        v0,
        horizon,
        bounds,
        Family::BoundedSkewHeston {
            kappa,
            theta,
            xi,
            eta0,
            epsilon,
        },
    )
}

/// A Lipschitz check that failed: `|f(a) - f(b)| > K(|Δstate| + |Δt|)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityViolation {
    pub coefficient: &'static str,
    /// `(t, state)` of the first point.
    pub first: (f64, f64),
    pub second: (f64, f64),
    /// `|f(a) - f(b)| / (|Δstate| + |Δt|)`, to compare against `K`.
    pub ratio: f64,
}

/// A boundedness or growth check that failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthViolation {
    pub coefficient: &'static str,
    pub point: (f64, f64),
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct HypothesisReport {
    pub r_violations: Vec<RegularityViolation>,
    pub g_violations: Vec<GrowthViolation>,
    pub sampled_points: usize,
}

impl HypothesisReport {
    pub fn passes(&self) -> bool {
        self.r_violations.is_empty() && self.g_violations.is_empty()
    }
}

/// Half-width of the sampled log-price window.
pub const X_WINDOW: f64 = 10.0;
/// The variance window is `[0, V_WINDOW_FACTOR * V0]`.
pub const V_WINDOW_FACTOR: f64 = 100.0;

const REL_SLACK: f64 = 1e-12;

/// Kronecker low-discrepancy sequence in `[0,1)^4` with a seeded random shift.
struct ShiftedKronecker {
    alpha: [f64; 4],
    shift: [f64; 4],
}

impl ShiftedKronecker {
    fn new(seed: u64) -> Self {
        // Generalised golden ratio for dimension 4: the real root of x^5 = x + 1.
        let mut phi = 1.2f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(0.2);
        }
        let mut alpha = [0.0; 4];
        for (j, a) in alpha.iter_mut().enumerate() {
            *a = phi.powi(-(j as i32 + 1)).fract();
        }
        let mut state = seed;
        let mut shift = [0.0; 4];
        for s in shift.iter_mut() {
            *s = (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64;
        }
        Self { alpha, shift }
    }

    fn point(&self, i: usize) -> [f64; 4] {
        let n = (i + 1) as f64;
        std::array::from_fn(|j| (self.shift[j] + n * self.alpha[j]).fract())
    }
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Audits the declared hypothesis constants of `spec` on `samples` quasi-random point
/// pairs over `[0,T] × [-10,10]` (skew) and `[0,T] × [0, 100·V0]` (variance).
///
/// Half of the pairs are drawn independently over the window, the other half are local
/// perturbations, so that both the global and the infinitesimal Lipschitz ratios are
/// exercised. Only the joint Lipschitz form in `(t, state)` is checked; the weaker
/// Hölder-½-in-time variant that also suffices is not tested separately. States outside
/// the windows are never visited.
pub fn validate_hypotheses(spec: &ModelSpec, samples: usize, seed: u64) -> Result<HypothesisReport> {
    if samples < 2 {
        return Err(invalid("validate_hypotheses needs at least 2 samples"));
    }
    let b = spec.bounds;
    let t_max = spec.horizon;
    let v_max = V_WINDOW_FACTOR * spec.v0;
    let seq = ShiftedKronecker::new(seed);
    let mut report = HypothesisReport {
        sampled_points: samples,
        ..Default::default()
    };

    for i in 0..samples {
        let [p0, p1, p2, p3] = seq.point(i);
        let s = p0 * t_max;
        let local = i % 2 == 1;
        let t = if local {
            (s + (p1 - 0.5) * 1e-3 * t_max).clamp(0.0, t_max)
        } else {
            p1 * t_max
        };

        let x = -X_WINDOW + 2.0 * X_WINDOW * p2;
        let x2 = if local {
            (x + (p3 - 0.5) * 1e-3).clamp(-X_WINDOW, X_WINDOW)
        } else {
            -X_WINDOW + 2.0 * X_WINDOW * p3
        };
        let v = v_max * p2;
        let v2 = if local {
            (v + (p3 - 0.5) * 1e-3 * v_max).clamp(0.0, v_max)
        } else {
            v_max * p3
        };

        let e1 = (spec.eta)(s, x);
        let e2 = (spec.eta)(t, x2);
        lipschitz_check(&mut report, "eta", (s, x), (t, x2), e1, e2, b.k);
        bound_check(&mut report, "eta", (s, x), e1, b.eta_lo, b.eta_hi);

        let g1 = (spec.sigma)(s, v);
        let g2 = (spec.sigma)(t, v2);
        lipschitz_check(&mut report, "sigma", (s, v), (t, v2), g1, g2, b.k);
        bound_check(&mut report, "sigma", (s, v), g1, b.sigma_lo, b.sigma_hi);

        let drift = (spec.beta)(s, v);
        if !drift.is_finite() || drift.abs() > b.k * (1.0 + v) * (1.0 + REL_SLACK) {
            report.g_violations.push(GrowthViolation {
                coefficient: "beta",
                point: (s, v),
                value: drift,
            });
        }
    }
    Ok(report)
}

fn lipschitz_check(
    report: &mut HypothesisReport,
    name: &'static str,
    a: (f64, f64),
    b: (f64, f64),
    fa: f64,
    fb: f64,
    k: f64,
) {
    let dist = (a.1 - b.1).abs() + (a.0 - b.0).abs();
    let diff = (fa - fb).abs();
    if !diff.is_finite() || diff > k * dist * (1.0 + REL_SLACK) + 1e-15 {
        report.r_violations.push(RegularityViolation {
            coefficient: name,
            first: a,
            second: b,
            ratio: if dist > 0.0 { diff / dist } else { f64::INFINITY },
        });
    }
}

fn bound_check(report: &mut HypothesisReport, name: &'static str, p: (f64, f64), value: f64, lo: f64, hi: f64) {
    if !(value.is_finite() && value >= lo && value <= hi) {
        report.g_violations.push(GrowthViolation {
            coefficient: name,
            point: p,
            value,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heston() -> ModelSpec {
        make_heston(1.0, 0.09, 0.3, -0.5, 0.09, 1.0).unwrap()
    }

    #[test]
    fn heston_coefficients() {
        let spec = heston();
        assert_eq!((spec.beta)(0.0, 0.09), 0.0);
        for &(t, v) in &[(0.0, 0.0), (0.3, 0.5), (1.0, 7.0)] {
            assert_eq!((spec.sigma)(t, v), 0.3);
            assert_eq!((spec.eta)(t, v), 1.0);
        }
        assert!(spec.bounds.k >= 1.0 * 0.09f64.max(1.0));
    }

    #[test]
    fn heston_rejects_degenerate_vol_of_variance() {
        assert!(make_heston(1.0, 0.09, 0.0, -0.5, 0.09, 1.0).is_err());
        assert!(make_heston(1.0, 0.09, f64::NAN, -0.5, 0.09, 1.0).is_err());
        assert!(make_heston(1.0, 0.09, 0.3, 1.0, 0.09, 1.0).is_err());
        assert!(make_heston(1.0, 0.09, 0.3, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn heston_passes_audit() {
        let report = validate_hypotheses(&heston(), 10_000, 7).unwrap();
        assert!(report.passes(), "{report:?}");
        assert_eq!(report.sampled_points, 10_000);
    }

    #[test]
    fn unbounded_skew_is_flagged() {
        let base = heston();
        let spec = ModelSpec::new(
            Arc::new(|_, x| 1.0 + x),
            base.beta.clone(),
            base.sigma.clone(),
            0.0,
            0.09,
            1.0,
            base.bounds,
            Family::Custom { name: "linear".into() },
        )
        .unwrap();
        let report = validate_hypotheses(&spec, 10_000, 1).unwrap();
        assert!(!report.g_violations.is_empty());
        assert!(report.g_violations.iter().all(|g| g.coefficient == "eta"));
    }

    #[test]
    fn bounded_skew_passes_audit() {
        // |d/dx η₀(1+ε tanh x)| ≤ η₀|ε| = 0.3 < K, and the range [0.7, 1.3]·η₀ sits
        // inside the declared [η̲, η̄] = [0.35, 2.6], so (R) and (G) hold by inspection.
        let spec = bounded_skew_heston(1.5, 0.04, 0.5, -0.7, 0.04, 1.0, 1.0, 0.3).unwrap();
        assert!(spec.bounds.eta_lo <= 0.7 && spec.bounds.eta_hi >= 1.3);
        assert!(spec.bounds.k >= 0.3);
        let report = validate_hypotheses(&spec, 10_000, 3).unwrap();
        assert!(report.passes(), "{report:?}");
    }

    #[test]
    fn steep_skew_breaks_lipschitz_bound() {
        let base = heston();
        let spec = ModelSpec::new(
            Arc::new(|_, x| 1.0 + 0.5 * (40.0 * x).tanh()),
            base.beta.clone(),
            base.sigma.clone(),
            0.0,
            0.09,
            1.0,
            base.bounds,
            Family::Custom { name: "steep".into() },
        )
        .unwrap();
        let report = validate_hypotheses(&spec, 10_000, 1).unwrap();
        assert!(!report.r_violations.is_empty());
        assert!(report.r_violations.iter().all(|r| r.ratio > spec.bounds.k));
    }

    #[test]
    fn too_few_samples() {
        assert!(validate_hypotheses(&heston(), 1, 0).is_err());
    }

    #[test]
    fn rho_bar_identity() {
        for &rho in &[-0.99, -0.5, 0.0, 0.3, 0.999] {
            let spec = heston().with_rho(rho).unwrap();
            let rb = spec.rho_bar();
            assert!((rb * rb + rho * rho - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn eigenvalues_of_uncorrelated_unit_coefficients() {
        let spec = bounded_skew_heston(1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let (lo, hi) = spec.covariance_eigenvalues(0.2, 0.1, 0.7);
        assert!((lo - 0.7).abs() < 1e-15 && (hi - 0.7).abs() < 1e-15);
    }
}
