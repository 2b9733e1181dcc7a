use std::f64::consts::{LN_2, PI};

use serde::Serialize;

use super::constants::{bound_constants, BoundConstants};
use super::{psi, y_threshold, CurveTriple};
use crate::error::{invalid, Error, Result};
use crate::logbound::{DoubleDouble, LogProbability, LogValue};
use crate::model::ModelSpec;
use crate::pricing::lee_phi_ln;
use crate::quad::integrate;

/// Rate function of the tube estimate along `curve` at time `t`.
pub fn rate_function(curve: &CurveTriple, consts: &BoundConstants, rho_bar: f64, t: f64) -> f64 {
    let p = curve.closed_form.eval(t);
    let tc = &consts.tech;
    let h = curve.regularity_window();
    let ell = rho_bar * rho_bar * tc.lambda * p.v;
    1.0 / h
        + (p.x_prime * p.x_prime + p.v_prime * p.v_prime) / ell
        + 2.0 * (tc.c * tc.c * p.v * p.v + tc.l_t * p.v) * (1.0 / ell + 1.0 / (p.r * p.r))
}

/// `∫₀ᵀ F dt` by adaptive quadrature on the closed form.
pub fn rate_integral(curve: &CurveTriple, consts: &BoundConstants, rho_bar: f64) -> Result<f64> {
    integrate(
        |t| rate_function(curve, consts, rho_bar, t),
        0.0,
        curve.horizon(),
        0.0,
        1e-12,
    )
}

fn check_target(y: f64, threshold: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(invalid(format!("target must be finite, got {y}")));
    }
    if y.abs() <= threshold {
        return Err(Error::BelowThreshold { y: y.abs(), threshold });
    }
    Ok(())
}

/// `ln(c_T·ψ(ρ̄))`.
fn log_scale(consts: &BoundConstants) -> Result<DoubleDouble> {
    Ok(consts.log_c_t.add_f64(psi(consts.rho_bar)?.ln()))
}

/// `-Q(μ)(1 + ∫F)`: the tube bound before the constants are simplified.
pub fn raw_tube_log_bound(curve: &CurveTriple, spec: &ModelSpec) -> Result<LogProbability> {
    let consts = bound_constants(spec);
    let integral = rate_integral(curve, &consts, consts.rho_bar)?;
    Ok(LogProbability::from_log_neg_log(
        DoubleDouble::from_f64(consts.log_q).add_f64(integral.ln_1p()),
    ))
}

/// `-c_T·ψ(ρ̄)·|y|`, the simplified tube bound.
pub fn theorem_log_bound(y: f64, spec: &ModelSpec) -> Result<LogProbability> {
    check_target(y, y_threshold(spec).0)?;
    let consts = bound_constants(spec);
    Ok(LogProbability::from_log_neg_log(
        log_scale(&consts)?.add_f64(y.abs().ln()),
    ))
}

/// Tail bound with the quantities it implies for moments and the smile wings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfTailBound {
    /// Bound on both `P(X_T > y)` and `P(X_T < -y)`.
    pub bound: LogProbability,
    /// Ceiling `c_T·ψ(ρ̄)` on both critical exponents.
    pub critical_exponent_ceiling: LogValue,
    /// Floors `(φ(c_Tψ - 1), φ(c_Tψ))` of the right and left implied-variance slopes.
    pub wing_floors: (LogValue, LogValue),
}

/// Lower bound on `P(X_T > y)` and `P(X_T < -y)`.
///
/// The argument behind it steers the curves to the shifted arrival `ȳ = 2|y| + V0`, which
/// is why both thresholds apply here.
pub fn cdf_tail_log_bound(y: f64, spec: &ModelSpec) -> Result<CdfTailBound> {
    if !(y > 0.0) {
        return Err(invalid(format!("tail level must be positive, got {y}")));
    }
    let (a, b) = y_threshold(spec);
    check_target(y, a.max(b))?;
    let (ln_x, wing_floors) = exponent_quantities(spec)?;
    Ok(CdfTailBound {
        bound: LogProbability::from_log_neg_log(ln_x.add_f64(y.ln())),
        critical_exponent_ceiling: LogValue::from_ln(ln_x),
        wing_floors,
    })
}

/// `ln(c_Tψ(ρ̄))` and the wing floors it implies.
fn exponent_quantities(spec: &ModelSpec) -> Result<(DoubleDouble, (LogValue, LogValue))> {
    let consts = bound_constants(spec);
    let ln_x = log_scale(&consts)?;
    let ln_x_minus_one = if ln_x.hi < 40.0 {
        DoubleDouble::from_f64((ln_x.to_f64().exp() - 1.0).ln())
    } else {
        ln_x.add_f64((-(-ln_x.to_f64()).exp()).ln_1p())
    };
    Ok((
        ln_x,
        (
            LogValue::from_ln(lee_phi_ln(ln_x_minus_one)),
            LogValue::from_ln(lee_phi_ln(ln_x)),
        ),
    ))
}

/// Floors `(φ(c_Tψ - 1), φ(c_Tψ))` of the right and left implied-variance wing slopes.
pub fn wing_floors(spec: &ModelSpec) -> Result<(LogValue, LogValue)> {
    Ok(exponent_quantities(spec)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallBallBound {
    pub bound: LogProbability,
    pub radius: f64,
}

/// Radius `R^{(j)} = |y|^{(1-j)/2}`.
pub fn small_ball_radius(y: f64, j: u32) -> f64 {
    y.abs().powf(0.5 * (1.0 - j as f64))
}

fn small_ball_threshold(spec: &ModelSpec) -> f64 {
    let (a, b) = y_threshold(spec);
    a.max(b).max(16.0)
}

/// Bound `-(j+1)·d_T·ψ(ρ̄)·|y|` on `P(|(X_T, V_T) - (y, |y|+V0)| ≤ R^{(j)})`.
pub fn small_ball_log_bound(y: f64, j: u32, spec: &ModelSpec) -> Result<SmallBallBound> {
    check_target(y, small_ball_threshold(spec))?;
    let consts = bound_constants(spec);
    let loglog = consts
        .log_d_t
        .add_f64(psi(consts.rho_bar)?.ln() + (j as f64 + 1.0).ln() + y.abs().ln());
    Ok(SmallBallBound {
        bound: LogProbability::from_log_neg_log(loglog),
        radius: small_ball_radius(y, j),
    })
}

/// The chained construction behind the small-ball bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallBallChain {
    /// `δ_i = T/(2|y|^i)` for `i = 1..=j`.
    pub steps: Vec<f64>,
    /// `t_k = T - Σ_{h=1}^{k} δ_{j-h+1}` for `k = 0..=j`; decreasing from `T`.
    pub knots: Vec<f64>,
    /// Segment bound of each link, `k = 1..=j`, link `k` spanning `[t_k, t_{k-1}]`.
    pub step_bounds: Vec<LogProbability>,
    /// Per-link exponent `-2c_Tψ(ρ̄)(1/T + T)|y|` used when the links are summed.
    pub stated_step_bound: LogProbability,
    /// Tube bound for reaching the first link.
    pub slice_bound: LogProbability,
    /// `slice + Σ links`, combining the computed segment bounds.
    pub total: LogProbability,
}

/// `ln Σ exp(a_i)` for double-double `a_i`.
fn log_sum_exp(terms: &[DoubleDouble]) -> DoubleDouble {
    let max = terms.iter().copied().fold(
        DoubleDouble::from_f64(f64::NEG_INFINITY),
        |m, t| if t > m { t } else { m },
    );
    let s: f64 = terms.iter().map(|t| (*t - max).to_f64().exp()).sum();
    max.add_f64(s.ln())
}

pub fn small_ball_chain(y: f64, j: u32, spec: &ModelSpec) -> Result<SmallBallChain> {
    check_target(y, small_ball_threshold(spec))?;
    let t = spec.horizon;
    let ay = y.abs();
    let steps: Vec<f64> = (1..=j).map(|i| t / (2.0 * ay.powi(i as i32))).collect();
    let mut knots = vec![t];
    for k in 1..=j as usize {
        let prev = knots[k - 1];
        knots.push(prev - steps[j as usize - k]);
    }
    let mut step_bounds = Vec::with_capacity(j as usize);
    for k in 1..=j as usize {
        let i = j - k as u32 + 1;
        step_bounds.push(segment_log_bound(
            y,
            small_ball_radius(y, i - 1),
            small_ball_radius(y, i),
            knots[k],
            knots[k - 1],
            spec,
        )?);
    }
    let consts = bound_constants(spec);
    let scale = log_scale(&consts)?;
    let stated_step_bound = LogProbability::from_log_neg_log(scale.add_f64(LN_2 + (1.0 / t + t).ln() + ay.ln()));
    let slice_bound = LogProbability::from_log_neg_log(scale.add_f64(ay.ln()));
    let mut terms: Vec<DoubleDouble> = step_bounds.iter().map(|b| b.log_neg_log).collect();
    terms.push(slice_bound.log_neg_log);
    Ok(SmallBallChain {
        steps,
        knots,
        step_bounds,
        stated_step_bound,
        slice_bound,
        total: LogProbability::from_log_neg_log(log_sum_exp(&terms)),
    })
}

/// Bound on staying within `R1` of the line to the target on `[t, s]` and ending within
/// `R2` of it: `-c_Tψ(ρ̄)(R1²/((s-t)|y|) + |y|²(s-t)/R2²)`.
pub fn segment_log_bound(y: f64, r1: f64, r2: f64, t: f64, s: f64, spec: &ModelSpec) -> Result<LogProbability> {
    check_target(y, 16.0)?;
    if !(r2 > 0.0 && r2 <= r1 && r1 <= y.abs().sqrt() * (1.0 + 1e-15)) {
        return Err(invalid(format!(
            "need 0 < R2 <= R1 <= sqrt|y|, got R1 = {r1}, R2 = {r2}"
        )));
    }
    if !(t >= 0.0 && t < s && s <= spec.horizon) {
        return Err(invalid(format!("need 0 <= t < s <= T, got t = {t}, s = {s}")));
    }
    let consts = bound_constants(spec);
    let ay = y.abs();
    let dt = s - t;
    let bracket = r1 * r1 / (dt * ay) + ay * ay * dt / (r2 * r2);
    Ok(LogProbability::from_log_neg_log(
        log_scale(&consts)?.add_f64(bracket.ln()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityConstants {
    pub c_star: f64,
    pub log_c_t: DoubleDouble,
    /// `ln e_T`; the density bound reads `p(y) ≥ M_T⁻¹ exp(-e_T ψ(ρ̄)|y|)`.
    pub log_e_t: DoubleDouble,
}

pub fn density_constants(spec: &ModelSpec) -> DensityConstants {
    let consts = bound_constants(spec);
    DensityConstants {
        c_star: consts.c_star,
        log_c_t: consts.log_c_t,
        log_e_t: consts.log_e_t,
    }
}

/// Universal constants of the density prefactor that have no explicit value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityPlaceholders {
    pub c_universal: f64,
    pub c_p: f64,
    pub l_star: f64,
    pub p: f64,
}

/// `ln M_T`, available only once the universal constants are supplied.
pub fn m_t_constant(spec: &ModelSpec, placeholders: Option<&DensityPlaceholders>) -> Result<LogValue> {
    let ph = placeholders.ok_or(Error::NotComputable("M_T"))?;
    if !(ph.c_universal > 0.0 && ph.c_p > 0.0 && ph.p > 0.0 && ph.l_star.is_finite()) {
        return Err(invalid("density placeholders must be positive and finite"));
    }
    let consts = bound_constants(spec);
    let b = spec.bounds;
    let rb = consts.rho_bar;
    let log_theta = rb.ln() + 2.0 * b.eta_lo.ln()
        - (ph.l_star + 2.5) * LN_2
        - 0.5 * PI.ln()
        - 1.0
        - b.eta_hi.ln()
        - ph.c_universal.ln()
        - ph.c_p.ln()
        - 2.0 * ph.c_p * spec.horizon.powf(ph.p);
    let ln_m = LN_2 - consts.epsilon0.ln() - rb.ln() - b.eta_lo.ln() - 0.5 * consts.log_delta0 - log_theta;
    Ok(LogValue::from_ln(DoubleDouble::from_f64(ln_m)))
}

#[cfg(test)]
mod tests {
    use super::super::{optimal_curves, ClosedFormCurve};
    use super::*;
    use crate::model::{bounded_skew_heston, make_heston};

    fn heston(rho: f64) -> ModelSpec {
        make_heston(1.0, 0.09, 0.3, rho, 0.09, 1.0).unwrap()
    }

    #[test]
    fn rate_function_constant_curve() {
        // ȳ = V0 with a very short horizon keeps ṽ ≈ V0; check the zero-derivative
        // reduction on the exact constant point t = 0 of a curve with u'(0) = 0.
        let spec = heston(-0.5);
        let v0 = spec.v0;
        let t = spec.horizon;
        // u'(0) = 0 ⇔ (√(ȳ/V0) - e^{-T/2})/(2 sinh(T/2)) = ½.
        let root = (0.5 * t).sinh() + (-0.5 * t).exp();
        let cf = ClosedFormCurve::new(1.0, v0 * root * root, v0, t).unwrap();
        let curve = CurveTriple::sample(cf, 10).unwrap();
        assert!(cf.u_prime(0.0).abs() < 1e-15);
        let consts = bound_constants(&spec);
        let rb = consts.rho_bar;
        let tc = consts.tech;
        let h = cf.regularity_window();
        let expected = 1.0 / h
            + 2.0
                * (tc.c * tc.c * v0 * v0 + tc.l_t * v0)
                * (1.0 / (rb * rb * tc.lambda * v0) + 4.0 / (v0.min(1.0) * v0));
        let got = rate_function(&curve, &consts, rb, 0.0);
        assert!((got / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_function_at_least_inverse_window() {
        let spec = heston(-0.5);
        let curve = optimal_curves(2.0, &spec, 100).unwrap();
        let consts = bound_constants(&spec);
        for &t in &curve.grid {
            assert!(rate_function(&curve, &consts, consts.rho_bar, t) >= 1.0 / curve.regularity_window());
        }
    }

    #[test]
    fn rate_integral_below_closed_form_estimate() {
        // Closed-form bound on ∫F assembled from sup/integral estimates of u and u'.
        for &(v0, t, y, rho) in &[(0.09, 1.0, 2.0, -0.5), (0.04, 0.5, 1.0, 0.0), (0.5, 2.0, 20.0, -0.9)] {
            let spec = make_heston(1.0, 0.09, 0.3, rho, v0, t).unwrap();
            let curve = optimal_curves(y, &spec, 100).unwrap();
            let consts = bound_constants(&spec);
            let integral = rate_integral(&curve, &consts, consts.rho_bar).unwrap();
            let s = (0.5 * t).sinh();
            let c1 = integrate(|r| ((0.5 * r).sinh() / s + 1.0).powi(2), 0.0, t, 1e-14, 1e-14).unwrap();
            let c2 = 0.25 * integrate(|r| (0.5 * r).cosh().powi(2), 0.0, t, 1e-14, 1e-14).unwrap() / (s * s);
            let c_tilde = 2.0 * (t / (0.5 * t).tanh() + 4.0 * v0 * (c1 + c2));
            let rhs = c_tilde * consts.gamma_t * y.abs();
            // trapezoid on the grid as an independent quadrature
            let trap: f64 = curve
                .grid
                .windows(2)
                .map(|w| {
                    0.5 * (w[1] - w[0])
                        * (rate_function(&curve, &consts, consts.rho_bar, w[0])
                            + rate_function(&curve, &consts, consts.rho_bar, w[1]))
                })
                .sum();
            assert!((trap / integral - 1.0).abs() < 1e-3);
            assert!(integral <= rhs, "{integral} > {rhs}");
        }
    }

    #[test]
    fn raw_bound_negative_and_decreasing() {
        let spec = heston(-0.5);
        let mut prev: Option<LogProbability> = None;
        for i in 0..20 {
            let y = 1.1 + 0.5 * i as f64;
            let b = raw_tube_log_bound(&optimal_curves(y, &spec, 50).unwrap(), &spec).unwrap();
            assert!(b.log_value() < 0.0);
            if let Some(p) = prev {
                assert!(b < p);
            }
            prev = Some(b);
        }
    }

    #[test]
    fn zero_correlation_theorem_bound() {
        let spec = heston(0.0);
        let b = theorem_log_bound(2.0, &spec).unwrap();
        let c = bound_constants(&spec);
        let expected = c.log_c_t.add_f64(2f64.ln());
        assert_eq!(b.log_neg_log, expected);
    }

    #[test]
    fn theorem_bound_falls_with_correlation() {
        let mut prev: Option<LogProbability> = None;
        for &rho in &[0.0, -0.5, -0.9, -0.99] {
            let b = theorem_log_bound(2.0, &heston(rho)).unwrap();
            assert!(b.log_value() <= 0.0);
            if let Some(p) = prev {
                assert!(b < p);
            }
            prev = Some(b);
        }
    }

    #[test]
    fn tail_bound_preconditions_and_floors() {
        let spec = heston(-0.5);
        let (a, b) = y_threshold(&spec);
        let th = a.max(b);
        assert!(cdf_tail_log_bound(0.5 * th, &spec).is_err());
        assert!(cdf_tail_log_bound(-3.0, &spec).is_err());
        let tb = cdf_tail_log_bound(1.01 * th, &spec).unwrap();
        let (right, left) = tb.wing_floors;
        assert!(right.ln.is_finite() && left.ln.is_finite());
        assert!(right >= left);
        // floors are positive numbers, tiny enough to underflow
        assert_eq!(left.value(), 0.0);
        // ceiling exceeds any realistic critical exponent
        assert!(tb.critical_exponent_ceiling.ln_f64() > 1e6f64.ln());
    }

    #[test]
    fn small_ball_radii() {
        let spec = heston(-0.5);
        assert_eq!(small_ball_log_bound(25.0, 0, &spec).unwrap().radius, 5.0);
        assert!((small_ball_log_bound(25.0, 2, &spec).unwrap().radius - 0.2).abs() < 1e-15);
        assert!(small_ball_log_bound(10.0, 0, &spec).is_err());
    }

    #[test]
    fn chain_layout() {
        let spec = heston(-0.5);
        let chain = small_ball_chain(25.0, 3, &spec).unwrap();
        assert_eq!(chain.steps.len(), 3);
        assert_eq!(chain.knots.len(), 4);
        assert_eq!(chain.knots[0], 1.0);
        assert!((chain.knots[1] - (1.0 - 1.0 / (2.0 * 25f64.powi(3)))).abs() < 1e-15);
        assert!(chain.knots.windows(2).all(|w| w[1] < w[0]));
        assert!(*chain.knots.last().unwrap() > 0.0);
        // each link sees -c_Tψ(2/T + T/2)|y|
        let c = bound_constants(&spec);
        let scale = c.log_c_t.add_f64(psi(c.rho_bar).unwrap().ln());
        for b in &chain.step_bounds {
            let expected = scale.add_f64(2.5f64.ln() + 25f64.ln());
            assert!(b.log_neg_log.relative_difference(expected) < 1e-15);
        }
        assert!(chain.total < chain.slice_bound);
    }

    #[test]
    fn segment_reference_and_limits() {
        let spec = heston(-0.5);
        let y = 25.0;
        let r = 5.0;
        let b = segment_log_bound(y, r, r, 0.0, 1.0, &spec).unwrap();
        let c = bound_constants(&spec);
        let expected = c.log_c_t.add_f64(psi(c.rho_bar).unwrap().ln() + 26f64.ln());
        assert!(b.log_neg_log.relative_difference(expected) < 1e-16);
        let short = segment_log_bound(y, r, r, 0.5, 0.5 + 1e-9, &spec).unwrap();
        assert!(short < b);
        assert!(segment_log_bound(y, 1.0, 2.0, 0.0, 1.0, &spec).is_err());
        assert!(segment_log_bound(y, r, r, 0.5, 0.5, &spec).is_err());
        assert!(segment_log_bound(10.0, 1.0, 1.0, 0.0, 1.0, &spec).is_err());
    }

    #[test]
    fn density_ratio_against_tube_constant() {
        for i in 1..=50 {
            let t = 0.1 * i as f64;
            let spec = heston(-0.5).with_horizon(t).unwrap();
            let d = density_constants(&spec);
            let log_ratio = (d.log_e_t - d.log_c_t).to_f64();
            assert!(log_ratio.is_finite() || log_ratio == f64::NEG_INFINITY);
            if t <= 1.0 {
                assert!(log_ratio > 0.0, "T = {t}");
            } else {
                assert!(log_ratio < 0.0, "T = {t}");
            }
        }
    }

    #[test]
    fn m_t_needs_placeholders() {
        let spec = heston(-0.5);
        assert!(matches!(m_t_constant(&spec, None), Err(Error::NotComputable(_))));
        let ph = DensityPlaceholders {
            c_universal: 1.0,
            c_p: 1.0,
            l_star: 1.0,
            p: 2.0,
        };
        assert!(m_t_constant(&spec, Some(&ph)).unwrap().ln_f64().is_finite());
    }

    #[test]
    fn bounded_skew_chain_constants_finite() {
        let spec = bounded_skew_heston(1.0, 1.0, 0.5, -0.3, 0.5, 1.0, 1.0, 0.2).unwrap();
        let c = bound_constants(&spec);
        assert!(c.log_c_t.is_finite() && c.log_d_t.is_finite() && c.log_e_t.is_finite());
        assert!(c.log_d_t > c.log_c_t);
    }
}
