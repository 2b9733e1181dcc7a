//! Heston transforms: characteristic function, Fourier tails, density, moment explosion
//! and out-of-the-money prices. Serves as ground truth for the Monte Carlo engine.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{Family, ModelSpec};
use crate::pricing::implied_vol_otm;
use crate::pricing::{SmilePoint, SmileSource};
use crate::quad::integrate_to_infinity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
    pub v0: f64,
    pub t: f64,
}

/// Cap on reported critical moments.
pub const MOMENT_CAP: f64 = 1e6;

impl HestonParams {
    pub fn new(kappa: f64, theta: f64, xi: f64, rho: f64, v0: f64, t: f64) -> Result<Self> {
        for (name, v) in [("kappa", kappa), ("theta", theta), ("xi", xi), ("V0", v0), ("T", t)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(invalid(format!("rho must lie in (-1, 1), got {rho}")));
        }
        Ok(Self {
            kappa,
            theta,
            xi,
            rho,
            v0,
            t,
        })
    }

    /// Parameters of a spec built by [`crate::model::make_heston`].
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        match spec.family {
            Family::Heston { kappa, theta, xi } => Self::new(kappa, theta, xi, spec.rho, spec.v0, spec.horizon),
            _ => Err(invalid("Fourier oracle only applies to the Heston family")),
        }
    }

    /// Time at which `E[e^{pX_t}]` blows up (`inf` if it never does).
    pub fn explosion_time(&self, p: f64) -> f64 {
        let a = 0.5 * self.xi * self.xi;
        let b = self.rho * self.xi * p - self.kappa;
        let c = 0.5 * p * (p - 1.0);
        if c <= 0.0 {
            return f64::INFINITY;
        }
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            if b < 0.0 {
                return f64::INFINITY;
            }
            let sd = disc.sqrt();
            if sd == 0.0 {
                return 2.0 / b;
            }
            ((b + sd) / (b - sd)).ln() / sd
        } else {
            let sd = (-disc).sqrt();
            2.0 / sd * (FRAC_PI_2 - (b / sd).atan())
        }
    }

    /// Whether `E[e^{pX_T}]` is finite.
    pub fn moment_finite(&self, p: f64) -> bool {
        self.explosion_time(p) > self.t
    }
}

/// Critical exponents `p* = sup{p : E[e^{pX_T}] < ∞}` and `q* = sup{q : E[e^{-qX_T}] < ∞}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalMoments {
    pub p_star: f64,
    pub q_star: f64,
    pub p_capped: bool,
    pub q_capped: bool,
}

fn critical_side(params: &HestonParams, sign: f64, base: f64) -> (f64, bool) {
    let finite = |x: f64| params.moment_finite(sign * x);
    let mut lo = base;
    let mut hi = (2.0 * base).max(1.0);
    while finite(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > MOMENT_CAP {
            return (MOMENT_CAP, true);
        }
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if finite(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), false)
}

pub fn critical_moment(params: &HestonParams) -> CriticalMoments {
    // Moments of order in [0, 1] are always finite.
    let (p_star, p_capped) = critical_side(params, 1.0, 1.0);
    let (q_star, q_capped) = critical_side(params, -1.0, 0.0);
    CriticalMoments {
        p_star,
        q_star,
        p_capped,
        q_capped,
    }
}

/// `E[e^{iuX_T}]` in the branch-stable form.
pub fn char_fn(params: &HestonParams, u: Complex64) -> Result<Complex64> {
    let p = -u.im;
    if !params.moment_finite(p) {
        return Err(Error::OutsideStrip(format!("u = {u}")));
    }
    Ok(char_fn_unchecked(params, u))
}

/// `ln(1 + z)/z`, equal to 1 at `z = 0`.
fn log1p_over(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        1.0 - z * (0.5 - z * (1.0 / 3.0 - 0.25 * z))
    } else {
        (1.0 + z).ln() / z
    }
}

fn char_fn_unchecked(params: &HestonParams, u: Complex64) -> Complex64 {
    let i = Complex64::i();
    let HestonParams {
        kappa,
        theta,
        xi,
        rho,
        v0,
        t,
    } = *params;
    if u == Complex64::new(0.0, 0.0) {
        return Complex64::new(1.0, 0.0);
    }
    let xi2 = xi * xi;
    let a = kappa - rho * xi * i * u;
    let q = i * u + u * u;
    let d = (a * a + xi2 * q).sqrt();
    // (a - d)/ξ² written without the cancellation that ruins small ξ
    let m = -q / (a + d);
    let g = xi2 * m / (a + d);
    let edt = (-d * t).exp();
    let zp = m * (1.0 - edt) / ((a + d) * (1.0 - g));
    let c = kappa * theta * (m * t - 2.0 * zp * log1p_over(xi2 * zp));
    let dd = m * (1.0 - edt) / (1.0 - g * edt);
    (c + dd * v0).exp()
}

/// `E[e^{pX_T}]`; `inf` outside the strip.
pub fn mgf(params: &HestonParams, p: f64) -> f64 {
    if !params.moment_finite(p) {
        return f64::INFINITY;
    }
    char_fn_unchecked(params, Complex64::new(0.0, -p)).re
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-8 * (1.0 + a.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}

/// Damping exponents below this use the undamped inversion instead.
const MIN_DAMPING: f64 = 0.25;

fn ln_mgf(params: &HestonParams, p: f64) -> f64 {
    let m = mgf(params, p);
    if m > 0.0 && m.is_finite() {
        m.ln()
    } else {
        f64::INFINITY
    }
}

/// Saddle-point choice of the damping `α ∈ (0, limit)` for `e^{-αy}M(±α)/α`.
fn damping(params: &HestonParams, y: f64, sign: f64, limit: f64) -> f64 {
    let upper = (0.98 * limit).min(60.0);
    golden_min(|a| -a * y + ln_mgf(params, sign * a) - a.ln(), 1e-6, upper)
}

fn scale_of(v: f64) -> f64 {
    v.abs().max(1e-300)
}

fn invert<F: FnMut(f64) -> f64>(mut f: F, params: &HestonParams) -> Result<f64> {
    let scale = scale_of(f(1e-9));
    let width = 2.0 / (params.v0.max(params.theta) * params.t).sqrt();
    integrate_to_infinity(f, 0.0, width, 1e-13 * scale, 1e-15 * scale)
}

/// `P(X_T > y)` with the damping `α` (`α > 0` shifts the contour into the right strip).
fn right_tail_damped(params: &HestonParams, y: f64, alpha: f64) -> Result<f64> {
    let i = Complex64::i();
    let integral = invert(
        |u| {
            let w = Complex64::new(u, -alpha);
            let z = (-i * u * y).exp() * char_fn_unchecked(params, w) / Complex64::new(alpha, u);
            z.re
        },
        params,
    )?;
    Ok((-alpha * y).exp() / PI * integral)
}

/// `P(X_T < -y)` with damping `β > 0` into the left strip.
fn left_tail_damped(params: &HestonParams, y: f64, beta: f64) -> Result<f64> {
    let i = Complex64::i();
    let integral = invert(
        |u| {
            let w = Complex64::new(u, beta);
            let z = (i * u * y).exp() * char_fn_unchecked(params, w) / Complex64::new(beta, -u);
            z.re
        },
        params,
    )?;
    Ok((-beta * y).exp() / PI * integral)
}

/// Gil-Pelaez: `P(X_T > y) = ½ + (1/π)∫₀^∞ Im(e^{-iuy}φ(u))/u du`.
fn gil_pelaez(params: &HestonParams, y: f64) -> Result<f64> {
    let i = Complex64::i();
    let width = 2.0 / (params.v0.max(params.theta) * params.t).sqrt();
    let integral = integrate_to_infinity(
        |u| ((-i * u * y).exp() * char_fn_unchecked(params, Complex64::new(u, 0.0))).im / u,
        0.0,
        width,
        1e-14,
        1e-16,
    )?;
    Ok(0.5 + integral / PI)
}

/// `P(X_T > y)`.
///
/// Deep in either tail the contour is shifted to the saddle point of the moment generating
/// function so that tiny probabilities keep their relative accuracy.
pub fn tail(params: &HestonParams, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Ok(if y > 0.0 { 0.0 } else { 1.0 });
    }
    let cm = critical_moment(params);
    let alpha = damping(params, y, 1.0, cm.p_star);
    if alpha >= MIN_DAMPING {
        return Ok(right_tail_damped(params, y, alpha)?.max(0.0));
    }
    let beta = damping(params, -y, -1.0, cm.q_star);
    if beta >= MIN_DAMPING {
        return Ok((1.0 - left_tail_damped(params, -y, beta)?).clamp(0.0, 1.0));
    }
    Ok(gil_pelaez(params, y)?.clamp(0.0, 1.0))
}

/// `P(X_T < -y)`.
pub fn left_tail(params: &HestonParams, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Ok(if y > 0.0 { 0.0 } else { 1.0 });
    }
    let cm = critical_moment(params);
    let beta = damping(params, y, -1.0, cm.q_star);
    if beta >= MIN_DAMPING {
        return Ok(left_tail_damped(params, y, beta)?.max(0.0));
    }
    // P(X < -y) = 1 - P(X > -y) up to a null set.
    Ok((1.0 - tail(params, -y)?).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityPoint {
    pub y: f64,
    /// `max(raw, 0)`.
    pub density: f64,
    pub raw: f64,
    pub clipped: bool,
}

/// Density of `X_T` by Fourier inversion along the saddle-point contour.
pub fn density(params: &HestonParams, y_grid: &[f64]) -> Result<Vec<DensityPoint>> {
    let cm = critical_moment(params);
    let i = Complex64::i();
    y_grid
        .iter()
        .map(|&y| {
            // α ∈ (-q*, p*) minimising -αy + ln M(α).
            let lo = -(0.98 * cm.q_star).min(60.0);
            let hi = (0.98 * cm.p_star).min(60.0);
            let alpha = golden_min(|a| -a * y + ln_mgf(params, a), lo, hi);
            let integral = invert(
                |u| ((-i * u * y).exp() * char_fn_unchecked(params, Complex64::new(u, -alpha))).re,
                params,
            )?;
            let raw = (-alpha * y).exp() / PI * integral;
            Ok(DensityPoint {
                y,
                density: raw.max(0.0),
                raw,
                clipped: raw < 0.0,
            })
        })
        .collect()
}

/// Out-of-the-money price on `F0 = 1`: call for `k ≥ 0`, put for `k < 0`.
pub fn otm_price(params: &HestonParams, k: f64) -> Result<f64> {
    let cm = critical_moment(params);
    let i = Complex64::i();
    // Damping α of the call transform; the put corresponds to α < -1.
    let objective = |a: f64| -a * k + ln_mgf(params, a + 1.0) - (a * a + a).ln();
    let alpha = if k >= 0.0 {
        golden_min(objective, 1e-4, ((cm.p_star - 1.0) * 0.98).min(60.0))
    } else {
        golden_min(objective, -1.0 - (cm.q_star * 0.98).min(60.0), -1.0 - 1e-4)
    };
    let integral = invert(
        |u| {
            let w = Complex64::new(u, -(alpha + 1.0));
            let denom = Complex64::new(alpha * alpha + alpha - u * u, (2.0 * alpha + 1.0) * u);
            ((-i * u * k).exp() * char_fn_unchecked(params, w) / denom).re
        },
        params,
    )?;
    Ok(((-alpha * k).exp() / PI * integral).max(0.0))
}

/// Implied volatility smile from Fourier prices.
pub fn oracle_smile(params: &HestonParams, strikes: &[f64]) -> Result<Vec<SmilePoint>> {
    strikes
        .iter()
        .map(|&k| {
            let price = otm_price(params, k)?;
            Ok(SmilePoint {
                k,
                t: params.t,
                implied_vol: implied_vol_otm(price, 1.0, k, params.t)?,
                source: SmileSource::Oracle,
                vol_stderr: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;

    fn base() -> HestonParams {
        HestonParams::new(1.0, 0.09, 0.3, -0.5, 0.09, 1.0).unwrap()
    }

    #[test]
    fn normalisation_and_symmetry() {
        let p = base();
        let one = char_fn(&p, Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(one, Complex64::new(1.0, 0.0));
        for &(re, im) in &[(0.7, 0.0), (3.0, -0.4), (12.0, 0.8)] {
            let u = Complex64::new(re, im);
            let a = char_fn(&p, -u.conj()).unwrap();
            let b = char_fn(&p, u).unwrap().conj();
            assert!((a - b).norm() < 1e-14);
        }
        // martingale: E[e^X] = 1
        let m = char_fn(&p, Complex64::new(0.0, -1.0)).unwrap();
        assert!((m.re - 1.0).abs() < 1e-13 && m.im.abs() < 1e-13);
    }

    #[test]
    fn strip_violation() {
        let p = base();
        let cm = critical_moment(&p);
        assert!(matches!(
            char_fn(&p, Complex64::new(1.0, -(cm.p_star + 0.1))),
            Err(Error::OutsideStrip(_))
        ));
        assert!(char_fn(&p, Complex64::new(1.0, -(cm.p_star - 0.1))).is_ok());
    }

    #[test]
    fn reference_critical_moments() {
        let cm = critical_moment(&base());
        assert!((cm.p_star - 21.298_740_77).abs() < 1e-5);
        assert!((cm.q_star - 9.194_849_82).abs() < 1e-5);
        assert!(!cm.p_capped && !cm.q_capped);
        let pos = HestonParams { rho: 0.5, ..base() };
        let cp = critical_moment(&pos);
        assert!((cp.p_star - 9.961_539_1).abs() < 1e-5);
        assert!(cm.p_star > cp.p_star);
    }

    #[test]
    fn explosion_time_matches_ode_blowup() {
        // integrate the Riccati ODE for the moment until it blows up
        let p = base();
        let q = 25.0;
        let t_star = p.explosion_time(q);
        let (mut psi, mut t) = (0.0f64, 0.0);
        let h = 1e-6;
        let f = |s: f64| 0.5 * q * (q - 1.0) + (p.rho * p.xi * q - p.kappa) * s + 0.5 * p.xi * p.xi * s * s;
        while psi < 1e8 {
            let k1 = f(psi);
            let k2 = f(psi + 0.5 * h * k1);
            let k3 = f(psi + 0.5 * h * k2);
            let k4 = f(psi + h * k3);
            psi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        assert!((t - t_star).abs() < 1e-4, "{t} vs {t_star}");
    }

    #[test]
    fn small_vol_of_variance_caps_moments() {
        let p = HestonParams::new(1.0, 0.09, 1e-6, 0.0, 0.09, 1.0).unwrap();
        let cm = critical_moment(&p);
        assert!(cm.p_capped);
        assert_eq!(cm.p_star, MOMENT_CAP);
    }

    #[test]
    fn reference_tails() {
        let p = base();
        let right = [
            (0.25, 0.158_362_307_59),
            (0.5, 0.020_710_174_965_7),
            (0.75, 0.001_205_352_871_18),
            (1.0, 4.219_660_881_6e-5),
            (1.5, 2.251_012_5e-8),
            (2.0, 6.4758e-12),
            (2.5, 1.2978e-15),
        ];
        for &(y, want) in &right {
            let got = tail(&p, y).unwrap();
            assert!((got / want - 1.0).abs() < 1e-4, "y = {y}: {got} vs {want}");
        }
        let left = [
            (0.25, 0.228_929_408_05),
            (0.5, 0.079_201_056_5),
            (1.0, 0.006_118_530_8),
            (2.0, 1.437_511_7e-5),
            (3.0, 1.772_585_8e-8),
            (4.0, 1.516_048e-11),
        ];
        for &(y, want) in &left {
            let got = left_tail(&p, y).unwrap();
            assert!((got / want - 1.0).abs() < 1e-4, "y = {y}: {got} vs {want}");
        }
    }

    #[test]
    fn tail_limits_and_monotonicity() {
        let p = base();
        assert!((tail(&p, -5.0).unwrap() - 1.0).abs() < 1e-6);
        let mut prev = 1.0;
        for i in -40..=40 {
            let v = tail(&p, 0.05 * i as f64).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn density_consistency() {
        let p = base();
        let ys: Vec<f64> = (-300..=200).map(|i| 0.01 * i as f64).collect();
        let dens = density(&p, &ys).unwrap();
        let mass: f64 = dens
            .windows(2)
            .map(|w| 0.5 * 0.01 * (w[0].density + w[1].density))
            .sum();
        assert!((mass - 1.0).abs() < 1e-4, "mass {mass}");
        // ∫_y^∞ p = P(X > y)
        for &y in &[-0.5, 0.0, 0.4, 1.0] {
            let dens_at = |x: f64| density(&p, &[x]).unwrap()[0].raw;
            let integral = integrate(dens_at, y, 4.0, 1e-12, 1e-10).unwrap();
            assert!((integral - tail(&p, y).unwrap()).abs() < 1e-6, "y = {y}");
        }
    }

    #[test]
    fn mgf_reference() {
        let p = base();
        assert!((mgf(&p, 0.0) - 1.0).abs() < 1e-15);
        assert!((mgf(&p, 1.0) - 1.0).abs() < 1e-13);
        assert_eq!(mgf(&p, 30.0), f64::INFINITY);
    }

    #[test]
    fn otm_prices_match_black_at_tiny_vol_of_variance() {
        // ξ → 0, κ large, θ = V0: nearly Black with σ² = V0
        let p = HestonParams::new(5.0, 0.04, 1e-3, 0.0, 0.04, 1.0).unwrap();
        for &k in &[-0.5, -0.1, 0.0, 0.2, 0.6] {
            let price = otm_price(&p, k).unwrap();
            let bs = crate::pricing::bs_otm(1.0, k, 1.0, 0.2).unwrap();
            assert!((price - bs).abs() < 1e-5, "k = {k}: {price} vs {bs}");
        }
    }
}
