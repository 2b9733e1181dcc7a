//! Black prices on the forward, implied volatility and Lee's moment formula.
//!
//! Log-strikes are relative to the forward: the strike is `F0·e^k`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::logbound::DoubleDouble;
use crate::stats::{linear_fit, norm_cdf, norm_pdf};

fn d12(k: f64, t: f64, sigma: f64) -> (f64, f64) {
    let s = sigma * t.sqrt();
    let d1 = (-k + 0.5 * s * s) / s;
    (d1, d1 - s)
}

fn check_inputs(f0: f64, t: f64, sigma: f64) -> Result<()> {
    if !(f0 > 0.0 && f0.is_finite()) {
        return Err(invalid(format!("forward must be positive, got {f0}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("maturity must be positive, got {t}")));
    }
    if !(sigma >= 0.0) {
        return Err(invalid(format!("volatility must be non-negative, got {sigma}")));
    }
    Ok(())
}

/// Undiscounted Black call on the forward.
pub fn bs_call(f0: f64, k: f64, t: f64, sigma: f64) -> Result<f64> {
    check_inputs(f0, t, sigma)?;
    if sigma == 0.0 {
        return Ok((f0 * (1.0 - k.exp())).max(0.0));
    }
    if sigma.is_infinite() {
        return Ok(f0);
    }
    let (d1, d2) = d12(k, t, sigma);
    Ok((f0 * (norm_cdf(d1) - k.exp() * norm_cdf(d2))).max(0.0))
}

/// Undiscounted Black put on the forward.
pub fn bs_put(f0: f64, k: f64, t: f64, sigma: f64) -> Result<f64> {
    check_inputs(f0, t, sigma)?;
    if sigma == 0.0 {
        return Ok((f0 * (k.exp() - 1.0)).max(0.0));
    }
    if sigma.is_infinite() {
        return Ok(f0 * k.exp());
    }
    let (d1, d2) = d12(k, t, sigma);
    Ok((f0 * (k.exp() * norm_cdf(-d2) - norm_cdf(-d1))).max(0.0))
}

/// Price of the out-of-the-money option: call for `k ≥ 0`, put otherwise.
pub fn bs_otm(f0: f64, k: f64, t: f64, sigma: f64) -> Result<f64> {
    if k >= 0.0 {
        bs_call(f0, k, t, sigma)
    } else {
        bs_put(f0, k, t, sigma)
    }
}

/// Vega `∂C/∂σ` (identical for calls and puts).
pub fn bs_vega(f0: f64, k: f64, t: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let (d1, _) = d12(k, t, sigma);
    f0 * norm_pdf(d1) * t.sqrt()
}

const SIGMA_CEILING: f64 = 1e3;

/// Inverts an out-of-the-money price by bisection on the log-price, then one Newton step.
pub fn implied_vol_otm(price: f64, f0: f64, k: f64, t: f64) -> Result<f64> {
    check_inputs(f0, t, 0.0)?;
    let upper = if k >= 0.0 { f0 } else { f0 * k.exp() };
    if !(price >= 0.0 && price < upper) {
        return Err(Error::Arbitrage {
            price,
            lower: 0.0,
            upper,
        });
    }
    if price == 0.0 {
        return Ok(0.0);
    }
    let target = price.ln();
    let g = |s: f64| -> f64 { bs_otm(f0, k, t, s).map(|p| p.ln()).unwrap_or(f64::NEG_INFINITY) - target };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > SIGMA_CEILING {
            return Err(Error::Arbitrage {
                price,
                lower: 0.0,
                upper,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    let mut s = 0.5 * (lo + hi);
    // Newton polish in log-price: d ln P / dσ = vega / P.
    let p = bs_otm(f0, k, t, s)?;
    let vega = bs_vega(f0, k, t, s);
    if p > 0.0 && vega > 0.0 {
        let cand = s - g(s) * p / vega;
        if cand > lo && cand < hi && g(cand).abs() <= g(s).abs() {
            s = cand;
        }
    }
    Ok(s)
}

/// Implied volatility of an undiscounted call price.
pub fn implied_vol(price: f64, f0: f64, k: f64, t: f64) -> Result<f64> {
    check_inputs(f0, t, 0.0)?;
    let intrinsic = (f0 * (1.0 - k.exp())).max(0.0);
    if !(price >= intrinsic && price < f0) {
        return Err(Error::Arbitrage {
            price,
            lower: intrinsic,
            upper: f0,
        });
    }
    let otm = if k >= 0.0 {
        price
    } else {
        (price - f0 + f0 * k.exp()).max(0.0)
    };
    implied_vol_otm(otm, f0, k, t)
}

/// Implied volatility of an undiscounted put price.
pub fn implied_vol_put(price: f64, f0: f64, k: f64, t: f64) -> Result<f64> {
    check_inputs(f0, t, 0.0)?;
    let strike = f0 * k.exp();
    let intrinsic = (strike - f0).max(0.0);
    if !(price >= intrinsic && price < strike) {
        return Err(Error::Arbitrage {
            price,
            lower: intrinsic,
            upper: strike,
        });
    }
    let otm = if k < 0.0 { price } else { (price + f0 - strike).max(0.0) };
    implied_vol_otm(otm, f0, k, t)
}

/// `φ(x) = 2 - 4(√(x²+x) - x)`, with `φ(∞) = 0`.
pub fn lee_phi(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid(format!("lee_phi needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(2.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    // Same function without the cancellation.
    let s = 1.0 + (1.0 + 1.0 / x).sqrt();
    Ok(2.0 / (x * s * s))
}

/// `ln φ(x)` given `ln x`, usable when `x` itself overflows.
pub fn lee_phi_ln(ln_x: DoubleDouble) -> DoubleDouble {
    if ln_x.hi < 30.0 {
        let x = ln_x.to_f64().exp();
        return DoubleDouble::from_f64(lee_phi(x).map(f64::ln).unwrap_or(f64::NAN));
    }
    let inv = (-ln_x.to_f64()).exp();
    let s = 1.0 + (1.0 + inv).sqrt();
    (-ln_x).add_f64(std::f64::consts::LN_2 - 2.0 * s.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SmileSource {
    Mc,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmilePoint {
    pub k: f64,
    pub t: f64,
    pub implied_vol: f64,
    pub source: SmileSource,
    /// Monte Carlo standard error mapped through vega, when available.
    pub vol_stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(min |k|, max |k|)` of the points fitted.
    pub window: (f64, f64),
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WingSlopes {
    pub right: WingFit,
    pub left: WingFit,
}

impl WingSlopes {
    /// Whether each slope is at least the given `(right, left)` floor, compared in logs.
    pub fn meets_floors(&self, floors: (crate::LogValue, crate::LogValue)) -> (bool, bool) {
        let ok = |slope: f64, floor: crate::LogValue| slope > 0.0 && DoubleDouble::from_f64(slope.ln()) >= floor.ln;
        (ok(self.right.slope, floors.0), ok(self.left.slope, floors.1))
    }
}

fn fit_wing(points: &[&SmilePoint]) -> Result<WingFit> {
    let xs: Vec<f64> = points.iter().map(|p| p.k.abs()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.t * p.implied_vol * p.implied_vol).collect();
    let fit = linear_fit(&xs, &ys)?;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(0.0, f64::max);
    Ok(WingFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        window: (lo, hi),
        n_points: points.len(),
    })
}

/// Fits total implied variance `Tσ²` against `|k|` on each wing beyond `k_min_abs`.
pub fn wing_slopes(smile: &[SmilePoint], k_min_abs: f64) -> Result<WingSlopes> {
    let right: Vec<&SmilePoint> = smile.iter().filter(|p| p.k >= k_min_abs).collect();
    let left: Vec<&SmilePoint> = smile.iter().filter(|p| p.k <= -k_min_abs).collect();
    if right.len() < 3 || left.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "wings beyond |k| = {k_min_abs} have {} right and {} left points, need 3 each",
            right.len(),
            left.len()
        )));
    }
    Ok(WingSlopes {
        right: fit_wing(&right)?,
        left: fit_wing(&left)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedStrike {
    pub k: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSmile {
    pub points: Vec<SmilePoint>,
    pub dropped: Vec<DroppedStrike>,
}

/// Implied volatilities of Monte Carlo call prices `mean((e^{X_T} - e^k)⁺)` on `F0 = 1`.
pub fn smile_from_mc(terminal_x: &[f64], horizon: f64, strikes: &[f64]) -> McSmile {
    let n = terminal_x.len() as f64;
    let mut out = McSmile {
        points: Vec::new(),
        dropped: Vec::new(),
    };
    for &k in strikes {
        if terminal_x.is_empty() {
            out.dropped.push(DroppedStrike {
                k,
                reason: "empty batch".into(),
            });
            continue;
        }
        let ek = k.exp();
        let (mut s, mut s2) = (Neumaier::default(), Neumaier::default());
        for &x in terminal_x {
            let pay = (x.exp() - ek).max(0.0);
            s.add(pay);
            s2.add(pay * pay);
        }
        let (s, s2) = (s.value(), s2.value());
        let mut price = s / n;
        if price == 0.0 {
            out.dropped.push(DroppedStrike {
                k,
                reason: "zero MC price".into(),
            });
            continue;
        }
        let intrinsic = (1.0 - ek).max(0.0);
        if price < intrinsic && intrinsic - price <= 4.0 * f64::EPSILON * intrinsic {
            // summation rounding on a degenerate payoff
            price = intrinsic;
        }
        let se = ((s2 / n - price * price).max(0.0) / n).sqrt();
        match implied_vol(price, 1.0, k, horizon) {
            Ok(vol) => {
                let vega = bs_vega(1.0, k, horizon, vol);
                out.points.push(SmilePoint {
                    k,
                    t: horizon,
                    implied_vol: vol,
                    source: SmileSource::Mc,
                    vol_stderr: (vega > 0.0).then(|| se / vega),
                });
            }
            Err(e) => out.dropped.push(DroppedStrike {
                k,
                reason: format!("outside no-arbitrage band: {e}"),
            }),
        }
    }
    out
}

/// Compensated summation, so that degenerate payoffs average back to their exact value.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
