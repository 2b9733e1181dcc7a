//! Small statistical helpers: normal distribution, least squares, Brownian sup law.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;
use serde::Serialize;

use crate::error::{Error, Result};

/// Standard normal cdf, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::InvalidParameter("x and y lengths differ".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} points, need at least 2")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let slope_stderr = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
    })
}

/// `P(sup_{u≤1} |b_u| ≤ a)` for a standard Brownian motion `b`.
///
/// Uses the theta-function series for small `a` and the method-of-images series for large
/// `a`; both are truncated once terms drop below `1e-16`.
pub fn abs_brownian_sup_cdf(a: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    if a.is_infinite() {
        return 1.0;
    }
    if a < 1.0 {
        let mut sum = 0.0;
        for k in 0..1000 {
            let m = (2 * k + 1) as f64;
            let term = (-m * m * PI * PI / (8.0 * a * a)).exp() / m;
            sum += if k % 2 == 0 { term } else { -term };
            if term < 1e-16 {
                break;
            }
        }
        (4.0 / PI * sum).clamp(0.0, 1.0)
    } else {
        // 1 - P = 2 Σ_{k≥1} (-1)^{k+1} P(|N| ≥ (2k-1)a)
        let mut exceed = 0.0;
        for k in 1..1000 {
            let m = (2 * k - 1) as f64;
            let term = 2.0 * erfc(m * a * FRAC_1_SQRT_2);
            exceed += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (1.0 - exceed).clamp(0.0, 1.0)
    }
}

/// Natural log of [`abs_brownian_sup_cdf`], accurate where the probability underflows.
pub fn abs_brownian_sup_log_cdf(a: f64) -> f64 {
    if a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if a >= 0.5 {
        return abs_brownian_sup_cdf(a).ln();
    }
    // Factor out the leading theta term; the remainder is 1 - e^{-π²/a²}/3 + ...
    let lead = -PI * PI / (8.0 * a * a);
    let mut rest = 1.0;
    for k in 1..50 {
        let m = (2 * k + 1) as f64;
        let term = (-(m * m - 1.0) * PI * PI / (8.0 * a * a)).exp() / m;
        rest += if k % 2 == 0 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (4.0 / PI).ln() + lead + rest.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-14);
        // Lower tail stays relatively accurate.
        let v = norm_cdf(-10.0);
        assert!((v / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 0.5).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-14);
        assert!((fit.intercept - 0.5).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_fits() {
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn brownian_sup_series_agree_at_switch() {
        // Both representations are exact; evaluate each on the other's side.
        for &a in &[0.6, 0.9, 1.0, 1.3] {
            let mut theta = 0.0;
            for k in 0..200 {
                let m = (2 * k + 1) as f64;
                let t = (-m * m * PI * PI / (8.0 * a * a)).exp() / m;
                theta += if k % 2 == 0 { t } else { -t };
            }
            theta *= 4.0 / PI;
            let mut images = 1.0;
            for k in 1..200 {
                let m = (2 * k - 1) as f64;
                let t = 2.0 * erfc(m * a * FRAC_1_SQRT_2);
                images -= if k % 2 == 1 { t } else { -t };
            }
            assert!((theta - images).abs() < 1e-14, "a = {a}");
            assert!((abs_brownian_sup_cdf(a) - theta).abs() < 1e-14);
        }
    }

    #[test]
    fn brownian_sup_log_cdf() {
        for &a in &[0.2, 0.35, 0.49, 0.5, 0.8, 2.0] {
            let direct = abs_brownian_sup_cdf(a).ln();
            assert!(
                (abs_brownian_sup_log_cdf(a) - direct).abs() < 1e-12 * direct.abs().max(1.0),
                "a = {a}"
            );
        }
        let tiny = abs_brownian_sup_log_cdf(1e-4);
        assert!((tiny - ((4.0 / PI).ln() - PI * PI / 8e-8)).abs() < 1e-6 * tiny.abs());
    }

    #[test]
    fn brownian_sup_limits() {
        assert_eq!(abs_brownian_sup_cdf(0.0), 0.0);
        assert!(abs_brownian_sup_cdf(0.05) < 1e-100);
        assert!(((1.0 - abs_brownian_sup_cdf(8.0)) / 2.488_384_229_708_714e-15 - 1.0).abs() < 0.05);
        let mut prev = 0.0;
        for i in 1..100 {
            let p = abs_brownian_sup_cdf(0.05 * i as f64);
            assert!(p >= prev);
            prev = p;
        }
    }
}
