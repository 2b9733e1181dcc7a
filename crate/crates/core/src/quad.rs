//! Adaptive Gauss–Kronrod quadrature (7-point Gauss, 15-point Kronrod).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_SEGMENTS: usize = 4000;

/// One GK15 panel: `(kronrod estimate, |kronrod - gauss|)`. Differences at the rounding
/// level of `∫|f|` count as zero error, since splitting cannot reduce them.
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut resabs = WGK[7] * fc.abs();
    for j in 0..7 {
        let dx = h * XGK[j];
        let (f1, f2) = (f(c - dx), f(c + dx));
        let s = f1 + f2;
        kronrod += WGK[j] * s;
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let err = ((kronrod - gauss) * h).abs();
    let floor = 50.0 * f64::EPSILON * resabs * h.abs();
    (kronrod * h, if err <= floor { 0.0 } else { err })
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Integrates `f` over `[a, b]` until the error estimate is below
/// `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: v, err: e });
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.abs()) {
        if !total.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        if heap.len() >= MAX_SEGMENTS {
            return Err(Error::Quadrature(format!(
                "error estimate {err:e} above tolerance after {MAX_SEGMENTS} panels on [{a}, {b}]"
            )));
        }
        let worst = heap.pop().expect("heap never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel at floating-point resolution; accept what we have.
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        total += v1 + v2 - worst.value;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        });
        err = heap.iter().map(|p| p.err).sum();
    }
    // Re-sum to shed accumulated cancellation in the running total.
    Ok(heap.iter().map(|p| p.value).sum())
}

/// Integrates `f` over `[a, ∞)` on panels of doubling width, stopping once a panel
/// contributes less than `cutoff` in absolute value and the integrand at its right end is
/// below `cutoff` too.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    first_width: f64,
    abs_tol: f64,
    cutoff: f64,
) -> Result<f64> {
    let mut lo = a;
    let mut width = first_width;
    let mut total = 0.0;
    for _ in 0..200 {
        let hi = lo + width;
        let part = integrate(&mut f, lo, hi, abs_tol, 1e-12)?;
        total += part;
        if part.abs() < cutoff && f(hi).abs() < cutoff {
            return Ok(total);
        }
        lo = hi;
        width *= 2.0;
    }
    Err(Error::Quadrature(format!(
        "integrand still above {cutoff:e} at u = {lo:e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((v - (64.0 / 6.0 - 1.0 / 6.0 - 9.0)).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_and_peaked() {
        let v = integrate(|x| (50.0 * x).cos(), 0.0, 1.0, 1e-13, 1e-13).unwrap();
        assert!((v - 50f64.sin() / 50.0).abs() < 1e-12);
        let v = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10, 1e-12).unwrap();
        assert!((v - 2.0 * 100.0 * 100f64.atan()).abs() < 1e-8);
    }

    #[test]
    fn semi_infinite() {
        let v = integrate_to_infinity(|x| (-x).exp(), 0.0, 1.0, 1e-15, 1e-16).unwrap();
        assert!((v - 1.0).abs() < 1e-13);
        let v = integrate_to_infinity(|x| (-x * x).exp(), 0.0, 0.5, 1e-15, 1e-16).unwrap();
        assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }
}
