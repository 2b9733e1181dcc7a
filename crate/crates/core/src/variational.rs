//! Discrete minimisation of the action `∫₀ᵀ (v'²/v + v) dt` with fixed endpoints.
//!
//! Used as an independent check that the closed-form curve is the minimiser: the discrete
//! action is minimised over the interior knots by damped Newton iteration.

use serde::Serialize;

use crate::curves::uniform_grid;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl DiscreteCurve {
    /// Values on the uniform grid of `[0, horizon]`.
    pub fn new(horizon: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid("a curve needs at least two knots"));
        }
        if !(horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(invalid(format!("curve values must be positive, found {v}")));
        }
        Ok(Self {
            grid: uniform_grid(horizon, values.len() - 1),
            values,
        })
    }

    /// Samples `f` on `n` uniform steps.
    pub fn from_fn(horizon: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(horizon, uniform_grid(horizon, n).into_iter().map(f).collect())
    }

    /// Straight line from `a` to `b`.
    pub fn line(horizon: f64, n: usize, a: f64, b: f64) -> Result<Self> {
        Self::from_fn(horizon, n, |t| a + (b - a) * t / horizon)
    }

    pub fn dt(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }
}

/// Trapezoid value of the action with forward-difference slopes on the cells.
pub fn action(curve: &DiscreteCurve) -> f64 {
    action_of(&curve.values, curve.dt())
}

fn action_of(v: &[f64], dt: f64) -> f64 {
    v.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let d = b - a;
            0.5 * d * d / dt * (1.0 / a + 1.0 / b) + 0.5 * dt * (a + b)
        })
        .sum()
}

/// Max over interior knots of `|v''/v' - v'/(2v) - v/(2v')|` with central differences.
pub fn el_residual(curve: &DiscreteCurve) -> Result<f64> {
    let v = &curve.values;
    if v.len() < 3 {
        return Err(invalid("need at least one interior knot"));
    }
    let dt = curve.dt();
    let mut worst = 0.0f64;
    for i in 1..v.len() - 1 {
        let d1 = (v[i + 1] - v[i - 1]) / (2.0 * dt);
        if d1.abs() < 1e-12 {
            return Err(invalid(format!("derivative vanishes at knot {i}")));
        }
        let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dt * dt);
        worst = worst.max((d2 / d1 - d1 / (2.0 * v[i]) - v[i] / (2.0 * d1)).abs());
    }
    Ok(worst)
}

/// The residual of [`el_residual`] divided pointwise by the sum of the magnitudes of its
/// three terms.
pub fn el_residual_relative(curve: &DiscreteCurve) -> Result<f64> {
    let v = &curve.values;
    if v.len() < 3 {
        return Err(invalid("need at least one interior knot"));
    }
    let dt = curve.dt();
    let mut worst = 0.0f64;
    for i in 1..v.len() - 1 {
        let d1 = (v[i + 1] - v[i - 1]) / (2.0 * dt);
        if d1.abs() < 1e-12 {
            return Err(invalid(format!("derivative vanishes at knot {i}")));
        }
        let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dt * dt);
        let terms = [d2 / d1, d1 / (2.0 * v[i]), v[i] / (2.0 * d1)];
        let scale: f64 = terms.iter().map(|x| x.abs()).sum();
        worst = worst.max((terms[0] - terms[1] - terms[2]).abs() / scale);
    }
    Ok(worst)
}

/// Gradient and tridiagonal Hessian of the discrete action in the interior knots.
fn derivatives(v: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = v.len() - 2;
    let mut g = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m.saturating_sub(1)];
    let k = 1.0 / (2.0 * dt);
    for c in 0..v.len() - 1 {
        let (a, b) = (v[c], v[c + 1]);
        let d = b - a;
        let w = d * d;
        let s = 1.0 / a + 1.0 / b;
        let ga = k * (-2.0 * d * s - w / (a * a)) + 0.5 * dt;
        let gb = k * (2.0 * d * s - w / (b * b)) + 0.5 * dt;
        let haa = k * (2.0 * s + 4.0 * d / (a * a) + 2.0 * w / (a * a * a));
        let hbb = k * (2.0 * s - 4.0 * d / (b * b) + 2.0 * w / (b * b * b));
        let hab = k * (-2.0 * s + 2.0 * d / (b * b) - 2.0 * d / (a * a));
        // knot c is unknown c-1, knot c+1 is unknown c
        if c >= 1 {
            g[c - 1] += ga;
            diag[c - 1] += haa;
        }
        if c < m {
            g[c] += gb;
            diag[c] += hbb;
        }
        if c >= 1 && c < m {
            off[c - 1] += hab;
        }
    }
    (g, diag, off)
}

/// Solves the symmetric tridiagonal system; `None` if a pivot is not positive.
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut piv = diag[0];
    if !(piv > 0.0) {
        return None;
    }
    c[0] = if m > 1 { off[0] / piv } else { 0.0 };
    d[0] = rhs[0] / piv;
    for i in 1..m {
        piv = diag[i] - off[i - 1] * c[i - 1];
        if !(piv > 0.0) {
            return None;
        }
        if i < m - 1 {
            c[i] = off[i] / piv;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / piv;
    }
    for i in (0..m - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Minimized {
    pub curve: DiscreteCurve,
    pub iterations: usize,
    pub gradient_norm: f64,
}

pub const MAX_ITERATIONS: usize = 500;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;

/// Local minimiser of the discrete action with endpoints `V0` and `ȳ`, starting from
/// `init`. Positivity is kept by halving steps.
pub fn minimize_action(v0: f64, y_bar: f64, horizon: f64, n: usize, init: &DiscreteCurve) -> Result<Minimized> {
    if !(v0 > 0.0 && y_bar >= v0) {
        return Err(invalid(format!("need y_bar >= V0 > 0, got V0 = {v0}, y_bar = {y_bar}")));
    }
    if init.values.len() != n + 1 || (init.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(invalid("initial curve does not match the requested grid"));
    }
    if n < 2 {
        return Err(invalid("need at least one interior knot"));
    }
    let last = init.values.len() - 1;
    if (init.values[0] - v0).abs() > 1e-12 * v0 || (init.values[last] - y_bar).abs() > 1e-12 * y_bar {
        return Err(invalid("initial curve has the wrong endpoints"));
    }
    let dt = init.dt();
    let mut v = init.values.clone();
    v[0] = v0;
    v[last] = y_bar;
    let mut current = action_of(&v, dt);
    let mut iterations = 0;
    loop {
        let (g, diag, off) = derivatives(&v, dt);
        let gnorm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if gnorm <= GRADIENT_TOLERANCE {
            return Ok(Minimized {
                curve: DiscreteCurve {
                    grid: init.grid.clone(),
                    values: v,
                },
                iterations,
                gradient_norm: gnorm,
            });
        }
        if iterations == MAX_ITERATIONS {
            return Err(Error::NoConvergence {
                iterations,
                residual: gnorm,
                last_iterate: v,
            });
        }
        iterations += 1;
        let neg_g: Vec<f64> = g.iter().map(|x| -x).collect();
        let step = solve_tridiagonal(&diag, &off, &neg_g)
            .filter(|s| s.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() < 0.0)
            .unwrap_or(neg_g);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = v
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    if i == 0 || i == last {
                        x
                    } else {
                        x + lambda * step[i - 1]
                    }
                })
                .collect();
            if trial.iter().all(|&x| x > 0.0) {
                let a = action_of(&trial, dt);
                // Near the optimum the action is flat to rounding; accept non-increasing steps.
                if a <= current + 1e-14 * current.abs() {
                    v = trial;
                    current = a;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations,
                residual: gnorm,
                last_iterate: v,
            });
        }
    }
}
