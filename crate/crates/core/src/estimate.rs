//! Monte Carlo estimators for the events and moments the bounds speak about.
//!
//! Tube membership is checked at grid points only, which biases the estimate upwards
//! relative to the continuous-time event; every tube estimate is grid-restricted.

use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::curves::CurveTriple;
use crate::error::{invalid, Error, Result};
use crate::model::ModelSpec;
use crate::simulate::{map_paths, PathBatch, PathNoise, Scheme, SimulationPlan};
use crate::stats::linear_fit;

/// Binomial estimate with an exact 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: u64,
    pub hits: u64,
}

/// `x` with `I_x(a, b) = target`, by bisection (`I` increasing in `x`).
fn beta_quantile(a: f64, b: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..1100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl MCEstimate {
    /// Clopper–Pearson interval at level 95%.
    pub fn from_counts(hits: u64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InsufficientData("no samples".into()));
        }
        if hits > n {
            return Err(invalid(format!("hits {hits} exceed sample count {n}")));
        }
        let alpha = 0.05;
        let (h, nf) = (hits as f64, n as f64);
        let ci_low = if hits == 0 {
            0.0
        } else {
            beta_quantile(h, nf - h + 1.0, 0.5 * alpha)
        };
        let ci_high = if hits == n {
            1.0
        } else {
            beta_quantile(h + 1.0, nf - h, 1.0 - 0.5 * alpha)
        };
        let p_hat = h / nf;
        Ok(Self {
            p_hat,
            ci_low: ci_low.min(p_hat),
            ci_high: ci_high.max(p_hat),
            n,
            hits,
        })
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Whether the path stays within `scale·R̃_t` of `(x̃_t, ṽ_t)` at every grid point.
pub fn in_tube(curve: &CurveTriple, scale: f64, xs: &[f64], vs: &[f64]) -> bool {
    xs.iter().zip(vs).enumerate().all(|(k, (&x, &v))| {
        let dx = x - curve.x_tilde[k];
        let dv = v - curve.v_tilde[k];
        let r = scale * curve.r_tilde[k];
        dx * dx + dv * dv <= r * r
    })
}

fn check_grid(batch_grid: &[f64], curve: &CurveTriple) -> Result<()> {
    if batch_grid.len() != curve.grid.len() {
        return Err(Error::GridMismatch(format!(
            "batch has {} knots, curve has {}",
            batch_grid.len(),
            curve.grid.len()
        )));
    }
    for (a, b) in batch_grid.iter().zip(&curve.grid) {
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            return Err(Error::GridMismatch(format!("knot {a} differs from {b}")));
        }
    }
    Ok(())
}

/// Fraction of stored paths inside the tube around `curve` (grid-restricted).
pub fn tube_probability(batch: &PathBatch, curve: &CurveTriple) -> Result<MCEstimate> {
    if batch.n_paths == 0 {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    check_grid(&batch.grid, curve)?;
    let hits = (0..batch.n_paths)
        .filter(|&i| in_tube(curve, 1.0, batch.path_x(i), batch.path_v(i)))
        .count();
    MCEstimate::from_counts(hits as u64, batch.n_paths as u64)
}

/// Tube estimates for several curves and radius scales from one streamed simulation.
/// Entry `[c][s]` is curve `c` with radius scaled by `scales[s]`.
pub fn tube_probabilities_streaming(
    spec: &ModelSpec,
    plan: &SimulationPlan,
    curves: &[CurveTriple],
    scales: &[f64],
) -> Result<Vec<Vec<MCEstimate>>> {
    let grid = plan.grid();
    for c in curves {
        check_grid(&grid, c)?;
    }
    let flags = map_paths(spec, plan, |_, xs, vs| {
        curves
            .iter()
            .flat_map(|c| scales.iter().map(move |&s| in_tube(c, s, xs, vs)))
            .collect::<Vec<bool>>()
    })?;
    let width = scales.len();
    let mut counts = vec![0u64; curves.len() * width];
    for f in &flags {
        for (c, &hit) in counts.iter_mut().zip(f) {
            *c += hit as u64;
        }
    }
    let n = plan.n_paths as u64;
    counts
        .chunks(width.max(1))
        .map(|row| row.iter().map(|&h| MCEstimate::from_counts(h, n)).collect())
        .collect()
}

/// Estimates of `P(X_T > y)` and `P(X_T < -y)`.
pub fn terminal_tail(terminal_x: &[f64], y: f64) -> Result<(MCEstimate, MCEstimate)> {
    if !(y > 0.0) {
        return Err(invalid(format!("tail level must be positive, got {y}")));
    }
    let up = terminal_x.iter().filter(|&&x| x > y).count() as u64;
    let down = terminal_x.iter().filter(|&&x| x < -y).count() as u64;
    let n = terminal_x.len() as u64;
    Ok((MCEstimate::from_counts(up, n)?, MCEstimate::from_counts(down, n)?))
}

/// Estimate of `P(|(X_T, V_T) - (y, |y| + V0)| ≤ radius)`.
pub fn small_ball(terminal_x: &[f64], terminal_v: &[f64], y: f64, v0: f64, radius: f64) -> Result<MCEstimate> {
    if !(radius > 0.0) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    if terminal_x.len() != terminal_v.len() {
        return Err(invalid("terminal x and v lengths differ"));
    }
    let vt = y.abs() + v0;
    let hits = terminal_x
        .iter()
        .zip(terminal_v)
        .filter(|(&x, &v)| {
            let (dx, dv) = (x - y, v - vt);
            dx * dx + dv * dv <= radius * radius
        })
        .count() as u64;
    MCEstimate::from_counts(hits, terminal_x.len() as u64)
}

/// Least-squares fit of `ln p̂` against `y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    /// `(y, ln p̂)` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
    /// Levels left out for having fewer than `min_hits` hits.
    pub excluded: Vec<f64>,
}

/// Default minimum hit count for a tail level to enter a slope fit.
pub const DEFAULT_MIN_HITS: u64 = 30;

pub fn tail_slope(tails: &[(f64, MCEstimate)], min_hits: u64) -> Result<SlopeFit> {
    let (used, excluded): (Vec<_>, Vec<_>) = tails.iter().partition(|(_, e)| e.hits >= min_hits && e.hits > 0);
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} levels with at least {min_hits} hits, need 3",
            used.len()
        )));
    }
    let points: Vec<(f64, f64)> = used.iter().map(|(y, e)| (*y, e.p_hat.ln())).collect();
    let fit = fit_log_points(&points)?;
    Ok(SlopeFit {
        excluded: excluded.iter().map(|(y, _)| *y).collect(),
        ..fit
    })
}

/// Slope fit on precomputed `(y, ln p)` pairs.
pub fn fit_log_points(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(SlopeFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_stderr: fit.slope_stderr,
        r_squared: fit.r_squared,
        points: points.to_vec(),
        excluded: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpMoment {
    pub estimate: f64,
    pub std_error: f64,
    /// Largest single-path share of the sum.
    pub max_share: f64,
    /// Set when `max_share > 0.01`.
    pub unreliable: bool,
}

/// Sample mean of `e^{pX_T}` with a heavy-tail diagnostic.
pub fn exp_moment(terminal_x: &[f64], p: f64) -> ExpMoment {
    let n = terminal_x.len() as f64;
    let vals: Vec<f64> = terminal_x.iter().map(|&x| (p * x).exp()).collect();
    let sum: f64 = vals.iter().sum();
    let max = vals.iter().copied().fold(0.0, f64::max);
    let mean = sum / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let max_share = max / sum;
    ExpMoment {
        estimate: mean,
        std_error: (var / n).sqrt(),
        max_share,
        unreliable: max_share > 0.01,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub p: u32,
    pub exponent: f64,
    pub exponent_stderr: f64,
    /// `(dt, E[sup|V_r - V_0|^{2p}])`.
    pub points: Vec<(f64, f64)>,
}

/// Sub-steps used to resolve the supremum over each increment window.
pub const SCALING_SUBSTEPS: usize = 100;

/// Log-log slope of `E[sup_{r ≤ dt}|V_r - V_0|^{2p}]` against `dt`, started at `(0, V0)`.
pub fn increment_scaling(
    spec: &ModelSpec,
    p: u32,
    dts: &[f64],
    n: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<ScalingFit> {
    if p < 1 {
        return Err(invalid("moment order must be at least 1"));
    }
    if dts.len() < 3 {
        return Err(Error::InsufficientData(format!("{} durations, need 3", dts.len())));
    }
    let lo = dts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = dts.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0 && hi / lo >= 10.0 && hi <= spec.horizon) {
        return Err(invalid("durations must be positive, at most T and span a decade"));
    }
    let mut points = Vec::with_capacity(dts.len());
    for (i, &dt) in dts.iter().enumerate() {
        let plan = SimulationPlan {
            t_end: dt,
            ..SimulationPlan::new(spec, n, SCALING_SUBSTEPS, seed.wrapping_add(i as u64), scheme)
        };
        let sups = map_paths(spec, &plan, |_, _, vs| {
            vs.iter()
                .map(|v| (v - vs[0]).abs())
                .fold(0.0, f64::max)
                .powi(2 * p as i32)
        })?;
        points.push((dt, sups.iter().sum::<f64>() / n as f64));
    }
    let xs: Vec<f64> = points.iter().map(|q| q.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|q| q.1.ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(ScalingFit {
        p,
        exponent: fit.slope,
        exponent_stderr: fit.slope_stderr,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Bandwidth {
    Silverman,
    Fixed(f64),
}

/// Minimum sample count for a density estimate.
pub const KDE_MIN_SAMPLES: usize = 10_000;
/// Samples within three bandwidths needed to report a log-density.
pub const KDE_MIN_EFFECTIVE: usize = 30;

fn silverman(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let q = |f: f64| sorted[((n - 1.0) * f).round() as usize];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel estimate of `ln p(y)`; `NaN` where fewer than 30 samples lie within three
/// bandwidths.
pub fn kde_log_density(samples: &[f64], y_grid: &[f64], bandwidth: Bandwidth) -> Result<Vec<(f64, f64)>> {
    if y_grid.is_empty() {
        return Err(invalid("empty evaluation grid"));
    }
    if samples.len() < KDE_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, need {KDE_MIN_SAMPLES}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = match bandwidth {
        Bandwidth::Silverman => silverman(&sorted),
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("bandwidth must be positive, got {h}")));
    }
    let n = sorted.len() as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(y_grid
        .iter()
        .map(|&y| {
            let lo = sorted.partition_point(|&x| x < y - 8.0 * h);
            let hi = sorted.partition_point(|&x| x <= y + 8.0 * h);
            let near = sorted.partition_point(|&x| x <= y + 3.0 * h) - sorted.partition_point(|&x| x < y - 3.0 * h);
            if near < KDE_MIN_EFFECTIVE {
                return (y, f64::NAN);
            }
            let s: f64 = sorted[lo..hi]
                .iter()
                .map(|&x| {
                    let z = (x - y) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            (y, (s * norm).ln())
        })
        .collect())
}

/// Monte Carlo estimate of a real-valued mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

/// `P(sup_{u≤1} |b_u| ≤ a)` by simulation on `steps` knots, each path weighted by the
/// Brownian-bridge probability of not touching `±a` between knots.
pub fn abs_brownian_sup_mc(a: f64, n: usize, steps: usize, seed: u64) -> Result<MeanEstimate> {
    use rayon::prelude::*;
    if !(a > 0.0) || n < 2 || steps < 1 {
        return Err(invalid("need a > 0, n >= 2 and steps >= 1"));
    }
    let dt = 1.0 / steps as f64;
    let sdt = dt.sqrt();
    let weights: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut noise = PathNoise::new(seed, i);
            let mut b = 0.0f64;
            let mut log_w = 0.0f64;
            let mut k = 0;
            while k < steps {
                let (z1, z2) = noise.pair();
                for z in [z1, z2] {
                    if k == steps {
                        break;
                    }
                    let nb = b + sdt * z;
                    if nb.abs() >= a {
                        return 0.0;
                    }
                    // Bridge crossing of either barrier, first-order in the double crossing.
                    let up = (-2.0 * (a - b) * (a - nb) / dt).exp();
                    let down = (-2.0 * (a + b) * (a + nb) / dt).exp();
                    let stay = 1.0 - up - down;
                    if stay <= 0.0 {
                        return 0.0;
                    }
                    log_w += stay.ln();
                    b = nb;
                    k += 1;
                }
            }
            log_w.exp()
        })
        .collect();
    let nf = n as f64;
    let mean = weights.iter().sum::<f64>() / nf;
    let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (nf - 1.0);
    Ok(MeanEstimate {
        mean,
        std_error: (var / nf).sqrt(),
        n: n as u64,
    })
}
