//! Euler Monte Carlo for the LSV system with reproducible per-path noise.
//!
//! Every path owns a ChaCha8 stream selected by its index, and step `k` consumes exactly
//! two 64-bit words at a fixed position of that stream, so the noise is a pure function of
//! `(seed, path, step, component)`. Results do not depend on the number of worker threads.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Coefficients see `max(v, 0)`; the raw iterate may go negative.
    #[default]
    EulerFullTruncation,
    /// The iterate is replaced by its absolute value after every step.
    EulerReflection,
}

impl Scheme {
    pub fn id(self) -> u8 {
        match self {
            Scheme::EulerFullTruncation => 0,
            Scheme::EulerReflection => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Scheme::EulerFullTruncation),
            1 => Ok(Scheme::EulerReflection),
            _ => Err(invalid(format!("unknown scheme id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::EulerFullTruncation => "euler_full_truncation",
            Scheme::EulerReflection => "euler_reflection",
        }
    }
}

/// Default number of steps: 400 per unit of time, at least 400.
pub fn default_steps(horizon: f64) -> usize {
    (400.0 * horizon.max(1.0)).ceil() as usize
}

/// Where and how paths are started and discretised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationPlan {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub t_start: f64,
    pub t_end: f64,
    pub x_start: f64,
    pub v_start: f64,
}

impl SimulationPlan {
    /// Paths from `(0, V0)` over `[0, T]`.
    pub fn new(spec: &ModelSpec, n_paths: usize, n_steps: usize, seed: u64, scheme: Scheme) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            scheme,
            t_start: 0.0,
            t_end: spec.horizon,
            x_start: 0.0,
            v_start: spec.v0,
        }
    }

    fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.n_paths < 1 || self.n_steps < 1 {
            return Err(invalid("need at least one path and one step"));
        }
        if !(self.t_start >= 0.0 && self.t_start < self.t_end && self.t_end <= spec.horizon) {
            return Err(invalid(format!(
                "need 0 <= t_start < t_end <= T, got [{}, {}] with T = {}",
                self.t_start, self.t_end, spec.horizon
            )));
        }
        if !(self.v_start >= 0.0 && self.v_start.is_finite() && self.x_start.is_finite()) {
            return Err(invalid("start state must be finite with v >= 0"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n_steps)
            .map(|k| {
                if k == self.n_steps {
                    self.t_end
                } else {
                    self.t_start + k as f64 * dt
                }
            })
            .collect()
    }
}

/// Gaussian pairs from a dedicated stream of the path.
pub(crate) struct PathNoise {
    rng: ChaCha8Rng,
}

impl PathNoise {
    pub(crate) fn new(seed: u64, path: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        Self { rng }
    }

    fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Two independent standard normals (Box–Muller).
    pub(crate) fn pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        (r * c, r * s)
    }
}

/// Simulates one path into `xs`, `vs` (length `n_steps + 1`).
fn simulate_path(spec: &ModelSpec, plan: &SimulationPlan, path: usize, xs: &mut [f64], vs: &mut [f64]) -> Result<()> {
    let dt = plan.dt();
    let sdt = dt.sqrt();
    let rho = spec.rho;
    let rho_bar = spec.rho_bar();
    let mut noise = PathNoise::new(plan.seed, path);
    let mut x = plan.x_start;
    let mut v = plan.v_start;
    xs[0] = x;
    vs[0] = v;
    for k in 0..plan.n_steps {
        let t = plan.t_start + k as f64 * dt;
        let vp = match plan.scheme {
            Scheme::EulerFullTruncation => v.max(0.0),
            Scheme::EulerReflection => v.abs(),
        };
        let (z1, z2) = noise.pair();
        let dw1 = sdt * z1;
        let dw2 = sdt * z2;
        let eta = (spec.eta)(t, x);
        let sq = vp.sqrt();
        let v_next = v + (spec.beta)(t, vp) * dt + (spec.sigma)(t, vp) * sq * dw1;
        let x_next = x - 0.5 * eta * eta * vp * dt + eta * sq * (rho * dw1 + rho_bar * dw2);
        if !(x_next.is_finite() && v_next.is_finite()) {
            return Err(Error::NonFinite { path, step: k, x, v });
        }
        x = x_next;
        v = match plan.scheme {
            Scheme::EulerFullTruncation => v_next,
            Scheme::EulerReflection => v_next.abs(),
        };
        xs[k + 1] = x;
        vs[k + 1] = v.max(0.0);
    }
    Ok(())
}

/// Lowest-index error wins so the reported failure is schedule independent.
fn first_error(results: impl IntoIterator<Item = Result<()>>) -> Result<()> {
    results.into_iter().find(|r| r.is_err()).unwrap_or(Ok(()))
}

/// Full paths of a simulation, stored row-major.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub spec: ModelSpec,
    pub n_paths: usize,
    pub n_steps: usize,
    pub grid: Vec<f64>,
    pub x_paths: Vec<f64>,
    pub v_paths: Vec<f64>,
    pub seed: u64,
    pub scheme: Scheme,
}

/// Refuse batches larger than this many stored values per component.
pub const MAX_STORED_VALUES: usize = 200_000_000;

impl PathBatch {
    pub fn path_x(&self, i: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.x_paths[i * w..(i + 1) * w]
    }

    pub fn path_v(&self, i: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.v_paths[i * w..(i + 1) * w]
    }

    pub fn terminal_x(&self) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.path_x(i)[self.n_steps]).collect()
    }

    pub fn terminal_v(&self) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.path_v(i)[self.n_steps]).collect()
    }

    /// Writes the `VTB1` binary layout: magic, spec hash, path count, step count, seed and
    /// scheme id, then the x rows and the v rows as little-endian doubles.
    pub fn write_vtb1<W: Write>(&self, mut w: W, spec_hash: u64) -> std::io::Result<()> {
        w.write_all(b"VTB1")?;
        w.write_all(&spec_hash.to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.n_steps as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&[self.scheme.id()])?;
        for v in self.x_paths.iter().chain(&self.v_paths) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a `VTB1` file. The caller supplies the spec the hash refers to; returns the
    /// batch and the stored hash.
    pub fn read_vtb1<R: Read>(mut r: R, spec: &ModelSpec) -> Result<(Self, u64)> {
        let io = |e: std::io::Error| invalid(format!("VTB1 read failed: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != b"VTB1" {
            return Err(invalid("not a VTB1 file"));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word).map_err(io)?;
            Ok(u64::from_le_bytes(word))
        };
        let hash = next(&mut r)?;
        let n_paths = next(&mut r)? as usize;
        let n_steps = next(&mut r)? as usize;
        let seed = next(&mut r)?;
        let mut id = [0u8; 1];
        r.read_exact(&mut id).map_err(io)?;
        let scheme = Scheme::from_id(id[0])?;
        let len = n_paths
            .checked_mul(n_steps + 1)
            .filter(|&l| l <= MAX_STORED_VALUES)
            .ok_or_else(|| invalid("VTB1 dimensions too large"))?;
        let mut buf = vec![0u8; 8 * len];
        let mut read_block = |r: &mut R| -> Result<Vec<f64>> {
            r.read_exact(&mut buf).map_err(io)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let x_paths = read_block(&mut r)?;
        let v_paths = read_block(&mut r)?;
        let plan = SimulationPlan::new(spec, n_paths, n_steps, seed, scheme);
        Ok((
            Self {
                spec: spec.clone(),
                n_paths,
                n_steps,
                grid: plan.grid(),
                x_paths,
                v_paths,
                seed,
                scheme,
            },
            hash,
        ))
    }
}

/// Simulates and stores complete paths from `(0, V0)`.
pub fn simulate(spec: &ModelSpec, n_paths: usize, n_steps: usize, seed: u64, scheme: Scheme) -> Result<PathBatch> {
    simulate_plan(spec, &SimulationPlan::new(spec, n_paths, n_steps, seed, scheme))
}

/// Paths started at `(x₁, v₁)` at time `t_start` and run to `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_conditional(
    spec: &ModelSpec,
    start_state: (f64, f64),
    t_start: f64,
    t_end: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PathBatch> {
    let plan = SimulationPlan {
        n_paths,
        n_steps,
        seed,
        scheme,
        t_start,
        t_end,
        x_start: start_state.0,
        v_start: start_state.1,
    };
    simulate_plan(spec, &plan)
}

pub fn simulate_plan(spec: &ModelSpec, plan: &SimulationPlan) -> Result<PathBatch> {
    plan.validate(spec)?;
    let w = plan.n_steps + 1;
    let len = plan
        .n_paths
        .checked_mul(w)
        .filter(|&l| l <= MAX_STORED_VALUES)
        .ok_or_else(|| invalid("batch too large to store; use the streaming simulators"))?;
    let mut x_paths = vec![0.0; len];
    let mut v_paths = vec![0.0; len];
    let results: Vec<Result<()>> = x_paths
        .par_chunks_mut(w)
        .zip(v_paths.par_chunks_mut(w))
        .enumerate()
        .map(|(i, (xs, vs))| simulate_path(spec, plan, i, xs, vs))
        .collect();
    first_error(results)?;
    Ok(PathBatch {
        spec: spec.clone(),
        n_paths: plan.n_paths,
        n_steps: plan.n_steps,
        grid: plan.grid(),
        x_paths,
        v_paths,
        seed: plan.seed,
        scheme: plan.scheme,
    })
}

/// Runs `f(path_index, x_path, v_path)` on every simulated path without storing the paths.
/// Results come back in path order.
pub fn map_paths<T, F>(spec: &ModelSpec, plan: &SimulationPlan, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[f64], &[f64]) -> T + Sync,
{
    plan.validate(spec)?;
    let w = plan.n_steps + 1;
    let results: Vec<Result<T>> = (0..plan.n_paths)
        .into_par_iter()
        .map_init(
            || (vec![0.0; w], vec![0.0; w]),
            |(xs, vs), i| {
                simulate_path(spec, plan, i, xs, vs)?;
                Ok(f(i, xs, vs))
            },
        )
        .collect();
    results.into_iter().collect()
}

/// Terminal values of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalBatch {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub seed: u64,
    pub n_steps: usize,
    pub scheme: Scheme,
}

pub fn simulate_terminal(spec: &ModelSpec, plan: &SimulationPlan) -> Result<TerminalBatch> {
    let n = plan.n_steps;
    let pairs = map_paths(spec, plan, |_, xs, vs| (xs[n], vs[n]))?;
    let (x, v) = pairs.into_iter().unzip();
    Ok(TerminalBatch {
        x,
        v,
        seed: plan.seed,
        n_steps: n,
        scheme: plan.scheme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_heston, Family, HypothesisBounds};
    use std::sync::Arc;

    fn heston() -> ModelSpec {
        make_heston(1.0, 0.09, 0.3, -0.5, 0.09, 1.0).unwrap()
    }

    #[test]
    fn initial_state_and_positivity() {
        let spec = make_heston(0.5, 0.04, 1.0, -0.7, 0.04, 1.0).unwrap();
        for scheme in [Scheme::EulerFullTruncation, Scheme::EulerReflection] {
            let b = simulate(&spec, 500, 100, 1, scheme).unwrap();
            for i in 0..b.n_paths {
                assert_eq!(b.path_x(i)[0], 0.0);
                assert_eq!(b.path_v(i)[0], 0.04);
            }
            assert!(b.v_paths.iter().all(|&v| v >= 0.0));
            // ξ = 1 with θ small hits zero often
            assert!(b.v_paths.contains(&0.0) || scheme == Scheme::EulerReflection);
        }
    }

    #[test]
    fn zero_variance_without_drift_freezes_log_price() {
        let base = heston();
        let spec = ModelSpec::new(
            Arc::new(|_, _| 1.0),
            Arc::new(|_, _| 0.0),
            Arc::new(|_, _| 0.5),
            0.3,
            1e-300,
            1.0,
            HypothesisBounds { ..base.bounds },
            Family::Custom { name: "frozen".into() },
        )
        .unwrap();
        let plan = SimulationPlan {
            v_start: 0.0,
            ..SimulationPlan::new(&spec, 20, 50, 3, Scheme::EulerFullTruncation)
        };
        let b = simulate_plan(&spec, &plan).unwrap();
        assert!(b.x_paths.iter().all(|&x| x == 0.0));
        assert!(b.v_paths.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_batch_any_pool_size() {
        let spec = heston();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&spec, 300, 40, 42, Scheme::EulerFullTruncation).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.x_paths, b.x_paths);
        assert_eq!(a.v_paths, b.v_paths);
        let c = simulate(&spec, 300, 40, 43, Scheme::EulerFullTruncation).unwrap();
        assert_ne!(a.x_paths, c.x_paths);
    }

    #[test]
    fn conditional_from_origin_is_plain_simulation() {
        let spec = heston();
        let a = simulate(&spec, 50, 20, 9, Scheme::EulerFullTruncation).unwrap();
        let b = simulate_conditional(&spec, (0.0, spec.v0), 0.0, 1.0, 50, 20, 9, Scheme::EulerFullTruncation).unwrap();
        assert_eq!(a.x_paths, b.x_paths);
        assert_eq!(a.v_paths, b.v_paths);
        assert!(simulate_conditional(&spec, (0.0, 0.1), 0.5, 0.5, 5, 5, 1, Scheme::EulerFullTruncation).is_err());
        assert!(simulate_conditional(&spec, (0.0, -0.1), 0.0, 0.5, 5, 5, 1, Scheme::EulerFullTruncation).is_err());
    }

    #[test]
    fn zero_start_variance_moves_up_under_positive_drift() {
        let spec = heston();
        let b = simulate_conditional(&spec, (0.0, 0.0), 0.2, 0.8, 200, 30, 5, Scheme::EulerFullTruncation).unwrap();
        for i in 0..b.n_paths {
            assert!(b.path_v(i)[1] > 0.0);
        }
    }

    #[test]
    fn non_finite_coefficients_are_reported() {
        let base = heston();
        let spec = ModelSpec::new(
            Arc::new(|t, _| if t > 0.5 { f64::NAN } else { 1.0 }),
            base.beta.clone(),
            base.sigma.clone(),
            0.0,
            0.09,
            1.0,
            base.bounds,
            Family::Custom { name: "nan".into() },
        )
        .unwrap();
        match simulate(&spec, 4, 10, 1, Scheme::EulerFullTruncation) {
            Err(Error::NonFinite { path, step, .. }) => {
                assert_eq!(path, 0);
                assert_eq!(step, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn independent_increments_without_correlation() {
        let spec = heston().with_rho(0.0).unwrap();
        let b = simulate(&spec, 5000, 200, 11, Scheme::EulerFullTruncation).unwrap();
        // martingale part of ΔX versus ΔV over 10⁶ increments
        let dt = b.grid[1];
        let (mut sxy, mut sxx, mut syy, mut sx, mut sy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..b.n_paths {
            let (xs, vs) = (b.path_x(i), b.path_v(i));
            for k in 0..b.n_steps {
                let dx = xs[k + 1] - xs[k] + 0.5 * vs[k] * dt;
                let dv = vs[k + 1] - vs[k];
                sxy += dx * dv;
                sxx += dx * dx;
                syy += dv * dv;
                sx += dx;
                sy += dv;
                n += 1.0;
            }
        }
        let cov = sxy / n - sx / n * sy / n;
        let corr = cov / ((sxx / n - (sx / n).powi(2)) * (syy / n - (sy / n).powi(2))).sqrt();
        assert!(corr.abs() <= 3.0 / n.sqrt(), "corr = {corr}");
    }

    #[test]
    fn heston_mean_variance_and_supermartingale() {
        let spec = make_heston(2.0, 0.04, 0.5, -0.7, 0.09, 1.0).unwrap();
        let plan = SimulationPlan::new(&spec, 100_000, 400, 2024, Scheme::EulerFullTruncation);
        let tb = simulate_terminal(&spec, &plan).unwrap();
        let n = tb.v.len() as f64;
        let mean = tb.v.iter().sum::<f64>() / n;
        let sd = (tb.v.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let exact = 0.04 + (0.09 - 0.04) * (-2f64).exp();
        assert!((mean - exact).abs() <= 3.0 * sd / n.sqrt(), "{mean} vs {exact}");
        let ex: Vec<f64> = tb.x.iter().map(|x| x.exp()).collect();
        let m = ex.iter().sum::<f64>() / n;
        let s = (ex.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(m <= 1.0 + 3.0 * s / n.sqrt());
    }

    #[test]
    fn vtb1_round_trip() {
        let spec = heston();
        let b = simulate(&spec, 7, 5, 3, Scheme::EulerReflection).unwrap();
        let mut buf = Vec::new();
        b.write_vtb1(&mut buf, 0xdead_beef).unwrap();
        assert_eq!(&buf[..4], b"VTB1");
        assert_eq!(buf.len(), 4 + 32 + 1 + 2 * 8 * 7 * 6);
        let (c, hash) = PathBatch::read_vtb1(&buf[..], &spec).unwrap();
        assert_eq!(hash, 0xdead_beef);
        assert_eq!(c.x_paths, b.x_paths);
        assert_eq!(c.v_paths, b.v_paths);
        assert_eq!(c.scheme, Scheme::EulerReflection);
        assert!(PathBatch::read_vtb1(&b"VTB0"[..], &spec).is_err());
    }

    #[test]
    fn streaming_matches_stored_paths() {
        let spec = heston();
        let plan = SimulationPlan::new(&spec, 30, 25, 77, Scheme::EulerFullTruncation);
        let stored = simulate_plan(&spec, &plan).unwrap();
        let t = simulate_terminal(&spec, &plan).unwrap();
        assert_eq!(t.x, stored.terminal_x());
        assert_eq!(t.v, stored.terminal_v());
    }

    #[test]
    fn default_step_counts() {
        assert_eq!(default_steps(0.5), 400);
        assert_eq!(default_steps(1.0), 400);
        assert_eq!(default_steps(2.5), 1000);
    }
}
