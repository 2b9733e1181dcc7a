//! The experiment subcommands.

use serde::Serialize;
use voltube_core::curves::{
    bound_constants, cdf_tail_log_bound, density_constants, optimal_curves, raw_tube_log_bound, small_ball_log_bound,
    small_ball_radius, theorem_log_bound, wing_floors, y_threshold, BoundConstants, ClosedFormCurve, CurveTriple,
    DensityConstants,
};
use voltube_core::estimate::{
    exp_moment, fit_log_points, increment_scaling, kde_log_density, small_ball, tail_slope, terminal_tail,
    tube_probabilities_streaming, Bandwidth, ExpMoment, ScalingFit, SlopeFit, DEFAULT_MIN_HITS,
};
use voltube_core::heston::{self, critical_moment, CriticalMoments, HestonParams};
use voltube_core::model::HypothesisBounds;
use voltube_core::pricing::{lee_phi, smile_from_mc, wing_slopes, DroppedStrike, SmilePoint, WingSlopes};
use voltube_core::quad::integrate;
use voltube_core::simulate::{simulate_terminal, SimulationPlan, TerminalBatch};
use voltube_core::variational::{action, el_residual, el_residual_relative, minimize_action, DiscreteCurve};
use voltube_core::{LogValue, ModelSpec};

use crate::config::LoadedConfig;
use crate::output::{fmt_f64, fmt_opt, Metadata, Table, Writer};
use crate::CliError;

/// Everything a subcommand needs.
pub struct Context<'a> {
    pub loaded: &'a LoadedConfig,
    pub spec: &'a ModelSpec,
    pub meta: Metadata,
    pub writer: Writer,
}

impl Context<'_> {
    fn targets(&self) -> &crate::config::Targets {
        &self.loaded.config.targets
    }

    fn plan(&self) -> SimulationPlan {
        let run = self.loaded.config.run;
        SimulationPlan::new(self.spec, run.n_paths, run.n_steps, run.seed, run.scheme)
    }

    fn terminal(&self) -> Result<TerminalBatch, CliError> {
        Ok(simulate_terminal(self.spec, &self.plan())?)
    }

    fn heston(&self) -> Option<HestonParams> {
        HestonParams::from_spec(self.spec).ok()
    }

    fn y_list(&self) -> Result<&[f64], CliError> {
        let ys = &self.targets().y_list;
        if ys.is_empty() {
            return Err(CliError::Config("targets.y_list is empty".into()));
        }
        Ok(ys)
    }
}

fn err_string<T>(r: voltube_core::Result<T>) -> (Option<T>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

#[derive(Serialize)]
struct TargetBounds {
    y: f64,
    theorem_log_bound: Option<f64>,
    cdf_tail_log_bound: Option<f64>,
    note: Option<String>,
}

#[derive(Serialize)]
struct ConstantsReport {
    bounds: HypothesisBounds,
    thresholds: (f64, f64),
    constants: BoundConstants,
    density: DensityConstants,
    wing_floors: Option<(LogValue, LogValue)>,
    targets: Vec<TargetBounds>,
}

pub fn constants(ctx: &mut Context) -> Result<(), CliError> {
    let spec = ctx.spec;
    let targets = ctx
        .targets()
        .y_list
        .iter()
        .map(|&y| {
            let (theorem, e1) = err_string(theorem_log_bound(y, spec));
            let (tail, e2) = err_string(cdf_tail_log_bound(y.abs(), spec));
            TargetBounds {
                y,
                theorem_log_bound: theorem.map(|b| b.log_value()),
                cdf_tail_log_bound: tail.map(|b| b.bound.log_value()),
                note: e1.or(e2),
            }
        })
        .collect();
    let report = ConstantsReport {
        bounds: spec.bounds,
        thresholds: y_threshold(spec),
        constants: bound_constants(spec),
        density: density_constants(spec),
        wing_floors: wing_floors(spec).ok(),
        targets,
    };
    ctx.writer.json("constants.json", &report, &ctx.meta)
}

/// Max of `|u'' - u/4|` with second differences on the sampled grid.
fn linear_residual(curve: &CurveTriple) -> f64 {
    let u = &curve.u;
    let g = &curve.grid;
    (1..u.len() - 1)
        .map(|i| {
            let h = g[i + 1] - g[i];
            ((u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h) - 0.25 * u[i]).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Serialize)]
struct CurveSummary {
    y: f64,
    y_bar: f64,
    regularity_window: f64,
    linear_residual: f64,
    nonlinear_residual: f64,
    nonlinear_residual_relative: f64,
}

pub fn curves(ctx: &mut Context) -> Result<(), CliError> {
    let steps = ctx.loaded.config.run.n_steps;
    let mut table = Table::new(&["y", "t", "u", "u_prime", "x_tilde", "v_tilde", "r_tilde"]);
    let mut summary = Vec::new();
    for &y in ctx.y_list()? {
        let c = optimal_curves(y, ctx.spec, steps)?;
        for i in 0..c.grid.len() {
            table.push(vec![
                fmt_f64(y),
                fmt_f64(c.grid[i]),
                fmt_f64(c.u[i]),
                fmt_f64(c.u_prime[i]),
                fmt_f64(c.x_tilde[i]),
                fmt_f64(c.v_tilde[i]),
                fmt_f64(c.r_tilde[i]),
            ]);
        }
        let discrete = DiscreteCurve::new(c.horizon(), c.v_tilde.clone())?;
        summary.push(CurveSummary {
            y,
            y_bar: c.y_bar,
            regularity_window: c.regularity_window(),
            linear_residual: linear_residual(&c),
            nonlinear_residual: el_residual(&discrete)?,
            nonlinear_residual_relative: el_residual_relative(&discrete)?,
        });
    }
    ctx.writer.csv("curves.csv", &table, &ctx.meta)?;
    ctx.writer.json("curves_summary.json", &summary, &ctx.meta)
}

/// `∫(v'²/v + v) dt` of the closed-form curve by quadrature.
pub fn closed_form_action(cf: &ClosedFormCurve) -> voltube_core::Result<f64> {
    let integral = integrate(
        |t| {
            let p = cf.eval(t);
            4.0 * p.u_prime * p.u_prime + p.u * p.u
        },
        0.0,
        cf.horizon,
        1e-14,
        1e-14,
    )?;
    Ok(cf.v0 * integral)
}

#[derive(Serialize)]
struct VariationalCase {
    y: f64,
    y_bar: f64,
    knots: usize,
    closed_form_action: f64,
    sampled_action: f64,
    minimized_action: f64,
    relative_gap: f64,
    iterations: usize,
    gradient_norm: f64,
    max_abs_deviation: f64,
}

pub fn variational(ctx: &mut Context) -> Result<(), CliError> {
    let n = ctx.loaded.config.run.n_steps;
    let (v0, t) = (ctx.spec.v0, ctx.spec.horizon);
    let mut cases = Vec::new();
    for &y in ctx.y_list()? {
        let c = optimal_curves(y, ctx.spec, n)?;
        let cf = ClosedFormCurve::for_target(y, v0, t)?;
        let sampled = DiscreteCurve::new(t, c.v_tilde.clone())?;
        let line = DiscreteCurve::line(t, n, v0, c.y_bar)?;
        let m = minimize_action(v0, c.y_bar, t, n, &line)?;
        let exact = closed_form_action(&cf)?;
        let minimized = action(&m.curve);
        cases.push(VariationalCase {
            y,
            y_bar: c.y_bar,
            knots: n + 1,
            closed_form_action: exact,
            sampled_action: action(&sampled),
            minimized_action: minimized,
            relative_gap: minimized / exact - 1.0,
            iterations: m.iterations,
            gradient_norm: m.gradient_norm,
            max_abs_deviation: m
                .curve
                .values
                .iter()
                .zip(&sampled.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        });
    }
    ctx.writer.json("variational.json", &cases, &ctx.meta)
}

pub fn tube(ctx: &mut Context) -> Result<(), CliError> {
    let plan = ctx.plan();
    let ys = ctx.y_list()?.to_vec();
    let curves = ys
        .iter()
        .map(|&y| optimal_curves(y, ctx.spec, plan.n_steps))
        .collect::<voltube_core::Result<Vec<_>>>()?;
    let estimates = tube_probabilities_streaming(ctx.spec, &plan, &curves, &[1.0])?;
    let mut table = Table::new(&[
        "y",
        "p_hat",
        "ci_low",
        "ci_high",
        "theorem_log_bound",
        "raw_log_bound",
        "hits",
        "bound_respected",
    ]);
    for ((&y, curve), est) in ys.iter().zip(&curves).zip(&estimates) {
        let e = est[0];
        let theorem = theorem_log_bound(y, ctx.spec)?;
        let raw = raw_tube_log_bound(curve, ctx.spec)?;
        table.push(vec![
            fmt_f64(y),
            fmt_f64(e.p_hat),
            fmt_f64(e.ci_low),
            fmt_f64(e.ci_high),
            fmt_f64(theorem.log_value()),
            fmt_f64(raw.log_value()),
            e.hits.to_string(),
            (theorem.exceeded_by(e.ci_low) as u8).to_string(),
        ]);
    }
    ctx.writer.csv("tube.csv", &table, &ctx.meta)
}

#[derive(Serialize)]
struct TailFits {
    up: Option<SlopeFit>,
    down: Option<SlopeFit>,
    up_error: Option<String>,
    down_error: Option<String>,
    /// Oracle slopes on the same levels as the Monte Carlo fits.
    oracle_up: Option<SlopeFit>,
    oracle_down: Option<SlopeFit>,
}

pub fn tails(ctx: &mut Context) -> Result<(), CliError> {
    let batch = ctx.terminal()?;
    let oracle = ctx.heston();
    let mut table = Table::new(&[
        "y",
        "p_up",
        "up_ci_low",
        "up_ci_high",
        "p_down",
        "down_ci_low",
        "down_ci_high",
        "cdf_log_bound",
        "oracle_up",
        "oracle_down",
    ]);
    let mut ups = Vec::new();
    let mut downs = Vec::new();
    // Both tails are reported, so a target only contributes its level.
    for y in ctx.y_list()?.iter().map(|y| y.abs()) {
        let (up, down) = terminal_tail(&batch.x, y)?;
        let bound = cdf_tail_log_bound(y, ctx.spec).ok().map(|b| b.bound.log_value());
        let (ou, od) = match &oracle {
            Some(p) => (Some(heston::tail(p, y)?), Some(heston::left_tail(p, y)?)),
            None => (None, None),
        };
        table.push(vec![
            fmt_f64(y),
            fmt_f64(up.p_hat),
            fmt_f64(up.ci_low),
            fmt_f64(up.ci_high),
            fmt_f64(down.p_hat),
            fmt_f64(down.ci_low),
            fmt_f64(down.ci_high),
            fmt_opt(bound),
            fmt_opt(ou),
            fmt_opt(od),
        ]);
        ups.push((y, up));
        downs.push((y, down));
    }
    let (up, up_error) = err_string(tail_slope(&ups, DEFAULT_MIN_HITS));
    let (down, down_error) = err_string(tail_slope(&downs, DEFAULT_MIN_HITS));
    let oracle_fit = |fit: &Option<SlopeFit>, f: &dyn Fn(&HestonParams, f64) -> voltube_core::Result<f64>| {
        let (Some(fit), Some(p)) = (fit, &oracle) else {
            return Ok(None);
        };
        let pts = fit
            .points
            .iter()
            .map(|&(y, _)| f(p, y).map(|v| (y, v.ln())))
            .collect::<voltube_core::Result<Vec<_>>>()?;
        fit_log_points(&pts).map(Some)
    };
    let oracle_up = oracle_fit(&up, &heston::tail)?;
    let oracle_down = oracle_fit(&down, &heston::left_tail)?;
    ctx.writer.csv("tails.csv", &table, &ctx.meta)?;
    ctx.writer.json(
        "tails_fit.json",
        &TailFits {
            up,
            down,
            up_error,
            down_error,
            oracle_up,
            oracle_down,
        },
        &ctx.meta,
    )
}

pub fn smallballs(ctx: &mut Context) -> Result<(), CliError> {
    let js = ctx.targets().j_list.clone();
    if js.is_empty() {
        return Err(CliError::Config("targets.j_list is empty".into()));
    }
    let batch = ctx.terminal()?;
    let mut table = Table::new(&[
        "y",
        "j",
        "radius",
        "hits",
        "p_hat",
        "ci_low",
        "ci_high",
        "log_bound",
        "bound_respected",
    ]);
    for &j in &js {
        for &y in ctx.y_list()? {
            let radius = small_ball_radius(y, j);
            let est = small_ball(&batch.x, &batch.v, y, ctx.spec.v0, radius)?;
            let bound = small_ball_log_bound(y, j, ctx.spec).ok();
            table.push(vec![
                fmt_f64(y),
                j.to_string(),
                fmt_f64(radius),
                est.hits.to_string(),
                fmt_f64(est.p_hat),
                fmt_f64(est.ci_low),
                fmt_f64(est.ci_high),
                fmt_opt(bound.map(|b| b.bound.log_value())),
                bound
                    .map(|b| (b.bound.exceeded_by(est.ci_low) as u8).to_string())
                    .unwrap_or_default(),
            ]);
        }
    }
    ctx.writer.csv("smallballs.csv", &table, &ctx.meta)
}

#[derive(Serialize)]
struct LeeTargets {
    critical: CriticalMoments,
    right: f64,
    left: f64,
}

#[derive(Serialize)]
struct WingsReport {
    k_min_abs: f64,
    mc: Option<WingSlopes>,
    mc_error: Option<String>,
    oracle: Option<WingSlopes>,
    lee: Option<LeeTargets>,
    floors: Option<(LogValue, LogValue)>,
    mc_meets_floors: Option<(bool, bool)>,
    dropped: Vec<DroppedStrike>,
}

fn smile_rows(table: &mut Table, points: &[SmilePoint]) {
    for p in points {
        let source = match p.source {
            voltube_core::pricing::SmileSource::Mc => "mc",
            voltube_core::pricing::SmileSource::Oracle => "oracle",
        };
        table.push(vec![
            source.to_string(),
            fmt_f64(p.k),
            fmt_f64(p.implied_vol),
            fmt_opt(p.vol_stderr),
        ]);
    }
}

pub fn wings(ctx: &mut Context) -> Result<(), CliError> {
    let strikes = ctx.targets().strikes.clone();
    if strikes.is_empty() {
        return Err(CliError::Config("targets.strikes is empty".into()));
    }
    let k_min_abs = 0.5 * strikes.iter().map(|k| k.abs()).fold(0.0, f64::max);
    let batch = ctx.terminal()?;
    let smile = smile_from_mc(&batch.x, ctx.spec.horizon, &strikes);
    let (mc, mc_error) = err_string(wing_slopes(&smile.points, k_min_abs));
    let mut table = Table::new(&["source", "k", "implied_vol", "vol_stderr"]);
    smile_rows(&mut table, &smile.points);
    let (mut oracle, mut lee) = (None, None);
    if let Some(p) = ctx.heston() {
        let points = heston::oracle_smile(&p, &strikes)?;
        smile_rows(&mut table, &points);
        oracle = wing_slopes(&points, k_min_abs).ok();
        let cm = critical_moment(&p);
        lee = Some(LeeTargets {
            critical: cm,
            right: lee_phi(cm.p_star - 1.0)?,
            left: lee_phi(cm.q_star)?,
        });
    }
    let floors = wing_floors(ctx.spec).ok();
    let report = WingsReport {
        k_min_abs,
        mc_meets_floors: match (&mc, floors) {
            (Some(w), Some(f)) => Some(w.meets_floors(f)),
            _ => None,
        },
        mc,
        mc_error,
        oracle,
        lee,
        floors,
        dropped: smile.dropped,
    };
    ctx.writer.csv("wings_smile.csv", &table, &ctx.meta)?;
    ctx.writer.json("wings.json", &report, &ctx.meta)
}

#[derive(Serialize)]
struct MomentsReport {
    moments: Vec<(f64, ExpMoment)>,
    critical: Option<CriticalMoments>,
}

pub fn moments(ctx: &mut Context) -> Result<(), CliError> {
    let ps = ctx.targets().p_list.clone();
    if ps.is_empty() {
        return Err(CliError::Config("targets.p_list is empty".into()));
    }
    let batch = ctx.terminal()?;
    let oracle = ctx.heston();
    let mut table = Table::new(&["p", "estimate", "std_error", "max_share", "unreliable", "oracle"]);
    let mut moments = Vec::new();
    for &p in &ps {
        let m = exp_moment(&batch.x, p);
        table.push(vec![
            fmt_f64(p),
            fmt_f64(m.estimate),
            fmt_f64(m.std_error),
            fmt_f64(m.max_share),
            (m.unreliable as u8).to_string(),
            fmt_opt(oracle.as_ref().map(|o| heston::mgf(o, p))),
        ]);
        moments.push((p, m));
    }
    ctx.writer.csv("moments.csv", &table, &ctx.meta)?;
    ctx.writer.json(
        "moments.json",
        &MomentsReport {
            moments,
            critical: oracle.as_ref().map(critical_moment),
        },
        &ctx.meta,
    )
}

pub fn scaling(ctx: &mut Context) -> Result<(), CliError> {
    let t = ctx.targets();
    let (ps, dts) = (t.p_list.clone(), t.dt_list.clone());
    if ps.is_empty() || dts.is_empty() {
        return Err(CliError::Config(
            "scaling needs targets.p_list and targets.dt_list".into(),
        ));
    }
    let run = ctx.loaded.config.run;
    let mut table = Table::new(&["p", "dt", "moment"]);
    let mut fits: Vec<ScalingFit> = Vec::new();
    for &p in &ps {
        if p < 1.0 || p.fract() != 0.0 {
            return Err(CliError::Config(format!(
                "scaling orders must be positive integers, got {p}"
            )));
        }
        let fit = increment_scaling(ctx.spec, p as u32, &dts, run.n_paths, run.seed, run.scheme)?;
        for &(dt, m) in &fit.points {
            table.push(vec![fmt_f64(p), fmt_f64(dt), fmt_f64(m)]);
        }
        fits.push(fit);
    }
    ctx.writer.csv("scaling.csv", &table, &ctx.meta)?;
    ctx.writer.json("scaling.json", &fits, &ctx.meta)
}

#[derive(Serialize)]
struct DensityReport {
    right: Option<SlopeFit>,
    left: Option<SlopeFit>,
    right_error: Option<String>,
    left_error: Option<String>,
}

pub fn density(ctx: &mut Context) -> Result<(), CliError> {
    let ys = ctx.y_list()?.to_vec();
    let batch = ctx.terminal()?;
    let kde = kde_log_density(&batch.x, &ys, Bandwidth::Silverman)?;
    let oracle = match ctx.heston() {
        Some(p) => Some(heston::density(&p, &ys)?),
        None => None,
    };
    let mut table = Table::new(&["y", "kde_log_density", "oracle_log_density"]);
    for (i, &(y, l)) in kde.iter().enumerate() {
        let o = oracle.as_ref().map(|o| o[i].density.ln());
        table.push(vec![fmt_f64(y), fmt_f64(l), fmt_opt(o)]);
    }
    let side = |positive: bool| {
        let pts: Vec<(f64, f64)> = kde
            .iter()
            .filter(|(y, l)| l.is_finite() && if positive { *y > 0.0 } else { *y < 0.0 })
            .map(|&(y, l)| (y.abs(), l))
            .collect();
        err_string(fit_log_points(&pts))
    };
    let (right, right_error) = side(true);
    let (left, left_error) = side(false);
    ctx.writer.csv("density.csv", &table, &ctx.meta)?;
    ctx.writer.json(
        "density_fit.json",
        &DensityReport {
            right,
            left,
            right_error,
            left_error,
        },
        &ctx.meta,
    )
}
