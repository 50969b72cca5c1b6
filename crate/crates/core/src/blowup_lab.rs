//! Blow-up functionals along numerical solutions, the extremal lifespan ODE
//! and lifespan sweeps.
//!
//! With snapshots u(τ_k, r_i) from a run,
//!
//! ```text
//! Z(t) = ∫_{t/2}^{t} ∫ |u|^p τ^α η_t(τ)^{2p'} b_q(τ, |x|) dx dτ,   Y(M) = ∫_1^M Z(t)/t dt,
//! ```
//!
//! and the nonlinear mass drops the b_q factor. The x-integral uses the radial
//! measure |S^{n-1}| r^{n-1} dr.

use std::sync::Arc;

use rayon::prelude::*;

use crate::epd_solver::{solve_with, GridSpec, InitialProfile, SolutionTrace, SolverOptions};
use crate::error::{Error, Result};
use crate::exponents::{mass_exponent, q_exponent, ModelParams};
use crate::fit::{linear_fit, LinearFit};
use crate::test_functions::{sphere_area, BqCache, Cutoff, TestFunctionParams};

const MODULE: &str = "blowup_lab";

#[derive(Debug, Clone)]
pub struct FunctionalConfig {
    /// p' = p/(p-1); the cutoff enters as η_t^{2p'}.
    pub p_conj: f64,
    pub m_grid: Vec<f64>,
    pub bq_cache: Arc<BqCache>,
    pub model: ModelParams,
    /// Subintervals per unit of ln t in the Y quadrature.
    pub log_points: usize,
    cutoff: Cutoff,
}

impl FunctionalConfig {
    pub fn new(model: &ModelParams, m_grid: Vec<f64>, bq_cache: Arc<BqCache>) -> Result<Self> {
        model.validate()?;
        if m_grid.iter().any(|&m| !(m >= 1.0)) {
            return Err(Error::domain(MODULE, "M grid values must be >= 1"));
        }
        Ok(Self {
            p_conj: model.p / (model.p - 1.0),
            m_grid,
            bq_cache,
            model: *model,
            log_points: 32,
            cutoff: Cutoff::new(),
        })
    }

    /// Builds the b_q cache for τ ∈ [t_lo/2, t_hi] and the light cone of the
    /// run, then the config.
    pub fn with_cache(
        model: &ModelParams,
        m_grid: Vec<f64>,
        t_lo: f64,
        t_hi: f64,
        dr: f64,
        spacing: f64,
    ) -> Result<Self> {
        let tf = TestFunctionParams::from_model(model)?;
        let cache = BqCache::build(&tf, 0.5 * t_lo, t_hi, t_hi + 1.0 + 3.0 * dr, spacing)?;
        Self::new(model, m_grid, Arc::new(cache))
    }

    pub fn with_m_grid(&self, m_grid: Vec<f64>) -> Self {
        Self {
            m_grid,
            ..self.clone()
        }
    }

    fn cutoff_power(&self, tau: f64, t: f64) -> f64 {
        let e = self.cutoff.eta_scaled(tau, t);
        if e <= 0.0 {
            0.0
        } else {
            e.powf(2.0 * self.p_conj)
        }
    }
}

/// ∫ |u(τ_k, r)|^p w(r) |S| r^{n-1} dr over one snapshot.
fn radial_integral(
    values: &[f64],
    dr: f64,
    n: u32,
    p: f64,
    weight: impl Fn(f64) -> Option<f64>,
) -> Result<f64> {
    let area = sphere_area(n);
    let mut integrand = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let r = i as f64 * dr;
        let u = v.abs();
        if u == 0.0 {
            integrand.push(0.0);
            continue;
        }
        let w = weight(r).ok_or_else(|| {
            Error::insufficient(MODULE, format!("b_q cache does not cover r = {r}"))
        })?;
        integrand.push(u.powf(p) * w * area * r.powi(n as i32 - 1));
    }
    let sum: f64 = integrand.iter().sum();
    let ends = 0.5 * (integrand.first().unwrap_or(&0.0) + integrand.last().unwrap_or(&0.0));
    Ok((sum - ends) * dr)
}

/// ∫_{t/2}^{t} g(τ) dτ for g known at the snapshot times, integrating the
/// piecewise-linear interpolant exactly.
fn window_integral(
    trace: &SolutionTrace,
    t: f64,
    mut inner: impl FnMut(usize) -> Result<f64>,
) -> Result<f64> {
    let lo = 0.5 * t;
    let snaps = &trace.snapshots;
    if snaps.len() < 2 {
        return Err(Error::insufficient(MODULE, "run has fewer than two snapshots"));
    }
    let slack = 1e-9 * t.max(1.0);
    if snaps[0].t > lo + slack || snaps.last().unwrap().t < t - slack {
        return Err(Error::insufficient(
            MODULE,
            format!(
                "snapshots cover [{}, {}], need [{lo}, {t}]",
                snaps[0].t,
                snaps.last().unwrap().t
            ),
        ));
    }
    // first snapshot at or before lo, last at or after t
    let first = snaps.iter().rposition(|s| s.t <= lo + slack).unwrap_or(0);
    let last = snaps
        .iter()
        .position(|s| s.t >= t - slack)
        .unwrap_or(snaps.len() - 1);
    let mut values = Vec::with_capacity(last - first + 1);
    for k in first..=last {
        values.push(inner(k)?);
    }
    let mut total = 0.0;
    for k in first..last {
        let (ta, tb) = (snaps[k].t, snaps[k + 1].t);
        let (ga, gb) = (values[k - first], values[k + 1 - first]);
        let a = ta.max(lo);
        let b = tb.min(t);
        if b <= a {
            continue;
        }
        let at = |x: f64| ga + (gb - ga) * (x - ta) / (tb - ta);
        total += 0.5 * (at(a) + at(b)) * (b - a);
    }
    Ok(total)
}

/// Z(t) for t > 0.
pub fn functional_z(trace: &SolutionTrace, t: f64, cfg: &FunctionalConfig) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(MODULE, format!("Z needs t > 0, got {t}")));
    }
    let m = &cfg.model;
    window_integral(trace, t, |k| {
        let snap = &trace.snapshots[k];
        let tau = snap.t;
        let c = cfg.cutoff_power(tau, t) * tau.powf(m.alpha);
        if c == 0.0 {
            return Ok(0.0);
        }
        let inner = radial_integral(&snap.values, trace.snapshot_dr, m.n, m.p, |r| cfg.bq_cache.get(tau, r))?;
        Ok(c * inner)
    })
}

/// ∫_{t/2}^{t} ∫ |u|^p τ^α η_t^{2p'} dx dτ.
pub fn nonlinear_mass(trace: &SolutionTrace, t: f64, cfg: &FunctionalConfig) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(MODULE, format!("mass needs t > 0, got {t}")));
    }
    let m = &cfg.model;
    window_integral(trace, t, |k| {
        let snap = &trace.snapshots[k];
        let tau = snap.t;
        let c = cfg.cutoff_power(tau, t) * tau.powf(m.alpha);
        if c == 0.0 {
            return Ok(0.0);
        }
        Ok(c * radial_integral(&snap.values, trace.snapshot_dr, m.n, m.p, |_| Some(1.0))?)
    })
}

/// Log-log fit of the nonlinear mass against t, with the exponent it should
/// approach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassScaling {
    pub fit: LinearFit,
    pub target_exponent: f64,
}

pub fn nonlinear_mass_scaling(trace: &SolutionTrace, times: &[f64], cfg: &FunctionalConfig) -> Result<MassScaling> {
    let mut x = Vec::with_capacity(times.len());
    let mut y = Vec::with_capacity(times.len());
    for &t in times {
        let mass = nonlinear_mass(trace, t, cfg)?;
        if mass > 0.0 {
            x.push(t.ln());
            y.push(mass.ln());
        }
    }
    let m = &cfg.model;
    Ok(MassScaling {
        fit: linear_fit(&x, &y)?,
        target_exponent: mass_exponent(m.dim(), m.mu, m.alpha, m.p),
    })
}

/// Net power of t in Z(t)/t predicted from the mass and b_q exponents; equals
/// -1 exactly at the critical power.
pub fn functional_net_power(model: &ModelParams) -> f64 {
    let (q, _) = q_exponent(model.dim(), model.mu, model.alpha, model.p);
    mass_exponent(model.dim(), model.mu, model.alpha, model.p) - q - 1.0
}

/// Y and Z on a log-spaced t grid.
#[derive(Debug, Clone, PartialEq)]
pub struct YCurve {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Indices of `t` that are points of the M grid, in M-grid order.
    pub m_index: Vec<usize>,
}

impl YCurve {
    /// (M, Y(M), Z(M)) at the M-grid points.
    pub fn at_m_grid(&self) -> Vec<(f64, f64, f64)> {
        self.m_index.iter().map(|&i| (self.t[i], self.y[i], self.z[i])).collect()
    }

    /// t dY/dt by central differences in s = ln t, at interior nodes.
    pub fn reconstructed_z(&self) -> Vec<(f64, f64)> {
        (1..self.t.len().saturating_sub(1))
            .map(|j| {
                let ds = self.t[j + 1].ln() - self.t[j - 1].ln();
                (self.t[j], (self.y[j + 1] - self.y[j - 1]) / ds)
            })
            .collect()
    }
}

/// Y over `cfg.m_grid` from one pass of cumulative trapezoid in s = ln t.
pub fn functional_y_curve(trace: &SolutionTrace, cfg: &FunctionalConfig) -> Result<YCurve> {
    let mut ms: Vec<f64> = cfg.m_grid.clone();
    ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ms.dedup();
    let mut s = vec![0.0];
    let mut m_index_sorted = Vec::with_capacity(ms.len());
    for &m in &ms {
        let target = m.ln();
        let from = *s.last().unwrap();
        let pieces = ((target - from) * cfg.log_points as f64).ceil() as usize;
        for k in 1..=pieces {
            s.push(from + (target - from) * k as f64 / pieces as f64);
        }
        m_index_sorted.push(s.len() - 1);
    }
    let t: Vec<f64> = s.iter().map(|v| v.exp()).collect();
    let z: Vec<f64> = t
        .iter()
        .map(|&ti| functional_z(trace, ti, cfg))
        .collect::<Result<_>>()?;
    let mut y = vec![0.0; t.len()];
    for j in 1..t.len() {
        y[j] = y[j - 1] + 0.5 * (z[j] + z[j - 1]) * (s[j] - s[j - 1]);
    }
    let m_index = cfg
        .m_grid
        .iter()
        .map(|m| m_index_sorted[ms.iter().position(|x| x == m).unwrap()])
        .collect();
    Ok(YCurve { t, y, z, m_index })
}

/// Y(M) for a single M ≥ 1.
pub fn functional_y(trace: &SolutionTrace, m: f64, cfg: &FunctionalConfig) -> Result<f64> {
    if !(m >= 1.0) {
        return Err(Error::domain(MODULE, format!("Y needs M >= 1, got {m}")));
    }
    if m == 1.0 {
        return Ok(0.0);
    }
    let single = cfg.with_m_grid(vec![m]);
    let curve = functional_y_curve(trace, &single)?;
    Ok(*curve.y.last().unwrap())
}

/// Y(M) ≈ c ln M + b over a window, with a 95% band on c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrowth {
    pub fit: LinearFit,
    pub c_low: f64,
    pub c_high: f64,
    pub window: (f64, f64),
}

/// Largest M whose Z-window [M/2, M] is resolved by the run: the last
/// snapshot for a surviving run, half the blow-up time otherwise (beyond it
/// the nonlinear growth, not the linear-regime lower bound, drives Y).
pub fn resolvable_window(trace: &SolutionTrace) -> (f64, f64) {
    let last = trace.snapshots.last().map_or(0.0, |s| s.t);
    let hi = match trace.t_num {
        Some(t) => (0.5 * t).min(last),
        None => last,
    };
    (2.0f64.min(hi), hi)
}

pub fn y_log_growth(curve: &YCurve, window: (f64, f64)) -> Result<LogGrowth> {
    let (lo, hi) = window;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (&t, &v) in curve.t.iter().zip(&curve.y) {
        if t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12) {
            x.push(t.ln());
            y.push(v);
        }
    }
    let fit = linear_fit(&x, &y)?;
    Ok(LogGrowth {
        fit,
        c_low: fit.slope - 1.96 * fit.slope_stderr,
        c_high: fit.slope + 1.96 * fit.slope_stderr,
        window,
    })
}

// ---------------------------------------------------------------------------
// extremal ODE

/// Blow-up s of Y' = c1 s^{1-p} Y^p from Y(s0) = y0.
pub fn bernoulli_blowup(p: f64, c1: f64, s0: f64, y0: f64) -> Result<f64> {
    if !(p > 1.0 && c1 > 0.0 && s0 > 0.0 && y0 > 0.0) {
        return Err(Error::domain(MODULE, "bernoulli_blowup needs p > 1 and positive c1, s0, y0"));
    }
    let w0 = y0.powf(1.0 - p);
    if (p - 2.0).abs() < 1e-12 {
        return Ok(s0 * (w0 / c1).exp());
    }
    // Y^{1-p}(s0) = c1 (p-1) (s^{2-p} - s0^{2-p})/(2-p)
    let rhs = s0.powf(2.0 - p) + (2.0 - p) * w0 / (c1 * (p - 1.0));
    if rhs <= 0.0 {
        return Err(Error::non_convergence(
            MODULE,
            format!("Bernoulli phase does not blow up (p = {p}, Y0 = {y0}, s0 = {s0})"),
            rhs,
        ));
    }
    Ok(rhs.powf(1.0 / (2.0 - p)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremalLifespan {
    pub s_numeric: f64,
    pub s_closed: f64,
    /// Relative difference of the two.
    pub gap: f64,
    /// Start of the Bernoulli phase.
    pub s_switch: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSettings {
    pub rel_tol: f64,
    pub y_stop: f64,
    pub s_budget: f64,
    pub max_steps: usize,
}

impl Default for OdeSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            y_stop: 1e12,
            s_budget: 1e8,
            max_steps: 1_000_000,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn dp_step(f: &impl Fn(f64, f64) -> f64, s: f64, y: f64, h: f64) -> (f64, f64) {
    let mut k = [0.0; 7];
    for i in 0..7 {
        let yi = y + h * (0..i).map(|j| DP_A[i][j] * k[j]).sum::<f64>();
        k[i] = f(s + DP_C[i] * h, yi);
    }
    let next = y + h * (0..7).map(|i| DP_B[i] * k[i]).sum::<f64>();
    let err = h * (0..7).map(|i| DP_E[i] * k[i]).sum::<f64>();
    (next, err)
}

/// Integrates Y' = max(c0 ε^p, c1 s^{1-p} Y^p), Y(s_start) = c0 ε^p s_start, to
/// blow-up, and compares with the closed form of the Bernoulli phase.
pub fn extremal_ode_lifespan(
    p: f64,
    eps: f64,
    c0: f64,
    c1: f64,
    s_start: f64,
    settings: &OdeSettings,
) -> Result<ExtremalLifespan> {
    if !(p > 1.0) || !(eps > 0.0) || !(c0 > 0.0) || !(c1 > 0.0) || !(s_start > 0.0) {
        return Err(Error::domain(MODULE, "extremal ODE needs p > 1 and positive eps, c0, c1, s_start"));
    }
    let floor = c0 * eps.powf(p);
    // phase 1 is Y = floor·s; the Bernoulli term takes over at c1 s (floor)^{p-1} = 1
    let s_switch = (1.0 / (c1 * floor.powf(p - 1.0))).max(s_start);
    let s_closed = bernoulli_blowup(p, c1, s_switch, floor * s_switch)?;

    let f = |s: f64, y: f64| floor.max(c1 * s.powf(1.0 - p) * y.abs().powf(p));
    let mut s = s_start;
    let mut y = floor * s_start;
    let mut h = 1e-3 * s_start.max(1.0);
    let mut prev: Option<(f64, f64)> = None;
    let mut steps = 0;
    while y < settings.y_stop {
        if steps >= settings.max_steps || s > settings.s_budget {
            return Err(Error::non_convergence(
                MODULE,
                format!("no blow-up of the extremal ODE before s = {s}"),
                y,
            ));
        }
        // never step across the phase switch
        let mut hh = h;
        if s < s_switch && s + hh > s_switch {
            hh = s_switch - s;
        }
        let (next, err) = dp_step(&f, s, y, hh);
        let scale = settings.rel_tol * y.abs().max(next.abs());
        let ratio = if next.is_finite() { err.abs() / scale } else { f64::INFINITY };
        if ratio <= 1.0 {
            prev = Some((s, y));
            s += hh;
            y = next;
            steps += 1;
            let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            h = hh * grow;
        } else {
            // step halving, harder near blow-up
            h = hh * (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.5);
        }
        if h < 1e-15 * s {
            break;
        }
    }
    // Y^{1-p} is locally linear in s near blow-up; extrapolate its zero
    let (s1, y1) = prev.ok_or_else(|| Error::non_convergence(MODULE, "no accepted step", y))?;
    let w1 = y1.powf(1.0 - p);
    let w2 = y.powf(1.0 - p);
    let s_numeric = s + w2 * (s - s1) / (w1 - w2);
    Ok(ExtremalLifespan {
        s_numeric,
        s_closed,
        gap: (s_numeric - s_closed).abs() / s_closed,
        s_switch,
        steps,
    })
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub params: ModelParams,
    /// None when the run did not blow up within the budget.
    pub t_num: Option<f64>,
    pub refine_gap: Option<f64>,
    pub verdict: &'static str,
    /// ε^{-p(p-1)}.
    pub x_fit: f64,
    /// ln T_num.
    pub y_fit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepFit {
    pub fit: LinearFit,
    /// T_num non-increasing in ε across the completed runs.
    pub monotone: bool,
    /// T_num strictly increasing as ε decreases.
    pub strictly_monotone: bool,
}

/// Runs `solve` for each ε in parallel.
pub fn lifespan_sweep(
    base: &ModelParams,
    eps_list: &[f64],
    grid: &GridSpec,
    opts: &SolverOptions,
) -> Result<Vec<SweepRecord>> {
    base.validate()?;
    grid.validate()?;
    if eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::config(MODULE, "eps values must be positive"));
    }
    eps_list
        .par_iter()
        .map(|&eps| {
            let params = ModelParams { epsilon: eps, ..*base };
            let trace = solve_with(&InitialProfile::bump(eps), &params, grid, opts)?;
            let p = params.p;
            Ok(SweepRecord {
                params,
                t_num: trace.t_num,
                refine_gap: trace.refine_gap,
                verdict: trace.verdict.label(),
                x_fit: eps.powf(-p * (p - 1.0)),
                y_fit: trace.t_num.map(f64::ln),
            })
        })
        .collect()
}

/// Least squares of ln T_num against ε^{-p(p-1)} over completed runs.
pub fn sweep_fit(records: &[SweepRecord]) -> Result<SweepFit> {
    let mut done: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.t_num.map(|t| (r.params.epsilon, t)))
        .collect();
    if done.len() < 3 {
        return Err(Error::insufficient(
            MODULE,
            format!("{} completed runs, at least 3 needed for the lifespan fit", done.len()),
        ));
    }
    let x: Vec<f64> = records.iter().filter(|r| r.t_num.is_some()).map(|r| r.x_fit).collect();
    let y: Vec<f64> = records.iter().filter_map(|r| r.y_fit).collect();
    let fit = linear_fit(&x, &y)?;
    done.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let monotone = done.windows(2).all(|w| w[1].1 <= w[0].1);
    let strictly_monotone = done.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(SweepFit {
        fit,
        monotone,
        strictly_monotone,
    })
}
