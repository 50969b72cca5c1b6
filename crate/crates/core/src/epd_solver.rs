//! Radial solver for u_tt - u_rr - ((n-1)/r) u_r + (μ/t) u_t = t^α |u|^p with
//! u(0) = ε u₀, u_t(0) = 0.
//!
//! Space: finite-volume radial Laplacian on nodes r_i = i·Δr. Cell i owns
//! the shell [r_{i-1/2}, r_{i+1/2}] (a ball of radius Δr/2 at the origin),
//! so that
//!
//! ```text
//! (Lu)_i = (F_{i+1/2} - F_{i-1/2}) / V_i,   F_{i+1/2} = r_{i+1/2}^{n-1} (u_{i+1} - u_i) / Δr,
//! ```
//!
//! with V_i the shell volume divided by |S^{n-1}|. At the origin this is
//! 2n(u_1 - u_0)/Δr². The outer node carries a homogeneous Dirichlet value.
//!
//! Time: leapfrog, with the damping term averaged over levels k±1 and moved
//! into the coefficient of u^{k+1}. The first level comes from the Taylor
//! start u(Δt) = εu₀ + Δt²/2 · (εLu₀ + [α = 0]|εu₀|^p)/(1+μ).
//!
//! The staggered energy
//!
//! ```text
//! E^{k+1/2} = |S|/2 [Σ V_i ((u^{k+1}_i - u^k_i)/Δt)² + Σ r_{i+1/2}^{n-1} Δr D u^{k+1} D u^k]
//! ```
//!
//! obeys E^{k+1/2} - E^{k-1/2} = -Δt|S| Σ V (μ/t_k) w² + Δt|S| Σ V f^k w with
//! w = (u^{k+1} - u^{k-1})/(2Δt), exactly in exact arithmetic.

use crate::error::{Error, Result};
use crate::exponents::ModelParams;
use crate::test_functions::sphere_area;

const MODULE: &str = "epd_solver";

/// Relative level below which |u| counts as outside the support.
pub const SUPPORT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub r_max: f64,
    pub dr: f64,
    /// Δt / Δr.
    pub cfl: f64,
    pub t_budget: f64,
    pub blowup_threshold: f64,
}

impl GridSpec {
    /// Grid with the smallest admissible outer radius t_budget + 1 + 2Δr.
    pub fn new(dr: f64, cfl: f64, t_budget: f64) -> Self {
        Self {
            r_max: t_budget + 1.0 + 2.0 * dr,
            dr,
            cfl,
            t_budget,
            blowup_threshold: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dr > 0.0) || !self.dr.is_finite() {
            return Err(Error::config(MODULE, format!("dr must be positive, got {}", self.dr)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.9) {
            return Err(Error::config(MODULE, format!("cfl must lie in (0, 0.9], got {}", self.cfl)));
        }
        if !(self.t_budget > 0.0) || !self.t_budget.is_finite() {
            return Err(Error::config(MODULE, format!("t_budget must be positive, got {}", self.t_budget)));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::config(MODULE, "blowup_threshold must be positive"));
        }
        let need = self.t_budget + 1.0 + 2.0 * self.dr;
        if self.r_max < need - 1e-12 * need {
            return Err(Error::config(
                MODULE,
                format!(
                    "containment invariant r_max >= t_budget + 1 + 2*dr violated: r_max = {}, need {need}",
                    self.r_max
                ),
            ));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.cfl * self.dr
    }

    /// Index of the outer (Dirichlet) node.
    pub fn outer_index(&self) -> usize {
        (self.r_max / self.dr - 1e-9).ceil() as usize
    }
}

/// Initial data shapes. All are supported in r ≤ 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileShape {
    /// e · exp(-1/(1-r²)), sup = 1 at r = 0.
    Bump,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialProfile {
    pub shape: ProfileShape,
    pub amplitude: f64,
}

impl InitialProfile {
    pub fn bump(amplitude: f64) -> Self {
        Self {
            shape: ProfileShape::Bump,
            amplitude,
        }
    }

    pub fn zero() -> Self {
        Self {
            shape: ProfileShape::Zero,
            amplitude: 0.0,
        }
    }

    /// Unscaled shape u₀(r).
    pub fn shape_at(&self, r: f64) -> f64 {
        match self.shape {
            ProfileShape::Zero => 0.0,
            ProfileShape::Bump => {
                if r.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - r * r)).exp()
                }
            }
        }
    }

    /// ε u₀(r).
    pub fn value(&self, r: f64) -> f64 {
        self.amplitude * self.shape_at(r)
    }
}

/// Two consecutive time levels on the radial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    pub t: f64,
    pub dt: f64,
    pub dr: f64,
    /// u(t, r_i) for i = 0..=outer index.
    pub values: Vec<f64>,
    /// u(t - Δt, r_i).
    pub prev_values: Vec<f64>,
    /// Nodes above this index are exactly zero on both levels.
    pub active: usize,
}

impl RadialField {
    pub fn sup_norm(&self) -> f64 {
        self.values[..=self.active]
            .iter()
            .fold(0.0, |m: f64, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
    }

    /// Largest r_i with |u| above `SUPPORT_TOL` times the sup norm.
    pub fn support_radius(&self) -> f64 {
        let sup = self.sup_norm();
        if !(sup > 0.0) {
            return 0.0;
        }
        let cut = SUPPORT_TOL * sup;
        (0..=self.active)
            .rev()
            .find(|&i| self.values[i].abs() > cut)
            .map_or(0.0, |i| i as f64 * self.dr)
    }

    pub fn radius(&self, i: usize) -> f64 {
        i as f64 * self.dr
    }
}

/// Geometry of the radial operator.
#[derive(Debug, Clone)]
pub struct RadialOperator {
    n: u32,
    dr: f64,
    outer: usize,
    area: f64,
    /// V_i for i = 0..=outer.
    volume: Vec<f64>,
    inv_volume: Vec<f64>,
    /// r_{i+1/2}^{n-1} / Δr for i = 0..outer.
    flux: Vec<f64>,
}

impl RadialOperator {
    pub fn new(n: u32, grid: &GridSpec) -> Self {
        let dr = grid.dr;
        let outer = grid.outer_index();
        let nf = n as f64;
        let half = |i: usize| (i as f64 + 0.5) * dr;
        let mut volume = Vec::with_capacity(outer + 1);
        volume.push(half(0).powf(nf) / nf);
        for i in 1..=outer {
            volume.push((half(i).powf(nf) - half(i - 1).powf(nf)) / nf);
        }
        let flux = (0..outer).map(|i| half(i).powi(n as i32 - 1) / dr).collect();
        let inv_volume = volume.iter().map(|v| 1.0 / v).collect();
        Self {
            n,
            dr,
            outer,
            area: sphere_area(n),
            volume,
            inv_volume,
            flux,
        }
    }

    pub fn outer(&self) -> usize {
        self.outer
    }

    pub fn dim(&self) -> u32 {
        self.n
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn volume(&self, i: usize) -> f64 {
        self.volume[i]
    }

    /// (Lu)_i for i < outer.
    #[inline]
    pub fn laplacian(&self, u: &[f64], i: usize) -> f64 {
        let right = self.flux[i] * (u[i + 1] - u[i]);
        let left = if i == 0 { 0.0 } else { self.flux[i - 1] * (u[i] - u[i - 1]) };
        (right - left) * self.inv_volume[i]
    }

    /// Staggered energy of two consecutive levels, restricted to nodes
    /// 0..=`last` (cells) and edges whose both ends are ≤ `last`.
    pub fn energy_between(&self, newer: &[f64], older: &[f64], dt: f64, last: usize) -> f64 {
        let last = last.min(self.outer);
        let mut kinetic = 0.0;
        for i in 0..=last {
            let v = (newer[i] - older[i]) / dt;
            kinetic += self.volume[i] * v * v;
        }
        let mut potential = 0.0;
        for i in 0..last.min(self.outer) {
            potential += self.flux[i] * (newer[i + 1] - newer[i]) * (older[i + 1] - older[i]);
        }
        0.5 * self.area * (kinetic + potential)
    }
}

/// Largest Δt/Δr for which the leapfrog update is stable in dimension n:
/// 2/sqrt(λ_max Δr²) with λ_max the top eigenvalue of -L. The origin row makes
/// this smaller than 1 for n ≥ 2. λ_max Δr² does not depend on Δr, so it is
/// computed on a unit-spaced grid by Sturm-sequence bisection.
pub fn stable_cfl(n: u32) -> f64 {
    const CELLS: usize = 400;
    let nf = n as f64;
    let half = |i: usize| i as f64 + 0.5;
    let volume: Vec<f64> = (0..CELLS)
        .map(|i| {
            if i == 0 {
                half(0).powf(nf) / nf
            } else {
                (half(i).powf(nf) - half(i - 1).powf(nf)) / nf
            }
        })
        .collect();
    let flux: Vec<f64> = (0..CELLS).map(|i| half(i).powi(n as i32 - 1)).collect();
    // symmetric form V^{-1/2} K V^{-1/2}, Dirichlet beyond the last cell
    let diag: Vec<f64> = (0..CELLS)
        .map(|i| (flux[i] + if i == 0 { 0.0 } else { flux[i - 1] }) / volume[i])
        .collect();
    let off: Vec<f64> = (0..CELLS - 1)
        .map(|i| flux[i] / (volume[i] * volume[i + 1]).sqrt())
        .collect();
    let below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..CELLS {
            let o2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
            d = diag[i] - x - o2 / d;
            if d == 0.0 {
                d = -f64::EPSILON;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let mut lo = 0.0;
    let mut hi = (0..CELLS)
        .map(|i| diag[i] + if i > 0 { off[i - 1] } else { 0.0 } + if i + 1 < CELLS { off[i] } else { 0.0 })
        .fold(0.0, f64::max);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if below(mid) >= CELLS {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    2.0 / hi.sqrt()
}

/// E at the half level between `field.prev_values` and `field.values`, and the
/// local energy on the ball of radius `cone_radius` (the slice of a backward
/// light cone with vertex on the axis).
pub fn energy(field: &RadialField, params: &ModelParams, cone_radius: f64) -> (f64, f64) {
    let grid = GridSpec {
        r_max: (field.values.len() - 1) as f64 * field.dr,
        dr: field.dr,
        cfl: field.dt / field.dr,
        t_budget: 0.0,
        blowup_threshold: f64::INFINITY,
    };
    let op = RadialOperator::new(params.n, &grid);
    let total = op.energy_between(&field.values, &field.prev_values, field.dt, op.outer);
    let last = (cone_radius / field.dr + 1e-9).floor().max(0.0) as usize;
    let local = op.energy_between(&field.values, &field.prev_values, field.dt, last);
    (total, local)
}

fn check_setup(params: &ModelParams, grid: &GridSpec) -> Result<()> {
    grid.validate()?;
    params.validate()?;
    let limit = stable_cfl(params.n);
    if grid.cfl >= limit {
        return Err(Error::config(
            MODULE,
            format!("cfl = {} is above the stability limit {limit:.4} for n = {}", grid.cfl, params.n),
        ));
    }
    Ok(())
}

/// Taylor start at t = Δt.
pub fn first_step(profile: &InitialProfile, params: &ModelParams, grid: &GridSpec) -> Result<RadialField> {
    check_setup(params, grid)?;
    let op = RadialOperator::new(params.n, grid);
    Ok(Scheme::new(params, grid, &op, true, true).start(profile))
}

/// One leapfrog step with default options.
pub fn step(field: &RadialField, params: &ModelParams, grid: &GridSpec) -> Result<RadialField> {
    step_with(field, params, grid, &SolverOptions::default())
}

/// One leapfrog step honouring `opts.nonlinear` and `opts.causal_window`.
pub fn step_with(field: &RadialField, params: &ModelParams, grid: &GridSpec, opts: &SolverOptions) -> Result<RadialField> {
    if !(field.t > 0.0) {
        return Err(Error::domain(MODULE, "step requires t > 0; use first_step at t = 0"));
    }
    let op = RadialOperator::new(params.n, grid);
    if field.values.len() != op.outer() + 1 {
        return Err(Error::domain(MODULE, "field does not match the grid"));
    }
    let scheme = Scheme::new(params, grid, &op, opts.nonlinear, opts.causal_window);
    let mut next = field.clone();
    let mut scratch = Vec::new();
    scheme.advance(&mut next, &mut scratch, None);
    Ok(next)
}

/// Increments of the damping and work terms over one step.
#[derive(Debug, Clone, Copy, Default)]
struct StepBudget {
    dissipation: f64,
    work: f64,
}

/// A configured scheme: operator, parameters, step size and source switch.
#[derive(Clone, Copy)]
struct Scheme<'a> {
    op: &'a RadialOperator,
    mu: f64,
    alpha: f64,
    p: f64,
    dt: f64,
    nonlinear: bool,
    causal: bool,
}

impl<'a> Scheme<'a> {
    fn new(params: &ModelParams, grid: &GridSpec, op: &'a RadialOperator, nonlinear: bool, causal: bool) -> Self {
        Self {
            op,
            mu: params.mu,
            alpha: params.alpha,
            p: params.p,
            dt: grid.dt(),
            nonlinear,
            causal,
        }
    }

    fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..*self }
    }

    #[inline]
    fn power(&self, u: f64) -> f64 {
        if self.p == 2.0 {
            u * u
        } else {
            u.abs().powf(self.p)
        }
    }

    /// Last node updated when producing the level at `t_next`. In causal
    /// mode nodes beyond r = t_next + 1 + 2Δr are held at zero; otherwise the
    /// window grows by one node per step.
    fn window(&self, t_next: f64, active: usize) -> usize {
        let last = if self.causal {
            ((t_next + 1.0) / self.op.dr + 2.0 + 1e-9).floor() as usize
        } else {
            active + 1
        };
        last.min(self.op.outer - 1)
    }

    fn start(&self, profile: &InitialProfile) -> RadialField {
        let outer = self.op.outer;
        let dr = self.op.dr;
        let mut u0 = vec![0.0; outer + 1];
        for (i, v) in u0.iter_mut().enumerate().take(outer) {
            *v = profile.value(i as f64 * dr);
        }
        let support = ((1.0 / dr).ceil() as usize).min(outer - 1);
        let active = self.window(self.dt, support);
        let mut u1 = u0.clone();
        let source_on = self.nonlinear && self.alpha == 0.0;
        for i in 0..=active {
            let mut a = self.op.laplacian(&u0, i);
            if source_on {
                a += self.power(u0[i]);
            }
            u1[i] = u0[i] + 0.5 * self.dt * self.dt * a / (1.0 + self.mu);
        }
        RadialField {
            t: self.dt,
            dt: self.dt,
            dr,
            values: u1,
            prev_values: u0,
            active,
        }
    }

    /// Advances `field` by one step. `source`, when given, replaces the
    /// nonlinear term (indexed like the grid).
    fn advance(&self, field: &mut RadialField, scratch: &mut Vec<f64>, source: Option<&[f64]>) -> StepBudget {
        let dt = self.dt;
        let t = field.t;
        let inv_dt2 = 1.0 / (dt * dt);
        let c = self.mu / (2.0 * t * dt);
        let inv_denom = 1.0 / (inv_dt2 + c);
        let weight = t.powf(self.alpha);
        let last = self.window(t + dt, field.active);
        let u = &field.values;
        let um = &field.prev_values;
        scratch.clear();
        scratch.resize(u.len(), 0.0);
        let mut budget = StepBudget::default();
        for i in 0..=last {
            let f = match source {
                Some(s) => s[i],
                None if self.nonlinear => weight * self.power(u[i]),
                None => 0.0,
            };
            let rhs = (2.0 * u[i] - um[i]) * inv_dt2 + c * um[i] + self.op.laplacian(u, i) + f;
            let next = rhs * inv_denom;
            scratch[i] = next;
            let w = (next - um[i]) / (2.0 * dt);
            let vol = self.op.volume[i];
            budget.dissipation += vol * w * w;
            budget.work += vol * f * w;
        }
        budget.dissipation *= dt * self.op.area * self.mu / t;
        budget.work *= dt * self.op.area;
        // rotate levels: prev <- values <- scratch
        std::mem::swap(&mut field.prev_values, &mut field.values);
        std::mem::swap(&mut field.values, scratch);
        field.t = t + dt;
        field.dt = dt;
        field.active = last.max(field.active);
        budget
    }
}

/// Outcome of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    /// sup|u| exceeded the threshold on two consecutive steps; `t_num` is the
    /// first crossing, interpolated in ln sup|u|.
    BlewUp { t_num: f64 },
    Survived { t_budget: f64 },
    /// Non-finite values appeared before any threshold crossing.
    Unstable { t: f64 },
}

impl Verdict {
    pub fn blowup_time(&self) -> Option<f64> {
        match self {
            Verdict::BlewUp { t_num } => Some(*t_num),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::BlewUp { .. } => "blew_up",
            Verdict::Survived { .. } => "survived",
            Verdict::Unstable { .. } => "unstable",
        }
    }
}

/// Radial field sample at one time, on every `r_stride`-th node.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotSpec {
    /// Requested spacing in time; rounded to a whole number of steps.
    pub dt: f64,
    pub r_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Off gives the linear damped wave equation.
    pub nonlinear: bool,
    /// Hold nodes beyond r = t + 1 + 2Δr at zero. When off, the update
    /// window grows by one node per step.
    pub causal_window: bool,
    pub snapshots: Option<SnapshotSpec>,
    /// Re-run the last stretch before blow-up with halved Δt.
    pub refine: bool,
    pub refine_tol: f64,
    pub max_refinements: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nonlinear: true,
            causal_window: true,
            snapshots: None,
            refine: true,
            refine_tol: 0.01,
            max_refinements: 4,
        }
    }
}

/// One refinement level: its time step and blow-up time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub dt: f64,
    pub t_num: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTrace {
    pub times: Vec<f64>,
    pub sup_norm: Vec<f64>,
    /// Staggered energy between the sample and the level before it.
    pub energy: Vec<f64>,
    /// Cumulative ∫∫ (μ/s) u_s² dx ds.
    pub damping_dissipation: Vec<f64>,
    /// Cumulative ∫∫ s^α |u|^p u_s dx ds.
    pub nonlinear_work: Vec<f64>,
    pub support_radius: Vec<f64>,
    pub verdict: Verdict,
    /// Blow-up time after refinement.
    pub t_num: Option<f64>,
    /// Relative change of `t_num` over the last refinement.
    pub refine_gap: Option<f64>,
    pub refinements: Vec<Refinement>,
    pub snapshots: Vec<Snapshot>,
    pub snapshot_dr: f64,
    pub dt: f64,
    pub dr: f64,
    pub n: u32,
}

impl SolutionTrace {
    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone)]
struct Checkpoint {
    t: f64,
    /// u at t - 2Δt, t - Δt, t.
    levels: [Vec<f64>; 3],
    active: usize,
}

struct Crossing {
    prev_sup: f64,
    prev_t: f64,
    first: Option<f64>,
}

impl Crossing {
    fn new() -> Self {
        Self {
            prev_sup: 0.0,
            prev_t: 0.0,
            first: None,
        }
    }

    /// Feeds one sample; returns a verdict once decided.
    fn feed(&mut self, t: f64, sup: f64, threshold: f64) -> Option<Verdict> {
        let out = if sup.is_nan() {
            Some(match self.first {
                Some(t_num) => Verdict::BlewUp { t_num },
                None => Verdict::Unstable { t },
            })
        } else if sup > threshold {
            match self.first {
                Some(t_num) => Some(Verdict::BlewUp { t_num }),
                None => {
                    let lo = self.prev_sup.max(f64::MIN_POSITIVE).ln();
                    let hi = sup.ln();
                    let frac = if hi.is_finite() && hi > lo {
                        ((threshold.ln() - lo) / (hi - lo)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    self.first = Some(self.prev_t + frac * (t - self.prev_t));
                    None
                }
            }
        } else {
            self.first = None;
            None
        };
        self.prev_sup = sup;
        self.prev_t = t;
        out
    }
}

fn lagrange_back(levels: &[Vec<f64>; 3], x: f64, active: usize) -> Vec<f64> {
    // quadratic through offsets -2, -1, 0 evaluated at x ∈ (-1, 0)
    let w2 = 0.5 * x * (x + 1.0);
    let w1 = -x * (x + 2.0);
    let w0 = 0.5 * (x + 1.0) * (x + 2.0);
    let mut out = vec![0.0; levels[2].len()];
    for i in 0..=active.min(out.len() - 1) {
        out[i] = w2 * levels[0][i] + w1 * levels[1][i] + w0 * levels[2][i];
    }
    out
}

/// Marches from a checkpoint with step `dt` until blow-up or the budget.
fn march_from(
    scheme: &Scheme,
    cp: &Checkpoint,
    base_dt: f64,
    grid: &GridSpec,
) -> Verdict {
    let x = -scheme.dt / base_dt;
    let mut field = RadialField {
        t: cp.t,
        dt: scheme.dt,
        dr: scheme.op.dr,
        values: cp.levels[2].clone(),
        prev_values: lagrange_back(&cp.levels, x, cp.active),
        active: cp.active,
    };
    let mut scratch = Vec::new();
    let mut crossing = Crossing::new();
    crossing.prev_sup = field.sup_norm();
    crossing.prev_t = field.t;
    while field.t < grid.t_budget - 1e-12 {
        scheme.advance(&mut field, &mut scratch, None);
        if let Some(v) = crossing.feed(field.t, field.sup_norm(), grid.blowup_threshold) {
            return v;
        }
    }
    Verdict::Survived {
        t_budget: grid.t_budget,
    }
}

/// Solves with default options.
pub fn solve(profile: &InitialProfile, params: &ModelParams, grid: &GridSpec) -> Result<SolutionTrace> {
    solve_with(profile, params, grid, &SolverOptions::default())
}

pub fn solve_with(
    profile: &InitialProfile,
    params: &ModelParams,
    grid: &GridSpec,
    opts: &SolverOptions,
) -> Result<SolutionTrace> {
    check_setup(params, grid)?;
    let op = RadialOperator::new(params.n, grid);
    let scheme = Scheme::new(params, grid, &op, opts.nonlinear, opts.causal_window);
    let dt = grid.dt();

    let mut trace = SolutionTrace {
        times: Vec::new(),
        sup_norm: Vec::new(),
        energy: Vec::new(),
        damping_dissipation: Vec::new(),
        nonlinear_work: Vec::new(),
        support_radius: Vec::new(),
        verdict: Verdict::Survived {
            t_budget: grid.t_budget,
        },
        t_num: None,
        refine_gap: None,
        refinements: Vec::new(),
        snapshots: Vec::new(),
        snapshot_dr: grid.dr * opts.snapshots.map_or(1, |s| s.r_stride.max(1)) as f64,
        dt,
        dr: grid.dr,
        n: params.n,
    };

    let snap_every = opts
        .snapshots
        .map(|s| ((s.dt / dt).round() as usize).max(1));
    let r_stride = opts.snapshots.map_or(1, |s| s.r_stride.max(1));
    let take_snapshot = |trace: &mut SolutionTrace, t: f64, u: &[f64], active: usize| {
        let last = (active + 1).min(u.len() - 1);
        let values = u[..=last].iter().step_by(r_stride).copied().collect();
        trace.snapshots.push(Snapshot { t, values });
    };

    let mut field = scheme.start(profile);
    // t = 0 row
    {
        let u0 = &field.prev_values;
        let initial = RadialField {
            t: 0.0,
            dt,
            dr: grid.dr,
            values: u0.clone(),
            prev_values: u0.clone(),
            active: field.active,
        };
        trace.times.push(0.0);
        trace.sup_norm.push(initial.sup_norm());
        trace.energy.push(0.5 * op.area() * {
            let mut pot = 0.0;
            for i in 0..field.active {
                let d = u0[i + 1] - u0[i];
                pot += op.flux[i] * d * d;
            }
            pot
        });
        trace.damping_dissipation.push(0.0);
        trace.nonlinear_work.push(0.0);
        trace.support_radius.push(initial.support_radius());
        if snap_every.is_some() {
            take_snapshot(&mut trace, 0.0, u0, field.active);
        }
    }

    let mut dissipation = 0.0;
    let mut work = 0.0;
    let mut crossing = Crossing::new();
    crossing.prev_sup = trace.sup_norm[0];
    let mut scratch = Vec::new();
    let mut older = field.prev_values.clone();
    let checkpoint_every = ((0.25 / dt).round() as usize).max(1);
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut step_index = 1usize;

    let record = |trace: &mut SolutionTrace, field: &RadialField, dissipation: f64, work: f64| {
        trace.times.push(field.t);
        trace.sup_norm.push(field.sup_norm());
        trace.energy.push(op.energy_between(&field.values, &field.prev_values, dt, field.active + 1));
        trace.damping_dissipation.push(dissipation);
        trace.nonlinear_work.push(work);
        trace.support_radius.push(field.support_radius());
    };
    record(&mut trace, &field, dissipation, work);
    if let Some(every) = snap_every {
        if step_index % every == 0 {
            take_snapshot(&mut trace, field.t, &field.values, field.active);
        }
    }
    if let Some(v) = crossing.feed(field.t, trace.sup_norm[1], grid.blowup_threshold) {
        trace.verdict = v;
    }

    while matches!(trace.verdict, Verdict::Survived { .. }) && field.t < grid.t_budget - 1e-12 {
        if step_index % checkpoint_every == 0 {
            checkpoints.push(Checkpoint {
                t: field.t,
                levels: [older.clone(), field.prev_values.clone(), field.values.clone()],
                active: field.active,
            });
            // only the latest checkpoint at or below 0.9·t can still be needed
            let keep_from = checkpoints
                .iter()
                .rposition(|c| c.t <= 0.9 * field.t)
                .unwrap_or(0);
            checkpoints.drain(..keep_from);
        }
        older.clone_from(&field.prev_values);
        let budget = scheme.advance(&mut field, &mut scratch, None);
        step_index += 1;
        dissipation += budget.dissipation;
        work += budget.work;
        record(&mut trace, &field, dissipation, work);
        if let Some(every) = snap_every {
            if step_index % every == 0 {
                take_snapshot(&mut trace, field.t, &field.values, field.active);
            }
        }
        let sup = *trace.sup_norm.last().unwrap();
        if let Some(v) = crossing.feed(field.t, sup, grid.blowup_threshold) {
            trace.verdict = v;
        }
    }

    if let Verdict::BlewUp { t_num } = trace.verdict {
        trace.t_num = Some(t_num);
        trace.refinements.push(Refinement { dt, t_num: Some(t_num) });
        let cp = checkpoints.iter().rev().find(|c| c.t <= 0.9 * t_num);
        if let (true, Some(cp)) = (opts.refine, cp) {
            let mut prev = t_num;
            let mut level_dt = dt;
            for _ in 0..opts.max_refinements {
                level_dt *= 0.5;
                let fine = scheme.with_dt(level_dt);
                let v = march_from(&fine, cp, dt, grid);
                let t_new = v.blowup_time();
                trace.refinements.push(Refinement { dt: level_dt, t_num: t_new });
                match t_new {
                    Some(t_new) => {
                        let gap = (t_new - prev).abs() / t_new;
                        trace.t_num = Some(t_new);
                        trace.refine_gap = Some(gap);
                        prev = t_new;
                        if gap < opts.refine_tol {
                            break;
                        }
                    }
                    None => {
                        trace.refine_gap = Some(f64::INFINITY);
                        break;
                    }
                }
            }
        }
    }
    Ok(trace)
}

/// Picard iteration for the same discrete problem: each iterate solves the
/// linear scheme with source t^α|v|^p taken from the previous iterate.
/// Returns the final iterate's trace and the sup-norm gaps between iterates.
pub fn picard_solve(
    profile: &InitialProfile,
    params: &ModelParams,
    grid: &GridSpec,
    t_small: f64,
    max_iter: usize,
) -> Result<(SolutionTrace, Vec<f64>)> {
    check_setup(params, grid)?;
    if !(t_small > 0.0 && t_small <= grid.t_budget) {
        return Err(Error::config(MODULE, "t_small must lie in (0, t_budget]"));
    }
    let op = RadialOperator::new(params.n, grid);
    let dt = grid.dt();
    let steps = (t_small / dt).round().max(1.0) as usize;

    // first level is shared by every iterate: the source at t = 0 is |εu₀|^p
    let nonlinear = Scheme::new(params, grid, &op, true, true);
    let linear = Scheme::new(params, grid, &op, false, true);

    let run = |source_levels: Option<&Vec<Vec<f64>>>| -> Vec<Vec<f64>> {
        let start = if source_levels.is_some() {
            nonlinear.start(profile)
        } else {
            linear.start(profile)
        };
        let mut levels = vec![start.prev_values.clone(), start.values.clone()];
        let mut field = start;
        let mut scratch = Vec::new();
        let mut src = vec![0.0; field.values.len()];
        for k in 1..steps {
            let source = source_levels.map(|v| {
                let w = field.t.powf(params.alpha);
                for (s, x) in src.iter_mut().zip(&v[k]) {
                    *s = w * x.abs().powf(params.p);
                }
                src.as_slice()
            });
            linear.advance(&mut field, &mut scratch, source);
            levels.push(field.values.clone());
        }
        levels
    };

    let mut current = run(None);
    let mut gaps = Vec::new();
    for _ in 0..max_iter {
        let next = run(Some(&current));
        let gap = next
            .iter()
            .zip(&current)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        current = next;
        gaps.push(gap);
        if !gap.is_finite() {
            return Err(Error::non_convergence(MODULE, format!("Picard iterates diverged, gaps {gaps:?}"), gap));
        }
        let k = gaps.len();
        if k >= 4 && gaps[k - 1] > gaps[k - 2] && gaps[k - 2] > gaps[k - 3] && gaps[k - 3] > gaps[k - 4] {
            return Err(Error::non_convergence(MODULE, format!("Picard gaps grow: {gaps:?}"), gap));
        }
        let scale = current.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if gap <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let mut trace = SolutionTrace {
        times: Vec::with_capacity(current.len()),
        sup_norm: Vec::new(),
        energy: Vec::new(),
        damping_dissipation: Vec::new(),
        nonlinear_work: Vec::new(),
        support_radius: Vec::new(),
        verdict: Verdict::Survived { t_budget: t_small },
        t_num: None,
        refine_gap: None,
        refinements: Vec::new(),
        snapshots: Vec::new(),
        snapshot_dr: grid.dr,
        dt,
        dr: grid.dr,
        n: params.n,
    };
    let mut dissipation = 0.0;
    for (k, level) in current.iter().enumerate() {
        let t = k as f64 * dt;
        let field = RadialField {
            t,
            dt,
            dr: grid.dr,
            values: level.clone(),
            prev_values: if k > 0 { current[k - 1].clone() } else { level.clone() },
            active: op.outer() - 1,
        };
        if k >= 2 {
            let t_mid = (k - 1) as f64 * dt;
            let mut inc = 0.0;
            for i in 0..op.outer() {
                let w = (level[i] - current[k - 2][i]) / (2.0 * dt);
                inc += op.volume(i) * params.mu / t_mid * w * w;
            }
            dissipation += inc * dt * op.area();
        }
        trace.times.push(t);
        trace.sup_norm.push(field.sup_norm());
        trace.energy.push(op.energy_between(&field.values, &field.prev_values, dt, op.outer()));
        trace.damping_dissipation.push(dissipation);
        trace.nonlinear_work.push(f64::NAN);
        trace.support_radius.push(field.support_radius());
        trace.snapshots.push(Snapshot {
            t,
            values: level.clone(),
        });
    }
    Ok((trace, gaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_params(n: u32, mu: f64) -> ModelParams {
        ModelParams {
            n,
            mu,
            alpha: 0.0,
            p: 2.0,
            epsilon: 1.0,
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.01, 0.5, 10.0).validate().is_ok());
        let mut g = GridSpec::new(0.01, 0.5, 10.0);
        g.r_max = 5.0;
        let err = g.validate().unwrap_err();
        assert!(err.to_string().contains("containment"));
        g = GridSpec::new(0.01, 0.95, 10.0);
        assert!(g.validate().is_err());
    }

    #[test]
    fn laplacian_is_exact_on_quadratics() {
        for n in [2u32, 3, 5] {
            let grid = GridSpec::new(0.1, 0.5, 2.0);
            let op = RadialOperator::new(n, &grid);
            let u: Vec<f64> = (0..=op.outer()).map(|i| (i as f64 * 0.1).powi(2)).collect();
            for i in 0..op.outer() - 1 {
                assert_relative_eq!(op.laplacian(&u, i), 2.0 * n as f64, max_relative = 1e-12);
            }
            // origin stencil is 2n(u1 - u0)/dr²
            let v: Vec<f64> = (0..=op.outer()).map(|i| (i as f64).sin()).collect();
            assert_relative_eq!(
                op.laplacian(&v, 0),
                2.0 * n as f64 * (v[1] - v[0]) / 0.01,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = GridSpec::new(0.02, 0.5, 1.0);
        let params = linear_params(3, 1.0);
        let f = first_step(&InitialProfile::zero(), &params, &grid).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        let g = step(&f, &params, &grid).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stability_limit() {
        let c3 = stable_cfl(3);
        assert!(c3 > 0.79 && c3 < 0.8, "{c3}");
        assert!(stable_cfl(2) > stable_cfl(3) && stable_cfl(5) < stable_cfl(3));
        let params = linear_params(3, 0.0);
        let mut grid = GridSpec::new(0.05, 0.8, 1.0);
        assert!(matches!(
            first_step(&InitialProfile::bump(1.0), &params, &grid),
            Err(Error::Config { .. })
        ));
        grid.cfl = 0.78;
        let opts = SolverOptions { nonlinear: false, ..Default::default() };
        grid.t_budget = 40.0;
        grid.r_max = 42.0;
        let tr = solve_with(&InitialProfile::bump(1.0), &params, &grid, &opts).unwrap();
        assert!(tr.sup_norm.iter().all(|&s| s < 5.0));
        assert!(*tr.sup_norm.last().unwrap() < 0.1);
    }

    #[test]
    fn bump_profile() {
        let b = InitialProfile::bump(2.0);
        assert_relative_eq!(b.value(0.0), 2.0, max_relative = 1e-15);
        assert_eq!(b.value(1.0), 0.0);
        assert_eq!(b.value(1.5), 0.0);
        assert!(b.value(0.99) > 0.0);
    }

    #[test]
    fn crossing_logic() {
        let mut c = Crossing::new();
        c.prev_sup = 1.0;
        assert!(c.feed(0.1, 10.0, 100.0).is_none());
        assert!(c.feed(0.2, 1000.0, 100.0).is_none());
        let v = c.feed(0.3, 1e5, 100.0).unwrap();
        let t = v.blowup_time().unwrap();
        assert_relative_eq!(t, 0.15, max_relative = 1e-12);
        let mut c = Crossing::new();
        assert!(matches!(c.feed(0.1, f64::NAN, 1.0), Some(Verdict::Unstable { .. })));
    }

    #[test]
    fn lagrange_weights_at_half_step() {
        let levels = [vec![1.0], vec![0.0], vec![0.0]];
        assert_relative_eq!(lagrange_back(&levels, -0.5, 0)[0], -0.125);
        let levels = [vec![0.0], vec![1.0], vec![0.0]];
        assert_relative_eq!(lagrange_back(&levels, -0.5, 0)[0], 0.75);
        let levels = [vec![0.0], vec![0.0], vec![1.0]];
        assert_relative_eq!(lagrange_back(&levels, -0.5, 0)[0], 0.375);
    }
}
