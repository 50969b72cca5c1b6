//! The test-function stack: the cutoff η, the sphere integral φ, and
//!
//! ```text
//! b_q(t, r) = ∫_0^1 h(λt) φ(λr) λ^{q-1} dλ
//! ```
//!
//! together with its time derivatives and Laplacian.
//!
//! All λ-integrals are evaluated on scaled factors, h̃(s) = e^s h(s) and
//! φ̃(x) = e^{-x} φ(x), so that h(λt)φ(λr) = h̃ φ̃ e^{-λ(t-r)} never
//! overflows. The interval (0, 1] is cut into geometric panels
//! [ρ^{k+1}, ρ^k] with a Gauss–Legendre rule on each; once λ·max(t, r, 1)
//! is deep inside the small-argument regime the remainder is added from the
//! leading power law of the integrand.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exponents::{q_exponent, ModelParams};
use crate::fit::linear_fit;
use crate::quadrature::{tanh_sinh, GaussLegendre};
use crate::special_functions::{gamma_fn, h_limit_constant, h_parts_scaled, SpecFunConfig};

const MODULE: &str = "test_functions";

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

// ---------------------------------------------------------------------------
// cutoff

/// Smooth cutoff: 1 on (-∞, 1/2], 0 on [1, ∞), and on (1/2, 1) the
/// normalized tail integral of the bump ψ(s) = exp(-1/((s-1/2)(1-s))).
#[derive(Debug, Clone)]
pub struct Cutoff {
    gl: GaussLegendre,
    norm: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Self::new()
    }
}

fn bump(s: f64) -> f64 {
    let g = (s - 0.5) * (1.0 - s);
    if g <= 0.0 {
        0.0
    } else {
        (-1.0 / g).exp()
    }
}

fn bump_d1(s: f64) -> f64 {
    let g = (s - 0.5) * (1.0 - s);
    if g <= 0.0 {
        0.0
    } else {
        (-1.0 / g).exp() * (1.5 - 2.0 * s) / (g * g)
    }
}

impl Cutoff {
    pub fn new() -> Self {
        let gl = GaussLegendre::new(64);
        let norm = gl.integrate(0.5, 1.0, bump);
        Self { gl, norm }
    }

    /// η(s).
    pub fn eta(&self, s: f64) -> f64 {
        if s <= 0.5 {
            1.0
        } else if s >= 1.0 {
            0.0
        } else if s <= 0.75 {
            1.0 - self.gl.integrate(0.5, s, bump) / self.norm
        } else {
            self.gl.integrate(s, 1.0, bump) / self.norm
        }
    }

    /// η'(s).
    pub fn eta_d1(&self, s: f64) -> f64 {
        -bump(s) / self.norm
    }

    /// η''(s).
    pub fn eta_d2(&self, s: f64) -> f64 {
        -bump_d1(s) / self.norm
    }

    /// η_t(s) = η(s/t).
    pub fn eta_scaled(&self, s: f64, t: f64) -> f64 {
        self.eta(s / t)
    }

    /// η_t(s)^k and its first two derivatives in s.
    pub fn eta_scaled_power(&self, s: f64, t: f64, k: f64) -> (f64, f64, f64) {
        let x = s / t;
        let e = self.eta(x);
        if e <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let d1 = self.eta_d1(x) / t;
        let d2 = self.eta_d2(x) / (t * t);
        let v = e.powf(k);
        let v1 = k * e.powf(k - 1.0) * d1;
        let v2 = k * (k - 1.0) * e.powf(k - 2.0) * d1 * d1 + k * e.powf(k - 1.0) * d2;
        (v, v1, v2)
    }
}

// ---------------------------------------------------------------------------
// sphere integral

/// Surface area |S^{d-1}| = 2π^{d/2}/Γ(d/2) of the unit sphere in R^d.
pub fn sphere_area(d: u32) -> f64 {
    let half = 0.5 * d as f64;
    2.0 * PI.powf(half) / statrs::function::gamma::gamma(half)
}

/// Quadrature settings for the polar form of φ.
#[derive(Debug, Clone)]
pub struct AngleQuad {
    pub nodes: usize,
    /// The integrand e^{x(cos θ - 1)} is cut where its exponent drops below
    /// -`exponent_cut`.
    pub exponent_cut: f64,
    gl: GaussLegendre,
}

impl AngleQuad {
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            exponent_cut: 45.0,
            gl: GaussLegendre::new(nodes.max(1)),
        }
    }
}

impl Default for AngleQuad {
    fn default() -> Self {
        Self::new(128)
    }
}

impl PartialEq for AngleQuad {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.exponent_cut == other.exponent_cut
    }
}

/// φ̃(x) = e^{-x}φ(x) and its derivative, by the polar integral
/// |S^{n-2}| ∫_0^π e^{x(cos θ - 1)} sin^{n-2}θ dθ.
pub fn phi_scaled(x: f64, n: u32, quad: &AngleQuad) -> (f64, f64) {
    let area = sphere_area(n);
    if x < 1e-9 {
        let nf = n as f64;
        let v = area * (-x).exp() * (1.0 + x * x / (2.0 * nf));
        return (v, -area * (1.0 - x / nf));
    }
    let theta_max = if quad.exponent_cut / x >= 2.0 {
        PI
    } else {
        (1.0 - quad.exponent_cut / x).acos()
    };
    let k = n as i32 - 2;
    let mut v = 0.0;
    let mut d = 0.0;
    for (theta, w) in quad.gl.mapped(0.0, theta_max) {
        let half = (0.5 * theta).sin();
        let c1 = -2.0 * half * half; // cos θ - 1
        let e = (x * c1).exp() * theta.sin().powi(k) * w;
        v += e;
        d += c1 * e;
    }
    let lower = sphere_area(n - 1);
    (lower * v, lower * d)
}

/// φ(r) = ∫_{S^{n-1}} e^{rω_1} dω.
pub fn phi(r: f64, n: u32) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(MODULE, format!("phi requires n >= 2, got {n}")));
    }
    if !(r >= 0.0) {
        return Err(Error::domain(MODULE, format!("phi requires r >= 0, got {r}")));
    }
    if r > 700.0 {
        return Err(Error::overflow(MODULE, format!("phi({r}) exceeds the representable range")));
    }
    let (v, _) = phi_scaled(r, n, &AngleQuad::default());
    Ok(v * r.exp())
}

/// Cubic Hermite table of φ̃ on [0, x_max].
#[derive(Debug, Clone)]
pub struct PhiTable {
    n: u32,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    quad: AngleQuad,
}

impl PhiTable {
    pub fn new(n: u32, x_max: f64, step: f64, quad: &AngleQuad) -> Self {
        let count = (x_max / step).ceil() as usize + 2;
        let (values, slopes) = (0..count)
            .map(|i| phi_scaled(i as f64 * step, n, quad))
            .unzip();
        Self {
            n,
            step,
            values,
            slopes,
            quad: quad.clone(),
        }
    }

    pub fn x_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x / self.step;
        let i = u.floor() as usize;
        if i + 1 >= self.values.len() {
            return phi_scaled(x, self.n, &self.quad).0;
        }
        let s = u - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }
}

enum PhiSource<'a> {
    Direct(u32, &'a AngleQuad),
    Table(&'a PhiTable),
}

impl PhiSource<'_> {
    fn eval(&self, x: f64) -> f64 {
        match self {
            PhiSource::Direct(n, q) => phi_scaled(x, *n, q).0,
            PhiSource::Table(t) => t.eval(x),
        }
    }
}

// ---------------------------------------------------------------------------
// parameters

/// Settings for the λ-integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaQuad {
    pub panel_nodes: usize,
    /// Ratio of consecutive panel endpoints, in (0, 1).
    pub panel_ratio: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for LambdaQuad {
    fn default() -> Self {
        Self {
            panel_nodes: 16,
            panel_ratio: 0.25,
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_panels: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionParams {
    pub n: u32,
    pub mu: f64,
    pub alpha: f64,
    pub p: f64,
    /// (n-μ-1)/2 - 1/p.
    pub q: f64,
    /// n + α - (n+μ-1)p/2; equal to `q` at the critical power.
    pub q_right: f64,
    pub lambda_quad: LambdaQuad,
    pub angle_quad: AngleQuad,
    pub spec: SpecFunConfig,
}

impl TestFunctionParams {
    pub fn new(n: u32, mu: f64, alpha: f64, p: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(MODULE, format!("n must be >= 2, got {n}")));
        }
        if !(mu > 0.0) {
            return Err(Error::domain(MODULE, format!("mu must be > 0, got {mu}")));
        }
        if !(p > 1.0) {
            return Err(Error::domain(MODULE, format!("p must be > 1, got {p}")));
        }
        let (q, q_right) = q_exponent(n as f64, mu, alpha, p);
        let params = Self {
            n,
            mu,
            alpha,
            p,
            q,
            q_right,
            lambda_quad: LambdaQuad::default(),
            angle_quad: AngleQuad::default(),
            spec: SpecFunConfig::default(),
        };
        if !(params.endpoint_exponent() > 0.0) {
            return Err(Error::domain(
                MODULE,
                format!(
                    "integrability guard q + min(1, mu) > 0 fails: q = {q}, mu = {mu}"
                ),
            ));
        }
        Ok(params)
    }

    pub fn from_model(model: &ModelParams) -> Result<Self> {
        Self::new(model.n, model.mu, model.alpha, model.p)
    }

    /// Order ν = (μ-1)/2 of the Bessel factor in h.
    pub fn nu(&self) -> f64 {
        0.5 * (self.mu - 1.0)
    }

    /// Exponent a with b_q's λ-integrand ~ λ^{a-1} as λ → 0.
    pub fn endpoint_exponent(&self) -> f64 {
        self.q + self.mu.min(1.0)
    }

    fn log_endpoint(&self) -> bool {
        self.nu().abs() < 1e-3
    }

    /// λ·max(t, r, 1) below which the power-law remainder is used.
    fn tail_switch(&self) -> f64 {
        let kappa = (2.0 * self.nu().abs()).min(2.0);
        let kappa = if kappa < 0.5 { 0.0 } else { kappa };
        let expo = self.endpoint_exponent() + kappa;
        (0.01 * self.lambda_quad.rel_tol).powf(1.0 / expo).min(1e-3)
    }
}

// ---------------------------------------------------------------------------
// λ-integrals

/// Integrals sharing the λ-nodes of b_q at one (t, r):
///
/// * `b` = ∫ h(λt) φ(λr) λ^{q-1}
/// * `a` = ∫ (λt)^{ν+1} K_{ν+1}(λt) φ(λr) λ^q
/// * `t3` = ∫ (λt)^ν K_{ν+1}(λt) φ(λr) λ^{q+1}
/// * `t4` = ∫ (λt)^{ν+1} K'_{ν+1}(λt) φ(λr) λ^{q+1}
/// * `lap` = ∫ h(λt) φ(λr) λ^{q+1} = Δb_q
///
/// with ν = (μ-1)/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BqMoments {
    pub t: f64,
    pub r: f64,
    pub b: f64,
    pub a: f64,
    pub t3: f64,
    pub t4: f64,
    pub lap: f64,
    /// Node-doubling estimate of the error in `b`.
    pub error: f64,
    pub panels: usize,
}

impl BqMoments {
    /// ∂_t b_q = (μ/t) b_q - A.
    pub fn dt(&self, mu: f64) -> f64 {
        mu / self.t * self.b - self.a
    }

    /// ∂_t² b_q = -μ b_q/t² + (μ/t)∂_t b_q - (μ+1)/2 · T3 - T4.
    pub fn dtt(&self, mu: f64) -> f64 {
        let t = self.t;
        -mu * self.b / (t * t) + mu / t * self.dt(mu) - 0.5 * (mu + 1.0) * self.t3 - self.t4
    }

    /// (∂_t² b_q - Δb_q - ∂_t(μ b_q / t)) / b_q.
    pub fn pde_residual(&self, mu: f64) -> f64 {
        let t = self.t;
        let damping = mu / t * self.dt(mu) - mu * self.b / (t * t);
        (self.dtt(mu) - self.lap - damping) / self.b
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    b: f64,
    a: f64,
    t3: f64,
    t4: f64,
    lap: f64,
}

fn integrand(lambda: f64, t: f64, r: f64, params: &TestFunctionParams, phi: &PhiSource) -> Result<Sums> {
    let s = lambda * t;
    let nu = params.nu();
    let parts = h_parts_scaled(s, params.mu, &params.spec)?;
    let weight = phi.eval(lambda * r) * (-lambda * (t - r)).exp();
    let lq = lambda.powf(params.q);
    let lq1 = lq * lambda;
    // K_{ν+2} from the three-term recurrence, K'_{ν+1} = -(K_ν + K_{ν+2})/2.
    let k2 = parts.k_lower + 2.0 * (nu + 1.0) / s * parts.k_upper;
    let kp = -0.5 * (parts.k_lower + k2);
    let pow = s.powf(nu + 1.0);
    Ok(Sums {
        b: parts.h * weight * lq / lambda,
        a: parts.upper * weight * lq,
        t3: parts.upper / s * weight * lq1,
        t4: pow * kp * weight * lq1,
        lap: parts.h * weight * lq1,
    })
}

fn moments_with(
    t: f64,
    r: f64,
    params: &TestFunctionParams,
    gl: &GaussLegendre,
    phi: &PhiSource,
) -> Result<(Sums, usize)> {
    let lq = &params.lambda_quad;
    let scale = t.max(r).max(1.0);
    let switch = params.tail_switch();
    let mut sums = Sums::default();
    let mut hi = 1.0;
    let mut panels = 0;
    while hi * scale > switch {
        if panels >= lq.max_panels {
            return Err(Error::non_convergence(
                MODULE,
                format!("lambda panels exhausted at t = {t}, r = {r}"),
                hi * scale,
            ));
        }
        let lo = hi * lq.panel_ratio;
        for (lambda, w) in gl.mapped(lo, hi) {
            let f = integrand(lambda, t, r, params, phi)?;
            sums.b += w * f.b;
            sums.a += w * f.a;
            sums.t3 += w * f.t3;
            sums.t4 += w * f.t4;
            sums.lap += w * f.lap;
        }
        hi = lo;
        panels += 1;
    }
    // remainder ∫_0^hi from the leading power law
    let f = integrand(hi, t, r, params, phi)?;
    let a_b = params.endpoint_exponent();
    let a_1 = params.q + 1.0;
    let mut tail_b = f.b * hi / a_b;
    let mut tail_lap = f.lap * hi / (a_b + 2.0);
    if params.log_endpoint() {
        let log = (2.0 / (hi * t)).ln() - EULER_GAMMA;
        tail_b *= 1.0 + 1.0 / (a_b * log);
        tail_lap *= 1.0 + 1.0 / ((a_b + 2.0) * log);
    }
    sums.b += tail_b;
    sums.lap += tail_lap;
    sums.a += f.a * hi / a_1;
    sums.t3 += f.t3 * hi / a_1;
    sums.t4 += f.t4 * hi / a_1;
    Ok((sums, panels))
}

fn check_point(t: f64, r: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(MODULE, format!("t must be positive, got {t}")));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::domain(MODULE, format!("r must be >= 0, got {r}")));
    }
    Ok(())
}

/// All λ-moments at (t, r), with a node-doubling error check on b_q.
pub fn b_q_moments(t: f64, r: f64, params: &TestFunctionParams) -> Result<BqMoments> {
    check_point(t, r)?;
    let phi = PhiSource::Direct(params.n, &params.angle_quad);
    let nodes = params.lambda_quad.panel_nodes;
    let (coarse, panels) = moments_with(t, r, params, &GaussLegendre::new(nodes), &phi)?;
    let (fine, _) = moments_with(t, r, params, &GaussLegendre::new(2 * nodes), &phi)?;
    let error = (fine.b - coarse.b).abs();
    let lq = &params.lambda_quad;
    if error > lq.abs_tol.max(lq.rel_tol * fine.b.abs()) {
        return Err(Error::non_convergence(
            MODULE,
            format!("b_q at t = {t}, r = {r}"),
            error,
        ));
    }
    Ok(BqMoments {
        t,
        r,
        b: fine.b,
        a: fine.a,
        t3: fine.t3,
        t4: fine.t4,
        lap: fine.lap,
        error,
        panels,
    })
}

/// b_q(t, r).
pub fn b_q_eval(t: f64, r: f64, params: &TestFunctionParams) -> Result<f64> {
    b_q_moments(t, r, params).map(|m| m.b)
}

/// ∂_t b_q(t, r) from the two-integral form (μ/t) b_q - A.
pub fn b_q_dt(t: f64, r: f64, params: &TestFunctionParams) -> Result<f64> {
    b_q_moments(t, r, params).map(|m| m.dt(params.mu))
}

/// Normalized residual of ∂_t² b_q - Δ b_q - ∂_t(μ b_q/t) = 0. Only defined
/// for t ≥ 0.1.
pub fn b_q_pde_residual(t: f64, r: f64, params: &TestFunctionParams) -> Result<f64> {
    if t < 0.1 {
        return Err(Error::domain(MODULE, format!("residual requires t >= 0.1, got {t}")));
    }
    b_q_moments(t, r, params).map(|m| m.pde_residual(params.mu))
}

/// Log-log slope of t ↦ b_q(t, 0) over `points` log-spaced times in
/// [t_lo, t_hi].
pub fn asymptotic_slope(params: &TestFunctionParams, t_lo: f64, t_hi: f64, points: usize) -> Result<f64> {
    if points < 2 || !(t_hi > t_lo) || !(t_lo > 0.0) {
        return Err(Error::domain(MODULE, "slope scan needs 0 < t_lo < t_hi and >= 2 points"));
    }
    let mut x = Vec::with_capacity(points);
    let mut y = Vec::with_capacity(points);
    for k in 0..points {
        let t = t_lo * (t_hi / t_lo).powf(k as f64 / (points - 1) as f64);
        x.push(t.ln());
        y.push(b_q_eval(t, 0.0, params)?.ln());
    }
    Ok(linear_fit(&x, &y)?.slope)
}

// ---------------------------------------------------------------------------
// t → 0 limit

/// Extrapolated limit of -∂_t b_q + μ b_q / t as t → 0 at fixed r, with the
/// two reference integrals it is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLimit {
    pub r: f64,
    pub value: f64,
    /// Difference between the last two extrapolants.
    pub error: f64,
    pub samples: Vec<(f64, f64)>,
    /// C_0 ∫_0^1 φ(λr) λ^q dλ with C_0 = 2^{(μ-1)/2}Γ((μ+1)/2).
    pub c0_reference: f64,
    /// ∫_0^1 D_0(λ) φ(λr) λ^q dλ with
    /// D_0(λ) = 2^{(μ-3)/2}(1-λ)Γ((μ-1)/2) + λ 2^{(μ-1)/2}Γ((μ+1)/2).
    /// Absent for μ ≤ 1, where Γ((μ-1)/2) is not positive.
    pub d0_reference: Option<f64>,
    /// True when μ > 1.
    pub certified: bool,
}

/// Default sample times 2^{-k}, k = 3..=12.
pub fn default_limit_times() -> Vec<f64> {
    (3..=12).map(|k| 0.5f64.powi(k)).collect()
}

fn weighted_phi_integral<F: Fn(f64) -> f64>(r: f64, params: &TestFunctionParams, density: F) -> Result<f64> {
    // λ = u^{1/(q+1)} turns λ^q dλ into du/(q+1)
    let a = params.q + 1.0;
    let est = tanh_sinh(
        |u| {
            let lambda = u.powf(1.0 / a);
            density(lambda) * phi_scaled(lambda * r, params.n, &params.angle_quad).0 * (lambda * r).exp()
        },
        0.0,
        1.0,
        1e-12,
        12,
    );
    if !est.converged {
        return Err(Error::non_convergence(MODULE, "reference integral", est.error));
    }
    Ok(est.value / a)
}

pub fn initial_limit(r: f64, params: &TestFunctionParams, t_sequence: &[f64]) -> Result<InitialLimit> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::domain(MODULE, format!("initial_limit requires 0 <= r <= 1, got {r}")));
    }
    if t_sequence.len() < 3 {
        return Err(Error::insufficient(MODULE, "initial_limit needs at least 3 sample times"));
    }
    let mu = params.mu;
    let mut samples = Vec::with_capacity(t_sequence.len());
    for &t in t_sequence {
        let m = b_q_moments(t, r, params)?;
        // -∂_t b_q + μ b_q / t equals the A-moment identically
        samples.push((t, -m.dt(mu) + mu * m.b / t));
    }

    // Richardson in t^{e1}, then t^{e2}
    let e1 = 2f64.min(mu + 1.0);
    let e2 = 2f64.max(mu + 1.0);
    let eliminate = |col: &[(f64, f64)], e: f64| -> Vec<(f64, f64)> {
        col.windows(2)
            .map(|w| {
                let (ta, fa) = w[0];
                let (tb, fb) = w[1];
                let (pa, pb) = (ta.powf(e), tb.powf(e));
                (tb, (fb * pa - fa * pb) / (pa - pb))
            })
            .collect()
    };
    let first = eliminate(&samples, e1);
    let second = if (e2 - e1).abs() > 1e-9 {
        eliminate(&first, e2)
    } else {
        first.clone()
    };
    let k = second.len();
    let value = second[k - 1].1;
    let error = (second[k - 1].1 - second[k - 2].1).abs();
    if !(error <= 1e-4 * value.abs()) {
        return Err(Error::non_convergence(MODULE, "t -> 0 extrapolation", error));
    }

    let c0 = h_limit_constant(mu)?;
    let c0_reference = c0 * weighted_phi_integral(r, params, |_| 1.0)?;
    let d0_reference = if mu > 1.0 {
        let g_lo = gamma_fn(0.5 * (mu - 1.0))?;
        let lo = 2f64.powf(0.5 * (mu - 3.0)) * g_lo;
        Some(weighted_phi_integral(r, params, |lambda| (1.0 - lambda) * lo + lambda * c0)?)
    } else {
        None
    };
    Ok(InitialLimit {
        r,
        value,
        error,
        samples,
        c0_reference,
        d0_reference,
        certified: mu > 1.0,
    })
}

// ---------------------------------------------------------------------------
// cache

/// b_q on a uniform (τ, r) grid, read by bilinear interpolation.
#[derive(Debug, Clone)]
pub struct BqCache {
    t0: f64,
    dt: f64,
    nt: usize,
    dr: f64,
    nr: usize,
    values: Vec<f64>,
}

impl BqCache {
    /// Tabulates b_q for τ ∈ [t_lo, t_hi] and r ∈ [0, r_hi].
    pub fn build(
        params: &TestFunctionParams,
        t_lo: f64,
        t_hi: f64,
        r_hi: f64,
        spacing: f64,
    ) -> Result<Self> {
        if !(t_lo > 0.0 && t_hi >= t_lo && r_hi >= 0.0 && spacing > 0.0) {
            return Err(Error::domain(MODULE, "cache needs 0 < t_lo <= t_hi, r_hi >= 0, spacing > 0"));
        }
        let nt = ((t_hi - t_lo) / spacing).ceil() as usize + 1;
        let dt = if nt > 1 { (t_hi - t_lo) / (nt - 1) as f64 } else { 1.0 };
        let nr = (r_hi / spacing).ceil() as usize + 1;
        let dr = if nr > 1 { r_hi / (nr - 1) as f64 } else { 1.0 };
        let table = PhiTable::new(params.n, r_hi + 1.0, 0.02, &params.angle_quad);
        let phi = PhiSource::Table(&table);
        let gl = GaussLegendre::new(params.lambda_quad.panel_nodes);
        let rows: Vec<Result<Vec<f64>>> = (0..nt)
            .into_par_iter()
            .map(|j| {
                let t = t_lo + j as f64 * dt;
                Self::row(t, nr, dr, r_hi, params, &gl, &phi)
            })
            .collect();
        let mut values = Vec::with_capacity(nt * nr);
        for row in rows {
            values.extend(row?);
        }
        Ok(Self {
            t0: t_lo,
            dt,
            nt,
            dr,
            nr,
            values,
        })
    }

    fn row(
        t: f64,
        nr: usize,
        dr: f64,
        r_hi: f64,
        params: &TestFunctionParams,
        gl: &GaussLegendre,
        phi: &PhiSource,
    ) -> Result<Vec<f64>> {
        // One set of λ-nodes serves the whole row; h is evaluated once per node.
        let lq = &params.lambda_quad;
        let scale = t.max(r_hi).max(1.0);
        let switch = params.tail_switch();
        let mut nodes = Vec::new();
        let mut hi = 1.0;
        let mut panels = 0;
        while hi * scale > switch {
            if panels >= lq.max_panels {
                return Err(Error::non_convergence(MODULE, "cache lambda panels", hi * scale));
            }
            let lo = hi * lq.panel_ratio;
            for (lambda, w) in gl.mapped(lo, hi) {
                let parts = h_parts_scaled(lambda * t, params.mu, &params.spec)?;
                nodes.push((lambda, w * parts.h * lambda.powf(params.q - 1.0)));
            }
            hi = lo;
            panels += 1;
        }
        let tail_h = h_parts_scaled(hi * t, params.mu, &params.spec)?.h * hi.powf(params.q - 1.0);
        let a_b = params.endpoint_exponent();
        let mut tail_factor = hi / a_b;
        if params.log_endpoint() {
            let log = (2.0 / (hi * t)).ln() - EULER_GAMMA;
            tail_factor *= 1.0 + 1.0 / (a_b * log);
        }
        let mut out = Vec::with_capacity(nr);
        for i in 0..nr {
            let r = i as f64 * dr;
            let mut sum = 0.0;
            for &(lambda, c) in &nodes {
                sum += c * phi.eval(lambda * r) * (-lambda * (t - r)).exp();
            }
            sum += tail_h * phi.eval(hi * r) * (-hi * (t - r)).exp() * tail_factor;
            out.push(sum);
        }
        Ok(out)
    }

    pub fn t_range(&self) -> (f64, f64) {
        (self.t0, self.t0 + (self.nt - 1) as f64 * self.dt)
    }

    pub fn r_max(&self) -> f64 {
        (self.nr - 1) as f64 * self.dr
    }

    /// Bilinear interpolant at (τ, r); `None` outside the table.
    pub fn get(&self, t: f64, r: f64) -> Option<f64> {
        let (lo, hi) = self.t_range();
        let slack = 1e-12 * hi.max(1.0);
        if t < lo - slack || t > hi + slack || r < 0.0 || r > self.r_max() + slack {
            return None;
        }
        let u = ((t - self.t0) / self.dt).max(0.0);
        let v = (r / self.dr).max(0.0);
        let j = (u.floor() as usize).min(self.nt.saturating_sub(2));
        let i = (v.floor() as usize).min(self.nr.saturating_sub(2));
        let fu = if self.nt > 1 { u - j as f64 } else { 0.0 };
        let fv = if self.nr > 1 { v - i as f64 } else { 0.0 };
        let at = |jj: usize, ii: usize| self.values[jj.min(self.nt - 1) * self.nr + ii.min(self.nr - 1)];
        let a = at(j, i) * (1.0 - fv) + at(j, i + 1) * fv;
        let b = at(j + 1, i) * (1.0 - fv) + at(j + 1, i + 1) * fv;
        Some(a * (1.0 - fu) + b * fu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::p_strauss;
    use approx::assert_relative_eq;

    fn params(n: u32, mu: f64) -> TestFunctionParams {
        let p = p_strauss(n as f64, mu, 0.0).unwrap();
        TestFunctionParams::new(n, mu, 0.0, p).unwrap()
    }

    #[test]
    fn cutoff_shape() {
        let c = Cutoff::new();
        assert_eq!(c.eta(0.3), 1.0);
        assert_eq!(c.eta(1.2), 0.0);
        let mid = c.eta(0.75);
        assert_relative_eq!(mid, 0.5, max_relative = 1e-10);
        assert!(c.eta(0.7499) > mid && mid > c.eta(0.7501));
        let mut prev = c.eta(0.545);
        for k in 10..90 {
            let v = c.eta(0.5 + 0.005 * k as f64);
            assert!(v < prev);
            prev = v;
        }
        // continuity at the joints of the transition
        assert!((c.eta(0.500_001) - 1.0).abs() < 1e-12);
        assert!(c.eta(0.999_999) < 1e-12);
    }

    #[test]
    fn cutoff_derivatives_match_differences() {
        let c = Cutoff::new();
        let h = 1e-5;
        for s in [0.55, 0.7, 0.8, 0.95] {
            let fd1 = (c.eta(s + h) - c.eta(s - h)) / (2.0 * h);
            assert_relative_eq!(c.eta_d1(s), fd1, max_relative = 1e-6, epsilon = 1e-10);
            let fd2 = (c.eta_d1(s + h) - c.eta_d1(s - h)) / (2.0 * h);
            assert_relative_eq!(c.eta_d2(s), fd2, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn phi_closed_forms() {
        for n in 2..=6 {
            assert_relative_eq!(phi(0.0, n).unwrap(), sphere_area(n), max_relative = 1e-14);
        }
        assert_relative_eq!(sphere_area(3), 4.0 * PI, max_relative = 1e-14);
        for r in [0.01f64, 0.5, 1.0, 7.0, 30.0, 200.0] {
            let exact = 4.0 * PI * r.sinh() / r;
            assert_relative_eq!(phi(r, 3).unwrap(), exact, max_relative = 1e-12);
        }
        assert!(phi(800.0, 3).is_err());
        assert!(phi(1.0, 1).is_err());
    }

    #[test]
    fn phi_table_matches_direct() {
        let q = AngleQuad::default();
        let table = PhiTable::new(4, 30.0, 0.02, &q);
        for x in [0.0, 0.013, 0.5, 3.333, 17.9, 29.99, 45.0] {
            assert_relative_eq!(table.eval(x), phi_scaled(x, 4, &q).0, max_relative = 1e-9);
        }
    }

    #[test]
    fn guard_rejects_nonintegrable_q() {
        // n = 2, large μ gives q + min(1, μ) <= 0
        assert!(TestFunctionParams::new(2, 4.0, 0.0, 3.0).is_err());
    }

    #[test]
    fn b_q_at_origin_factors_phi() {
        let prm = params(3, 1.5);
        let t = 3.0;
        let direct = b_q_eval(t, 0.0, &prm).unwrap();
        let est = tanh_sinh(
            |l| crate::special_functions::h_eval(l * t, 1.5, &prm.spec).unwrap().value * l.powf(prm.q - 1.0),
            0.0,
            1.0,
            1e-12,
            12,
        );
        assert_relative_eq!(direct, sphere_area(3) * est.value, max_relative = 1e-9);
    }

    #[test]
    fn moments_positive_and_residual_small() {
        let prm = params(3, 2.5);
        let m = b_q_moments(2.0, 1.5, &prm).unwrap();
        assert!(m.b > 0.0 && m.a > 0.0 && m.lap > 0.0);
        assert!(m.pde_residual(prm.mu).abs() < 1e-10);
        assert!(b_q_pde_residual(0.05, 0.0, &prm).is_err());
    }

    #[test]
    fn cache_interpolates_within_budget() {
        let prm = params(3, 1.0);
        let cache = BqCache::build(&prm, 1.0, 3.0, 4.0, 0.025).unwrap();
        for (t, r) in [(1.013, 0.2), (2.5, 3.49), (2.987, 0.0), (1.7, 2.71)] {
            let exact = b_q_eval(t, r, &prm).unwrap();
            assert_relative_eq!(cache.get(t, r).unwrap(), exact, max_relative = 1e-4);
        }
        assert!(cache.get(0.5, 1.0).is_none());
        assert!(cache.get(2.0, 4.5).is_none());
    }

    #[test]
    fn initial_limit_matches_references_at_mu_two() {
        let prm = params(3, 2.0);
        let lim = initial_limit(0.0, &prm, &default_limit_times()).unwrap();
        assert!(lim.certified);
        assert!(lim.value > 0.0);
        assert_relative_eq!(lim.value, lim.c0_reference, max_relative = 1e-6);
        assert_relative_eq!(lim.value, lim.d0_reference.unwrap(), max_relative = 5e-2);
    }
}
