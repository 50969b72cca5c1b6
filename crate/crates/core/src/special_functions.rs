//! Gamma, the modified Bessel function K_ν for real order and positive
//! argument, and the auxiliary function h(t) = t^{(μ+1)/2} K_{(μ-1)/2}(t).
//!
//! K_ν is evaluated by splitting ν = m + f with m an integer and |f| ≤ 1/2:
//!
//! * z ≤ 2: Temme's series for K_f and K_{f+1}. The Gamma-function factors are
//!   expanded in powers of f, so the series is analytic through f = 0 and
//!   integer orders need no separate branch.
//! * 2 < z: Steed's continued fraction for K_f and K_{f+1}, or, for
//!   z ≥ `asymptotic_switch_z`, the Hankel asymptotic expansion when its
//!   truncation error bound meets the tolerance.
//! * K_{f+m} then follows from forward recurrence, which is stable for K.
//!
//! All internal work is done on e^z K_ν(z) so that large arguments do not
//! underflow.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const MODULE: &str = "special_functions";

/// Accuracy and regime settings for the special functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecFunConfig {
    /// Relative accuracy target, in (0, 1e-6].
    pub rel_tol: f64,
    /// Iteration cap for series and continued fractions.
    pub series_terms_max: usize,
    /// Arguments at or above this use the asymptotic expansion when it
    /// converges to `rel_tol`.
    pub asymptotic_switch_z: f64,
    /// Arguments below this floor are rejected as overflow.
    pub underflow_floor: f64,
}

impl Default for SpecFunConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            series_terms_max: 10_000,
            asymptotic_switch_z: 10.0,
            underflow_floor: 1e-300,
        }
    }
}

impl SpecFunConfig {
    /// Looser settings used by the test suites.
    pub fn for_tests() -> Self {
        Self {
            rel_tol: 1e-8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-6) {
            return Err(Error::config(MODULE, "rel_tol must lie in (0, 1e-6]"));
        }
        if !(self.asymptotic_switch_z > 0.0) {
            return Err(Error::config(MODULE, "asymptotic_switch_z must be positive"));
        }
        if self.series_terms_max == 0 {
            return Err(Error::config(MODULE, "series_terms_max must be positive"));
        }
        Ok(())
    }
}

/// Γ(x) for x > 0.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(MODULE, format!("gamma_fn requires x > 0, got {x}")));
    }
    if x.fract() == 0.0 && x <= 171.0 {
        // exact factorial for integer arguments
        return Ok((1..x as u64).fold(1.0, |acc, k| acc * k as f64));
    }
    let g = statrs::function::gamma::gamma(x);
    if !g.is_finite() {
        return Err(Error::overflow(MODULE, format!("gamma({x}) overflows")));
    }
    Ok(g)
}

/// Taylor coefficients of 1/Γ(1+x) about x = 0.
const RECIP_GAMMA_1P: [f64; 27] = [
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
    1.186_692_254_751_600_332_6e-18,
];

/// Temme's auxiliary Gamma combinations for |f| ≤ 1/2:
/// (gam1, gam2, 1/Γ(1+f), 1/Γ(1-f)) with
/// gam1 = (1/Γ(1-f) - 1/Γ(1+f)) / (2f), gam2 = (1/Γ(1-f) + 1/Γ(1+f)) / 2.
fn temme_gammas(f: f64) -> (f64, f64, f64, f64) {
    let f2 = f * f;
    let mut even = 0.0;
    let mut odd = 0.0;
    // Horner in f² over the even and odd coefficient subsequences.
    for k in (0..RECIP_GAMMA_1P.len()).rev() {
        if k % 2 == 0 {
            even = even * f2 + RECIP_GAMMA_1P[k];
        }
    }
    for k in (0..RECIP_GAMMA_1P.len()).rev() {
        if k % 2 == 1 {
            odd = odd * f2 + RECIP_GAMMA_1P[k];
        }
    }
    let gam1 = -odd;
    let gam2 = even;
    let gampl = gam2 - f * gam1;
    let gammi = gam2 + f * gam1;
    (gam1, gam2, gampl, gammi)
}

fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 + x2 / 6.0 * (1.0 + x2 / 20.0)
    } else {
        x.sinh() / x
    }
}

fn x_over_sin(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 + x2 / 6.0 * (1.0 + 7.0 * x2 / 60.0)
    } else {
        x / x.sin()
    }
}

/// Temme series for (K_f(z), K_{f+1}(z)), |f| ≤ 1/2, 0 < z ≤ 2. Unscaled.
fn temme_series(f: f64, z: f64, cfg: &SpecFunConfig) -> Result<(f64, f64)> {
    let x2 = 0.5 * z;
    let fact = x_over_sin(PI * f);
    let d = -x2.ln();
    let e = f * d;
    let fact2 = sinhc(e);
    let (gam1, gam2, gampl, gammi) = temme_gammas(f);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    let mut p = 0.5 * ee / gampl;
    let mut q = 0.5 / (ee * gammi);
    let mut c = 1.0;
    let dd = x2 * x2;
    let mut sum1 = p;
    let f2 = f * f;
    for i in 1..=cfg.series_terms_max {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - f2);
        c *= dd / fi;
        p /= fi - f;
        q /= fi + f;
        let del = c * ff;
        sum += del;
        let del1 = c * (p - fi * ff);
        sum1 += del1;
        if del.abs() < sum.abs() * 1e-17 {
            return Ok((sum, sum1 * 2.0 / z));
        }
    }
    Err(Error::non_convergence(
        MODULE,
        format!("Temme series for K at f={f}, z={z}"),
        f64::NAN,
    ))
}

/// Steed's continued fraction for (e^z K_f(z), e^z K_{f+1}(z)), |f| ≤ 1/2, z > 0.
fn steed_cf2_scaled(f: f64, z: f64, cfg: &SpecFunConfig) -> Result<(f64, f64)> {
    let f2 = f * f;
    let mut b = 2.0 * (1.0 + z);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - f2;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    let mut converged = false;
    for i in 1..=cfg.series_terms_max {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::non_convergence(
            MODULE,
            format!("continued fraction for K at f={f}, z={z}"),
            f64::NAN,
        ));
    }
    h *= a1;
    let kf = (PI / (2.0 * z)).sqrt() / s;
    let kf1 = kf * (f + z + 0.5 - h) / z;
    Ok((kf, kf1))
}

/// Hankel expansion of e^z K_ν(z), summed while the terms keep shrinking;
/// `None` when the smallest term is still above the tolerance.
fn hankel_scaled(nu: f64, z: f64, cfg: &SpecFunConfig) -> Option<f64> {
    let mu4 = 4.0 * nu * nu;
    let mut term: f64 = 1.0;
    let mut sum: f64 = 1.0;
    let target = 0.1 * cfg.rel_tol;
    for k in 1..=cfg.series_terms_max.min(200) {
        let kf = k as f64;
        let next = term * (mu4 - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * z);
        // Past k > ν - 1/2 the terms alternate and the remainder is bounded by
        // the first omitted term.
        let alternating = kf > nu - 0.5;
        if alternating && next.abs() > term.abs() {
            return (term.abs() <= target * sum.abs()).then(|| (PI / (2.0 * z)).sqrt() * sum);
        }
        if next == 0.0 || (alternating && next.abs() <= f64::EPSILON * 0.1 * sum.abs()) {
            return Some((PI / (2.0 * z)).sqrt() * (sum + next));
        }
        sum += next;
        term = next;
    }
    None
}

/// (e^z K_ν(z), e^z K_{ν+1}(z)) for ν ≥ -1/2, z > 0.
pub fn bessel_k_pair_scaled(nu: f64, z: f64, cfg: &SpecFunConfig) -> Result<(f64, f64)> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(MODULE, format!("bessel_k requires z > 0, got {z}")));
    }
    if !(nu >= -0.5) || !nu.is_finite() {
        return Err(Error::domain(MODULE, format!("pair evaluation requires nu >= -1/2, got {nu}")));
    }
    if z < cfg.underflow_floor {
        return Err(Error::overflow(MODULE, format!("z = {z:e} below the underflow floor")));
    }
    // Leading small-z magnitude ½Γ(ν+1)(z/2)^{-(ν+1)} of K_{ν+1}.
    let lead = statrs::function::gamma::ln_gamma(nu + 1.0) - std::f64::consts::LN_2
        - (nu + 1.0) * (0.5 * z).ln();
    if lead > 700.0 {
        return Err(Error::overflow(
            MODULE,
            format!("K_{nu}(z) overflows at z = {z:e}"),
        ));
    }

    let m = (nu + 0.5).floor();
    let f = nu - m;
    let steps = m as usize;

    if z >= cfg.asymptotic_switch_z {
        if let (Some(k0), Some(k1)) = (hankel_scaled(nu, z, cfg), hankel_scaled(nu + 1.0, z, cfg)) {
            return Ok((k0, k1));
        }
    }

    let (mut k0, mut k1) = if z <= 2.0 {
        let (a, b) = temme_series(f, z, cfg)?;
        let s = z.exp();
        (a * s, b * s)
    } else {
        steed_cf2_scaled(f, z, cfg)?
    };
    for i in 1..=steps {
        let next = (f + i as f64) * (2.0 / z) * k1 + k0;
        k0 = k1;
        k1 = next;
    }
    if !k0.is_finite() || !k1.is_finite() {
        return Err(Error::overflow(MODULE, format!("K_{nu}({z}) overflows")));
    }
    Ok((k0, k1))
}

/// e^z K_ν(z) for real ν and z > 0.
pub fn bessel_k_scaled(nu: f64, z: f64, cfg: &SpecFunConfig) -> Result<f64> {
    bessel_k_pair_scaled(nu.abs(), z, cfg).map(|(k, _)| k)
}

/// K_ν(z) for real ν and z > 0; K_{-ν} = K_ν.
pub fn bessel_k(nu: f64, z: f64, cfg: &SpecFunConfig) -> Result<f64> {
    let scaled = bessel_k_scaled(nu, z, cfg)?;
    Ok(scaled * (-z).exp())
}

/// h(t) and h'(t) at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HEvaluation {
    pub t: f64,
    pub mu: f64,
    pub value: f64,
    pub derivative: f64,
}

/// Scaled pieces of h at s: e^s s^{(μ+1)/2} K_{(μ-1)/2}(s) and
/// e^s s^{(μ+1)/2} K_{(μ+1)/2}(s), plus e^s s^{(μ-1)/2}K_{(μ-1)/2}(s).
#[derive(Debug, Clone, Copy)]
pub(crate) struct HParts {
    /// e^s h(s)
    pub h: f64,
    /// e^s s^{(μ+1)/2} K_{(μ+1)/2}(s)
    pub upper: f64,
    /// e^s K_{(μ-1)/2}(s)
    pub k_lower: f64,
    /// e^s K_{(μ+1)/2}(s)
    pub k_upper: f64,
}

pub(crate) fn h_parts_scaled(s: f64, mu: f64, cfg: &SpecFunConfig) -> Result<HParts> {
    let nu = 0.5 * (mu - 1.0);
    let (k_lower, k_upper) = bessel_k_pair_scaled(nu, s, cfg)?;
    let pow = s.powf(0.5 * (mu + 1.0));
    Ok(HParts {
        h: pow * k_lower,
        upper: pow * k_upper,
        k_lower,
        k_upper,
    })
}

/// h(t) = t^{(μ+1)/2} K_{(μ-1)/2}(t) and its derivative from the recurrence
/// h'(t) = μ t^{(μ-1)/2} K_{(μ-1)/2}(t) - t^{(μ+1)/2} K_{(μ+1)/2}(t).
pub fn h_eval(t: f64, mu: f64, cfg: &SpecFunConfig) -> Result<HEvaluation> {
    if !(t > 0.0) {
        return Err(Error::domain(MODULE, format!("h_eval requires t > 0, got {t}")));
    }
    if !(mu > 0.0) {
        return Err(Error::domain(MODULE, format!("h_eval requires mu > 0, got {mu}")));
    }
    let parts = h_parts_scaled(t, mu, cfg)?;
    let decay = (-t).exp();
    let value = parts.h * decay;
    let derivative = (mu * parts.h / t - parts.upper) * decay;
    Ok(HEvaluation {
        t,
        mu,
        value,
        derivative,
    })
}

/// C_0 = 2^{(μ-1)/2} Γ((μ+1)/2), the t → 0 limit of -h'(t) + μh(t)/t.
pub fn h_limit_constant(mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::domain(MODULE, format!("h_limit_constant requires mu > 0, got {mu}")));
    }
    Ok(2f64.powf(0.5 * (mu - 1.0)) * gamma_fn(0.5 * (mu + 1.0))?)
}
