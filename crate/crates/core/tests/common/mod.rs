#![allow(dead_code)]

use epd_core::quadrature::tanh_sinh;
use std::f64::consts::PI;

/// K_ν(z) from K_ν(z) = ∫_0^∞ e^{-z cosh s} cosh(νs) ds, by tanh-sinh on a
/// truncated interval. Shares no code with the series evaluators.
pub fn bessel_k_integral(nu: f64, z: f64) -> f64 {
    // integrand in scaled form: e^{-z(cosh s - 1)} cosh(νs)
    let log_f = |s: f64| -z * (s.cosh() - 1.0) + nu.abs() * s;
    let mut s_max = 1.0;
    while log_f(s_max) > -60.0 || s_max < 2.0 {
        s_max *= 1.25;
    }
    let est = tanh_sinh(
        |s| (-z * (s.cosh() - 1.0)).exp() * (nu * s).cosh(),
        0.0,
        s_max,
        1e-13,
        14,
    );
    assert!(est.converged, "oracle did not converge at nu={nu}, z={z}");
    est.value * (-z).exp()
}

/// K'_ν(z) = -∫_0^∞ cosh(s) e^{-z cosh s} cosh(νs) ds, same truncation as above.
pub fn bessel_k_deriv_integral(nu: f64, z: f64) -> f64 {
    let log_f = |s: f64| -z * (s.cosh() - 1.0) + (nu.abs() + 1.0) * s;
    let mut s_max = 1.0;
    while log_f(s_max) > -60.0 || s_max < 2.0 {
        s_max *= 1.25;
    }
    let est = tanh_sinh(
        |s| s.cosh() * (-z * (s.cosh() - 1.0)).exp() * (nu * s).cosh(),
        0.0,
        s_max,
        1e-13,
        14,
    );
    assert!(est.converged, "oracle did not converge at nu={nu}, z={z}");
    -est.value * (-z).exp()
}

/// φ for n = 3: 4π sinh(r)/r.
pub fn phi3(r: f64) -> f64 {
    if r == 0.0 {
        4.0 * PI
    } else {
        4.0 * PI * r.sinh() / r
    }
}

/// φ for n = 5: 8π²(r cosh r - sinh r)/r³.
pub fn phi5(r: f64) -> f64 {
    if r < 0.05 {
        let r2 = r * r;
        8.0 * PI * PI * (1.0 / 3.0 + r2 / 30.0 + r2 * r2 / 840.0)
    } else {
        8.0 * PI * PI * (r * r.cosh() - r.sinh()) / r.powi(3)
    }
}

/// Midpoint rule with `n` cells on [a, b].
pub fn midpoint<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        s += f(a + (i as f64 + 0.5) * h);
    }
    s * h
}

/// Log-spaced points on [a, b].
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64))
        .collect()
}
