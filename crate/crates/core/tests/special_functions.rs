mod common;

use common::{bessel_k_integral, logspace};
use epd_core::special_functions::{
    bessel_k, gamma_fn, h_eval, h_limit_constant, SpecFunConfig,
};

fn cfg() -> SpecFunConfig {
    SpecFunConfig::for_tests()
}

#[test]
fn gamma_examples() {
    assert_eq!(gamma_fn(1.0).unwrap(), 1.0);
    assert!((gamma_fn(0.5).unwrap() - std::f64::consts::PI.sqrt()).abs() < 1e-14);
    let g25 = 1.5 * 0.5 * gamma_fn(0.5).unwrap();
    assert!((gamma_fn(2.5).unwrap() / g25 - 1.0).abs() < 1e-14);
    assert!(gamma_fn(0.0).is_err());
    assert!(gamma_fn(-1.5).is_err());
}

#[test]
fn bessel_matches_integral_representation() {
    let mut worst: f64 = 0.0;
    for nu in [0.0, 0.25, 0.5, 1.0, 2.3] {
        for z in logspace(1e-3, 50.0, 40) {
            let k = bessel_k(nu, z, &cfg()).unwrap();
            let oracle = bessel_k_integral(nu, z);
            worst = worst.max((k / oracle - 1.0).abs());
        }
    }
    assert!(worst <= 1e-8, "worst relative error {worst:e}");
}

#[test]
fn derivative_recurrence() {
    for nu in [0.5, 1.0, 2.3] {
        for z in [0.1f64, 1.0, 10.0] {
            let h = (0.01 * z).min(0.02);
            let k = |x: f64| bessel_k(nu, x, &cfg()).unwrap();
            // 7-point central difference
            let d = (k(z + 3.0 * h) - 9.0 * k(z + 2.0 * h) + 45.0 * k(z + h)
                - 45.0 * k(z - h)
                + 9.0 * k(z - 2.0 * h)
                - k(z - 3.0 * h))
                / (60.0 * h);
            let rhs = -0.5 * (bessel_k(nu - 1.0, z, &cfg()).unwrap() + bessel_k(nu + 1.0, z, &cfg()).unwrap());
            assert!((d - rhs).abs() <= 1e-8 * k(z), "nu={nu} z={z}: {d} vs {rhs}");
        }
    }
}

#[test]
fn three_term_recurrence() {
    for nu in [0.25, 0.5, 1.0, 1.7, 2.3, 5.5] {
        for z in logspace(1e-2, 40.0, 15) {
            let k = bessel_k(nu, z, &cfg()).unwrap();
            let rhs = -z / (2.0 * nu)
                * (bessel_k(nu - 1.0, z, &cfg()).unwrap() - bessel_k(nu + 1.0, z, &cfg()).unwrap());
            assert!((k - rhs).abs() <= 1e-8 * k, "nu={nu} z={z}");
        }
    }
}

#[test]
fn positive_and_decreasing() {
    for nu in [0.0, 0.3, 1.0, 2.3, 7.0] {
        let zs = logspace(1e-3, 60.0, 200);
        let vals: Vec<f64> = zs.iter().map(|&z| bessel_k(nu, z, &cfg()).unwrap()).collect();
        assert!(vals.iter().all(|&v| v > 0.0));
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn symmetry_and_small_argument_law() {
    for nu in [0.3, 1.0, 2.5] {
        for z in [0.01, 1.0, 20.0] {
            assert_eq!(bessel_k(nu, z, &cfg()).unwrap(), bessel_k(-nu, z, &cfg()).unwrap());
        }
    }
    let z = 1e-4;
    assert!((bessel_k(1.0, z, &cfg()).unwrap() * z - 1.0).abs() < 1e-3);
}

fn fd_bessel_ode_residual(nu: f64, z: f64, h: f64) -> f64 {
    let k = |x: f64| bessel_k(nu, x, &cfg()).unwrap();
    let (km, k0, kp) = (k(z - h), k(z), k(z + h));
    let d2 = (kp - 2.0 * k0 + km) / (h * h);
    let d1 = (kp - km) / (2.0 * h);
    (d2 + d1 / z - (1.0 + nu * nu / (z * z)) * k0) / k0
}

#[test]
fn bessel_ode_residual_is_second_order() {
    for mu in [0.5, 1.0, 1.5, 2.5] {
        let nu = 0.5 * (mu - 1.0);
        for z in [0.5, 1.0, 5.0] {
            let r1 = fd_bessel_ode_residual(nu, z, 0.02);
            let r2 = fd_bessel_ode_residual(nu, z, 0.01);
            let ratio = r1 / r2;
            assert!((3.5..=4.5).contains(&ratio), "mu={mu} z={z} ratio={ratio}");
        }
    }
}

fn fd_h_ode_residual(mu: f64, t: f64, d: f64) -> f64 {
    let h = |x: f64| h_eval(x, mu, &cfg()).unwrap().value;
    let (hm, h0, hp) = (h(t - d), h(t), h(t + d));
    let h2 = (hp - 2.0 * h0 + hm) / (d * d);
    let damp = (mu * hp / (t + d) - mu * hm / (t - d)) / (2.0 * d);
    (h2 - damp - h0) / h0
}

#[test]
fn h_solves_its_ode_to_second_order() {
    for mu in [0.5, 1.0, 1.5, 2.0, 3.0] {
        for t in [0.5, 1.0, 5.0] {
            let r1 = fd_h_ode_residual(mu, t, 0.02);
            let r2 = fd_h_ode_residual(mu, t, 0.01);
            assert!(r2.abs() < 1e-3);
            let ratio = r1 / r2;
            assert!((3.5..=4.5).contains(&ratio), "mu={mu} t={t} ratio={ratio}");
        }
    }
}

#[test]
fn h_derivative_is_the_recurrence_form() {
    for mu in [0.5, 1.0, 2.0, 3.7] {
        for t in [0.2, 1.0, 8.0, 25.0] {
            let e = h_eval(t, mu, &cfg()).unwrap();
            let nu = 0.5 * (mu - 1.0);
            let expected = mu * t.powf(nu) * bessel_k(nu, t, &cfg()).unwrap()
                - t.powf(nu + 1.0) * bessel_k(nu + 1.0, t, &cfg()).unwrap();
            assert!((e.derivative - expected).abs() <= 1e-12 * expected.abs().max(e.value));
            assert!(e.value > 0.0);
        }
    }
    // μ = 1 gives t K_0(t)
    let t = 2.5;
    let e = h_eval(t, 1.0, &cfg()).unwrap();
    assert!((e.value / (t * bessel_k(0.0, t, &cfg()).unwrap()) - 1.0).abs() < 1e-15);
}

#[test]
fn h_large_time_envelope() {
    let mu = 2.0;
    for t in (30..=60).map(|k| k as f64) {
        let ratio = h_eval(t, mu, &cfg()).unwrap().value / (t.powf(0.5 * mu) * (-t).exp());
        assert!((0.5..=2.5).contains(&ratio), "t={t} ratio={ratio}");
    }
}

#[test]
fn limit_constant_by_small_time_extrapolation() {
    assert_eq!(h_limit_constant(1.0).unwrap(), 1.0);
    assert!((h_limit_constant(3.0).unwrap() - 2.0).abs() < 1e-14);
    for mu in [1.5, 2.0, 3.0] {
        let c0 = h_limit_constant(mu).unwrap();
        let t = 1e-4;
        let e = h_eval(t, mu, &cfg()).unwrap();
        let v = -e.derivative + mu * e.value / t;
        assert!(((v - c0) / c0).abs() <= 1e-2, "mu={mu}: {v} vs {c0}");
        // the sequence t = 2^-k approaches C_0
        let gaps: Vec<f64> = (2..12)
            .map(|k| {
                let t = 0.5f64.powi(k);
                let e = h_eval(t, mu, &cfg()).unwrap();
                (-e.derivative + mu * e.value / t - c0).abs()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
    }
}
