//! Quadrature rules shared by the special-function and test-function code.
//!
//! * [`GaussLegendre`]: fixed n-point rule, nodes by Newton iteration on the
//!   three-term Legendre recurrence.
//! * [`tanh_sinh`]: double-exponential rule on a finite interval. It tolerates
//!   algebraic endpoint singularities and is used as the independent oracle for
//!   integral representations (it shares no code with the series evaluators).
//! * [`trapezoid`] / [`cumulative_trapezoid`]: sampled data.

use std::f64::consts::PI;

/// n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        let nf = n as f64;
        for i in 0..m {
            // Tricomi initial guess, then Newton.
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let (p, pm1) = if n == 0 { (1.0, 0.0) } else { (p1, p0) };
    let d = n as f64 * (x * p - pm1) / (x * x - 1.0);
    (p, d)
}

/// Outcome of an adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Tanh-sinh quadrature of `f` over [a, b].
///
/// Levels halve the step in the transformed variable; the difference of two
/// successive levels is the error estimate. `f` is never evaluated at the
/// endpoints, and abscissae near either endpoint are formed from the distance
/// to that endpoint so no precision is lost there.
pub fn tanh_sinh<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_level: usize,
) -> QuadEstimate {
    const T_MAX: f64 = 4.0;
    let width = b - a;

    // Contribution of the abscissa at transformed coordinate t (t != 0 pairs
    // with -t).
    let mut node = |t: f64| -> f64 {
        let u = 0.5 * PI * t.sinh();
        let e = (-2.0 * u.abs()).exp();
        let delta = e / (1.0 + e); // (1 - tanh|u|) / 2
        if delta == 0.0 {
            return 0.0;
        }
        let w = width * PI * t.cosh() * delta * (1.0 - delta);
        let x = if t > 0.0 {
            b - width * delta
        } else {
            a + width * delta
        };
        if x <= a || x >= b {
            return 0.0;
        }
        let v = f(x);
        if v.is_finite() {
            w * v
        } else {
            0.0
        }
    };

    let mut evaluations = 0usize;
    let mut h = 1.0;
    let mut sum = node(0.0);
    evaluations += 1;
    let mut k = 1;
    while (k as f64) * h <= T_MAX {
        let t = k as f64 * h;
        sum += node(t) + node(-t);
        evaluations += 2;
        k += 1;
    }
    let mut estimate = sum * h;
    let mut error = f64::INFINITY;
    for _level in 1..=max_level {
        h *= 0.5;
        let mut k = 1;
        while (k as f64) * h <= T_MAX {
            let t = k as f64 * h;
            sum += node(t) + node(-t);
            evaluations += 2;
            k += 2;
        }
        let next = sum * h;
        error = (next - estimate).abs();
        estimate = next;
        if error <= rel_tol * estimate.abs() {
            return QuadEstimate {
                value: estimate,
                error,
                evaluations,
                converged: true,
            };
        }
    }
    QuadEstimate {
        value: estimate,
        error,
        evaluations,
        converged: false,
    }
}

/// Trapezoid rule over samples `(x_i, y_i)` with non-decreasing `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Running trapezoid integral, starting at 0 at `x[0]`.
pub fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
        out.push(acc);
    }
    out
}
