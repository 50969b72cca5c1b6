//! Ordinary least squares for straight-line fits.

use crate::error::{Error, Result};

const MODULE: &str = "fit";

/// y ≈ slope·x + intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope (0 for two points or an exact fit).
    pub slope_stderr: f64,
    pub points: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::domain(MODULE, "x and y lengths differ"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::insufficient(MODULE, format!("need at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::domain(MODULE, "all x values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_stderr = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r2,
        slope_stderr,
        points: n,
    })
}
