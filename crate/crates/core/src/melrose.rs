//! Marvizi–Melrose invariants R'(0), R''(0): curvature integrals and an
//! independent fit of the action of near-boundary invariant circles.

use crate::circles::{find_circle, CircleError, CircleOptions, DiophantineSpec, InvariantCircleRecord};
use crate::geometry::BoundaryCurve;
use crate::numerics::{periodic_trapezoid, weighted_polyfit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MelroseError {
    #[error("circle records do not approach the boundary: {0}")]
    InsufficientBoundaryApproach(String),
    #[error(transparent)]
    Circle(#[from] CircleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureInvariants {
    pub first: f64,
    pub second: f64,
    /// Nodes used by the converged periodic quadrature.
    pub nodes: usize,
}

fn self_converged<F: Fn(f64) -> f64>(f: F, tol: f64) -> (f64, usize) {
    let mut n = 64;
    let mut prev = periodic_trapezoid(2.0 * PI, n, &f);
    loop {
        n *= 2;
        let next = periodic_trapezoid(2.0 * PI, n, &f);
        if (next - prev).abs() <= tol * next.abs().max(1e-300) || n >= 1 << 20 {
            return (next, n);
        }
        prev = next;
    }
}

/// R'(0) = −(1/π)∫κ^{2/3} ds and R''(0) = (1/2160π)∫(9κ^{4/3} + 8κ^{−8/3}κ'²) ds,
/// integrated over the normal angle with ds = ρ dθ.
pub fn invariants_from_curvature(curve: &BoundaryCurve) -> CurvatureInvariants {
    let (a, n1) = self_converged(|t| curve.radius_of_curvature(t).0.cbrt(), 1e-13);
    let (b, n2) = self_converged(
        |t| {
            let (r, dr) = curve.radius_of_curvature(t);
            // κ = 1/ρ, dκ/ds = −ρ'/ρ³
            9.0 / r.cbrt() + 8.0 * dr * dr / r.powf(7.0 / 3.0)
        },
        1e-13,
    );
    CurvatureInvariants { first: -a / PI, second: b / (2160.0 * PI), nodes: n1.max(n2) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolatingFit {
    /// Limit of the caustic parameter r = −I(ω) as ω → 0.
    pub l: f64,
    pub first: f64,
    pub second: f64,
    /// Coefficients of r(ω) in powers ω⁰, ω², ω⁴, …
    pub coefficients: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Number of even powers beyond the constant.
    pub degree: usize,
    pub max_omega: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { degree: 3, max_omega: 0.2 }
    }
}

/// Fit r(ω) = l + a₂ω² + a₄ω⁴ + … with weights 1/ω and convert through the
/// boundary expansion of periodic-orbit lengths: R'(0) = 4 a₂^{1/3},
/// R''(0) = 8192 a₄ / (5 R'(0)⁴).
pub fn interpolating_fit(records: &[InvariantCircleRecord], opts: &FitOptions) -> Result<InterpolatingFit, MelroseError> {
    let mut omegas: Vec<f64> = records.iter().map(|r| r.omega).collect();
    omegas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    omegas.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if omegas.len() < opts.degree + 2 {
        return Err(MelroseError::InsufficientBoundaryApproach(format!(
            "{} distinct frequencies for a degree-{} fit",
            omegas.len(),
            opts.degree
        )));
    }
    let wmax = omegas.last().copied().unwrap();
    if wmax > opts.max_omega {
        return Err(MelroseError::InsufficientBoundaryApproach(format!("max ω = {wmax} exceeds {}", opts.max_omega)));
    }
    let xs: Vec<f64> = records.iter().map(|r| r.omega * r.omega).collect();
    let ys: Vec<f64> = records.iter().map(|r| -r.action).collect();
    let ws: Vec<f64> = records.iter().map(|r| 1.0 / r.omega).collect();
    let (coef, cov) = weighted_polyfit(&xs, &ys, &ws, opts.degree);
    let first = 4.0 * coef[1].cbrt();
    let second = if coef.len() > 2 { 8192.0 * coef[2] / (5.0 * first.powi(4)) } else { f64::NAN };
    let covariance = (0..cov.nrows()).map(|i| (0..cov.ncols()).map(|j| cov[(i, j)]).collect()).collect();
    Ok(InterpolatingFit { l: coef[0], first, second, coefficients: coef, covariance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelroseReport {
    pub perimeter: f64,
    pub curvature: CurvatureInvariants,
    pub fit: InterpolatingFit,
    pub omegas: Vec<f64>,
    pub max_circle_residual: f64,
    /// |fit − curvature| / |curvature| for R'(0).
    pub first_residual: f64,
    pub second_residual: f64,
    /// |l_fit − L/2π|.
    pub length_residual: f64,
}

/// Circles at each ω (in parallel) followed by both invariant routes.
pub fn compare(curve: &BoundaryCurve, omegas: &[f64], modes: usize, opts: &FitOptions) -> Result<MelroseReport, MelroseError> {
    if omegas.is_empty() || omegas.iter().any(|&w| !(w > 0.0)) {
        return Err(MelroseError::InsufficientBoundaryApproach("frequencies must be positive".into()));
    }
    let wmin = omegas.iter().copied().fold(f64::INFINITY, f64::min);
    let spec = DiophantineSpec::new(1e-3 * wmin, 1.5, modes as u64)?;
    let records = omegas
        .par_iter()
        .map(|&w| find_circle(curve, w, &CircleOptions::new(modes, spec)))
        .collect::<Result<Vec<_>, _>>()?;
    let fit = interpolating_fit(&records, opts)?;
    let curvature = invariants_from_curvature(curve);
    Ok(MelroseReport {
        perimeter: curve.perimeter(),
        first_residual: ((fit.first - curvature.first) / curvature.first).abs(),
        second_residual: ((fit.second - curvature.second) / curvature.second).abs(),
        length_residual: (fit.l - curve.perimeter() / (2.0 * PI)).abs(),
        max_circle_residual: records.iter().map(|r| r.residual).fold(0.0, f64::max),
        omegas: omegas.to_vec(),
        curvature,
        fit,
    })
}

/// Frequencies ω_max·(golden)^{−j/n}-style spread over (ω_max/4, ω_max].
pub fn boundary_frequencies(max_omega: f64, count: usize) -> Vec<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    (0..count)
        .map(|j| {
            let t = j as f64 / (count.max(2) - 1) as f64;
            max_omega * (1.0 - 0.75 * t) * (1.0 - 1e-3 * g * (j as f64 + 1.0))
        })
        .collect()
}
