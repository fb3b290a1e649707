//! Desk-scale KAM machinery: regularized divisors and the cohomological
//! equation for maps, analytic smoothing of periodic data, one Hamiltonian
//! KAM step on Fourier–Taylor data, and the parameter schedule of the
//! iteration together with its condition checks.

use crate::numerics::{wavenumber, wrap_pi, GaussLegendre};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KamError {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("smallness conditions failed: {}", failed_names(.0))]
    SmallnessViolation(Vec<Condition>),
    #[error("flow integrator did not converge with {steps} steps (defect {defect:e})")]
    FlowStepFailure { steps: usize, defect: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn failed_names(c: &[Condition]) -> String {
    c.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
}

/// One inequality `lhs ≤ rhs` (or `<`). With `log` set both sides are
/// natural logarithms of the quantities compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub log: bool,
    pub holds: bool,
}

impl Condition {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, log: false, holds: lhs <= rhs }
    }
    fn log_le(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, log: true, holds: lhs <= rhs + 1e-12 * rhs.abs().max(1.0) }
    }
    fn log_lt(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, log: true, holds: lhs < rhs }
    }
    /// rhs − lhs (in log units when `log`).
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

// ---------------------------------------------------------------------------
// Cutoffs, divisors and the cohomological equation for maps

/// Smooth monotone step: 1 for t ≤ 0, 0 for t ≥ 1, built from the bump
/// exp(−1/(1−x²)).
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    // exp(−1/(1−x²)) at x = 1 − u
    let g = |u: f64| (-1.0 / (u * (2.0 - u))).exp();
    let (a, b) = (g(1.0 - t), g(t));
    a / (a + b)
}

/// φ with φ = 1 on |x| ≤ π/5 and φ = 0 on |x| ≥ π/4.
pub fn standard_cutoff(x: f64) -> f64 {
    smooth_step((x.abs() - PI / 5.0) / (PI / 4.0 - PI / 5.0))
}

fn l1(k: &[i64]) -> f64 {
    k.iter().map(|v| v.unsigned_abs() as f64).sum()
}

fn dot(omega: &[f64], k: &[i64]) -> f64 {
    omega.iter().zip(k).map(|(w, &k)| w * k as f64).sum()
}

/// z_k(ω) = 1 − e^{i⟨ω,k⟩} + (κ/3)(1+|k|)^{−τ} φ({⟨ω,k⟩}|k|^τ/κ), where {x}
/// is the representative of x mod 2π in [−π, π).
pub fn modified_divisor(omega: &[f64], k: &[i64], kappa: f64, tau: f64, cutoff: &dyn Fn(f64) -> f64) -> Complex64 {
    assert!(k.iter().any(|&v| v != 0), "modified divisor needs k ≠ 0");
    let phase = dot(omega, k);
    let norm = l1(k);
    let reg = kappa / 3.0 * (1.0 + norm).powf(-tau) * cutoff(wrap_pi(phase) * norm.powf(tau) / kappa);
    Complex64::new(1.0, 0.0) - Complex64::cis(phase) + reg
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierMode {
    pub k: Vec<i64>,
    pub value: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomologicalSolution {
    /// f̂_k = −F̂_k / z_k on every nonzero input mode.
    pub f: Vec<FourierMode>,
    pub c: Complex64,
    /// |f̂_k(e^{i⟨ω,k⟩} − 1) − c δ_{k0} − F̂_k| per input mode, in input order.
    pub mode_residuals: Vec<f64>,
    pub max_residual: f64,
    /// Modes on which the regularization term is active.
    pub regularized: Vec<Vec<i64>>,
    /// Largest |f̂_k / F̂_k|.
    pub max_amplification: f64,
}

/// Solve f(θ+ω) − f(θ) − c = F(θ) mode by mode with regularized divisors.
pub fn solve_homological(modes: &[FourierMode], omega: &[f64], kappa: f64, tau: f64) -> HomologicalSolution {
    let mut f = Vec::new();
    let mut c = Complex64::new(0.0, 0.0);
    let mut regularized = Vec::new();
    let mut max_amplification: f64 = 0.0;
    for m in modes {
        if m.k.iter().all(|&v| v == 0) {
            c -= m.value;
            continue;
        }
        let z = modified_divisor(omega, &m.k, kappa, tau, &standard_cutoff);
        let plain = Complex64::new(1.0, 0.0) - Complex64::cis(dot(omega, &m.k));
        if z != plain {
            regularized.push(m.k.clone());
        }
        max_amplification = max_amplification.max(1.0 / z.norm());
        f.push(FourierMode { k: m.k.clone(), value: -m.value / z });
    }
    let lookup = |k: &[i64]| f.iter().find(|g| g.k == k).map(|g| g.value).unwrap_or_default();
    let mode_residuals: Vec<f64> = modes
        .iter()
        .map(|m| {
            if m.k.iter().all(|&v| v == 0) {
                (-c - m.value).norm()
            } else {
                let shift = Complex64::cis(dot(omega, &m.k)) - 1.0;
                (lookup(&m.k) * shift - m.value).norm()
            }
        })
        .collect();
    let max_residual = mode_residuals.iter().copied().fold(0.0, f64::max);
    HomologicalSolution { f, c, mode_residuals, max_residual, regularized, max_amplification }
}

// ---------------------------------------------------------------------------
// Smoothing

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKernel {
    /// m̂ ≡ 1 on |ξ| ≤ plateau.
    pub plateau: f64,
    /// m̂ ≡ 0 on |ξ| ≥ support.
    pub support: f64,
}

impl Default for SmoothingKernel {
    fn default() -> Self {
        Self { plateau: 0.5, support: 1.0 }
    }
}

impl SmoothingKernel {
    pub fn new(plateau: f64, support: f64) -> Result<Self, KamError> {
        if !(plateau > 0.0 && plateau < support && support <= 1.0) {
            return Err(KamError::ParameterOutOfRange(format!("need 0 < plateau < support ≤ 1, got {plateau}, {support}")));
        }
        Ok(Self { plateau, support })
    }

    pub fn multiplier(&self, xi: f64) -> f64 {
        smooth_step((xi.abs() - self.plateau) / (self.support - self.plateau))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingOutput {
    pub samples: Vec<f64>,
    /// Σ |(1 − m̂(ρk)) f̂_k|, the coefficient mass removed.
    pub tail: f64,
    /// Largest |k| with m̂(ρk) > 0.
    pub highest_mode: i64,
}

/// Fourier multiplier f̂_k ↦ m̂(ρk) f̂_k on uniform periodic samples.
pub fn smooth(samples: &[f64], rho: f64, kernel: &SmoothingKernel) -> Result<SmoothingOutput, KamError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(KamError::ParameterOutOfRange(format!("rho = {rho} outside (0, 1]")));
    }
    if samples.is_empty() {
        return Err(KamError::InvalidInput("no samples".into()));
    }
    let n = samples.len();
    let mut c: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut c);
    let mut tail = 0.0;
    let mut highest_mode = 0;
    for (j, v) in c.iter_mut().enumerate() {
        let k = wavenumber(j, n);
        let m = kernel.multiplier(rho * k as f64);
        tail += (1.0 - m) * v.norm() / n as f64;
        if m > 0.0 {
            highest_mode = highest_mode.max(k.abs());
        }
        *v *= m / n as f64;
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut c);
    Ok(SmoothingOutput { samples: c.iter().map(|v| v.re).collect(), tail, highest_mode })
}

/// Samples of Σ_{k≥1} k^{−ℓ−1} cos kx on a uniform grid: a function whose
/// smoothness is exactly ℓ in the Hölder–Zygmund sense.
pub fn regularity_test_function(ell: f64, grid: usize) -> Vec<f64> {
    let mut c = vec![Complex64::new(0.0, 0.0); grid];
    for (k, v) in c.iter_mut().enumerate().take(grid.div_ceil(2)).skip(1) {
        *v = Complex64::new(0.5 * (k as f64).powf(-ell - 1.0), 0.0);
    }
    for k in 1..grid.div_ceil(2) {
        c[grid - k] = c[k];
    }
    FftPlanner::new().plan_fft_inverse(grid).process(&mut c);
    c.iter().map(|v| v.re).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingRate {
    pub rhos: Vec<f64>,
    /// sup |S_ρ f − f| on the grid.
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Log-log slope of sup |S_ρ f − f| against ρ.
pub fn smoothing_rate(samples: &[f64], rhos: &[f64], kernel: &SmoothingKernel) -> Result<SmoothingRate, KamError> {
    if rhos.len() < 2 {
        return Err(KamError::InvalidInput("need at least two values of ρ".into()));
    }
    let errors = rhos
        .iter()
        .map(|&rho| {
            smooth(samples, rho, kernel)
                .map(|out| out.samples.iter().zip(samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<f64> = rhos.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let slope = crate::numerics::linear_slope(&xs, &ys).0;
    Ok(SmoothingRate { rhos: rhos.to_vec(), errors, slope })
}

/// Σ_k |f̂_k| e^{|k|s} for coefficients in FFT slot order.
pub fn fourier_proxy(coeffs: &[Complex64], s: f64) -> f64 {
    let n = coeffs.len();
    coeffs.iter().enumerate().map(|(j, c)| c.norm() * (wavenumber(j, n).abs() as f64 * s).exp()).sum()
}

// ---------------------------------------------------------------------------
// Fourier–Taylor data on T^n × R^n, n ∈ {1, 2}

fn fft_nd(data: &mut [Complex64], dim: usize, grid: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(grid) } else { planner.plan_fft_forward(grid) };
    for row in data.chunks_mut(grid) {
        plan.process(row);
    }
    if dim == 2 {
        let mut col = vec![Complex64::new(0.0, 0.0); grid];
        for i0 in 0..grid {
            for (i1, v) in col.iter_mut().enumerate() {
                *v = data[i0 + grid * i1];
            }
            plan.process(&mut col);
            for (i1, v) in col.iter().enumerate() {
                data[i0 + grid * i1] = *v;
            }
        }
    }
}

/// Multi-indices β with |β| ≤ degree, ordered by total degree.
pub fn taylor_exponents(dim: usize, degree: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for d in 0..=degree {
        if dim == 1 {
            out.push([d, 0]);
        } else {
            for a in (0..=d).rev() {
                out.push([a, d - a]);
            }
        }
    }
    out
}

fn exponent_index(exps: &[[usize; 2]], e: [usize; 2]) -> Option<usize> {
    exps.iter().position(|x| *x == e)
}

fn poly_mul(a: &[f64], b: &[f64], exps: &[[usize; 2]]) -> Vec<f64> {
    let mut out = vec![0.0; exps.len()];
    for (i, ea) in exps.iter().enumerate() {
        if a[i] == 0.0 {
            continue;
        }
        for (j, eb) in exps.iter().enumerate() {
            if let Some(t) = exponent_index(exps, [ea[0] + eb[0], ea[1] + eb[1]]) {
                out[t] += a[i] * b[j];
            }
        }
    }
    out
}

/// f(θ, I) = Σ_β f_β(θ) I^β with each f_β sampled on a uniform grid of
/// `grid` points per angle; sample index i₀ + grid·i₁.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTaylor {
    pub dim: usize,
    pub grid: usize,
    pub exponents: Vec<[usize; 2]>,
    pub samples: Vec<Vec<f64>>,
}

impl FourierTaylor {
    pub fn zero(dim: usize, grid: usize, degree: usize) -> Result<Self, KamError> {
        if !(dim == 1 || dim == 2) {
            return Err(KamError::InvalidInput(format!("torus dimension {dim} not supported")));
        }
        if grid < 8 || !grid.is_power_of_two() {
            return Err(KamError::InvalidInput(format!("grid {grid} must be a power of two ≥ 8")));
        }
        let exponents = taylor_exponents(dim, degree);
        let samples = vec![vec![0.0; grid.pow(dim as u32)]; exponents.len()];
        Ok(Self { dim, grid, exponents, samples })
    }

    /// `taylor(θ)` returns f_β(θ) in the order of [`taylor_exponents`].
    pub fn from_taylor<F: Fn(&[f64]) -> Vec<f64>>(dim: usize, grid: usize, degree: usize, taylor: F) -> Result<Self, KamError> {
        let mut out = Self::zero(dim, grid, degree)?;
        for p in 0..out.points() {
            let th = out.theta(p);
            let v = taylor(&th[..dim]);
            if v.len() != out.exponents.len() {
                return Err(KamError::InvalidInput(format!("expected {} Taylor coefficients, got {}", out.exponents.len(), v.len())));
            }
            for (b, x) in v.into_iter().enumerate() {
                out.samples[b][p] = x;
            }
        }
        Ok(out)
    }

    pub fn points(&self) -> usize {
        self.grid.pow(self.dim as u32)
    }

    pub fn degree(&self) -> usize {
        self.exponents.last().map(|e| e[0] + e[1]).unwrap_or(0)
    }

    pub fn theta(&self, p: usize) -> [f64; 2] {
        let h = 2.0 * PI / self.grid as f64;
        [(p % self.grid) as f64 * h, (p / self.grid) as f64 * h]
    }

    pub fn wavevector(&self, p: usize) -> [i64; 2] {
        if self.dim == 1 {
            [wavenumber(p, self.grid), 0]
        } else {
            [wavenumber(p % self.grid, self.grid), wavenumber(p / self.grid, self.grid)]
        }
    }

    fn is_nyquist(&self, k: [i64; 2]) -> bool {
        let half = (self.grid / 2) as i64;
        k[0] == half || k[1] == half
    }

    /// Fourier coefficients per exponent, normalized so f_β(θ) = Σ c_k e^{i⟨k,θ⟩}.
    pub fn coefficients(&self) -> Vec<Vec<Complex64>> {
        let scale = 1.0 / self.points() as f64;
        self.samples
            .iter()
            .map(|s| {
                let mut c: Vec<Complex64> = s.iter().map(|&x| Complex64::new(x * scale, 0.0)).collect();
                fft_nd(&mut c, self.dim, self.grid, false);
                c
            })
            .collect()
    }

    fn with_coefficients(&self, coeffs: Vec<Vec<Complex64>>) -> Self {
        let samples = coeffs
            .into_iter()
            .map(|mut c| {
                fft_nd(&mut c, self.dim, self.grid, true);
                c.into_iter().map(|v| v.re).collect()
            })
            .collect();
        Self { samples, ..self.clone() }
    }

    /// Same data re-indexed to Taylor degree `degree` (dropping or padding).
    pub fn with_degree(&self, degree: usize) -> Self {
        let exponents = taylor_exponents(self.dim, degree);
        let samples = exponents
            .iter()
            .map(|e| exponent_index(&self.exponents, *e).map(|i| self.samples[i].clone()).unwrap_or_else(|| vec![0.0; self.points()]))
            .collect();
        Self { exponents, samples, ..self.clone() }
    }

    /// Keep Fourier modes with |k|₁ ≤ K and Taylor degree ≤ `degree`.
    pub fn truncated(&self, k_max: usize, degree: usize) -> Self {
        let base = self.with_degree(degree);
        let mut coeffs = base.coefficients();
        for c in &mut coeffs {
            for (p, v) in c.iter_mut().enumerate() {
                let k = self.wavevector(p);
                if (k[0].abs() + k[1].abs()) as usize > k_max || self.is_nyquist(k) {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
        }
        base.with_coefficients(coeffs)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let d = self.degree().max(other.degree());
        let (mut a, b) = (self.with_degree(d), other.with_degree(d));
        for (x, y) in a.samples.iter_mut().zip(&b.samples) {
            for (u, v) in x.iter_mut().zip(y) {
                *u -= v;
            }
        }
        a
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut a = self.clone();
        a.samples.iter_mut().flatten().for_each(|v| *v *= factor);
        a
    }

    /// θ-average of the coefficient of I^β.
    pub fn mean(&self, beta: [usize; 2]) -> f64 {
        exponent_index(&self.exponents, beta)
            .map(|i| self.samples[i].iter().sum::<f64>() / self.points() as f64)
            .unwrap_or(0.0)
    }

    pub fn derivative_theta(&self, axis: usize) -> Self {
        let mut coeffs = self.coefficients();
        for c in &mut coeffs {
            for (p, v) in c.iter_mut().enumerate() {
                let k = self.wavevector(p);
                *v = if self.is_nyquist(k) { Complex64::new(0.0, 0.0) } else { *v * Complex64::new(0.0, k[axis] as f64) };
            }
        }
        self.with_coefficients(coeffs)
    }

    pub fn derivative_action(&self, axis: usize) -> Self {
        let mut out = self.scaled(0.0);
        for (b, e) in self.exponents.iter().enumerate() {
            if e[axis] == 0 {
                continue;
            }
            let mut lower = *e;
            lower[axis] -= 1;
            let t = exponent_index(&self.exponents, lower).expect("lower exponent present");
            for (u, v) in out.samples[t].iter_mut().zip(&self.samples[b]) {
                *u += e[axis] as f64 * v;
            }
        }
        out
    }

    /// Pointwise product, truncated at the larger Taylor degree of the factors.
    pub fn mul(&self, other: &Self) -> Self {
        let d = self.degree().max(other.degree());
        let (a, b) = (self.with_degree(d), other.with_degree(d));
        let mut out = a.scaled(0.0);
        for p in 0..a.points() {
            let va: Vec<f64> = a.samples.iter().map(|s| s[p]).collect();
            let vb: Vec<f64> = b.samples.iter().map(|s| s[p]).collect();
            for (i, v) in poly_mul(&va, &vb, &a.exponents).into_iter().enumerate() {
                out.samples[i][p] = v;
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.sub(&other.scaled(-1.0))
    }

    /// {f, g} = Σ ∂_{θ_i} f ∂_{I_i} g − ∂_{I_i} f ∂_{θ_i} g.
    pub fn poisson(&self, other: &Self) -> Self {
        let mut out: Option<Self> = None;
        for i in 0..self.dim {
            let t = self.derivative_theta(i).mul(&other.derivative_action(i)).sub(&self.derivative_action(i).mul(&other.derivative_theta(i)));
            out = Some(match out {
                None => t,
                Some(o) => o.add(&t),
            });
        }
        out.expect("dimension ≥ 1")
    }

    /// Σ_β Σ_k |ĉ_{k,β}| e^{|k|₁ s} r^{|β|}. Coefficients below 1e-13 of the
    /// largest one are roundoff of the transform and are skipped.
    pub fn proxy(&self, s: f64, r: f64) -> f64 {
        let coeffs = self.coefficients();
        let floor = 1e-13 * coeffs.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
        coeffs
            .iter()
            .zip(&self.exponents)
            .map(|(c, e)| {
                let w = r.powi((e[0] + e[1]) as i32);
                c.iter()
                    .enumerate()
                    .filter(|(_, v)| v.norm() > floor)
                    .map(|(p, v)| {
                        let k = self.wavevector(p);
                        v.norm() * ((k[0].abs() + k[1].abs()) as f64 * s).exp()
                    })
                    .sum::<f64>()
                    * w
            })
            .sum()
    }

    /// max |c_k − conj(c_{−k})| over all exponents.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid;
        let mut worst: f64 = 0.0;
        for c in self.coefficients() {
            for p in 0..self.points() {
                let (i0, i1) = (p % n, p / n);
                let q = (n - i0) % n + n * ((n - i1) % n);
                let q = if self.dim == 1 { (n - p) % n } else { q };
                worst = worst.max((c[p] - c[q].conj()).norm());
            }
        }
        worst
    }

    fn sparse(&self) -> Vec<Sparse> {
        self.coefficients().iter().map(|c| Sparse::new(self, c)).collect()
    }

    /// Sparse series keeping only |k|₁ ≤ `band`; used for data known to be
    /// band-limited so that transform roundoff outside the band is dropped.
    fn sparse_band(&self, band: usize) -> Vec<Sparse> {
        self.coefficients()
            .into_iter()
            .map(|mut c| {
                for (p, v) in c.iter_mut().enumerate() {
                    let k = self.wavevector(p);
                    if (k[0].abs() + k[1].abs()) as usize > band {
                        *v = Complex64::new(0.0, 0.0);
                    }
                }
                Sparse::new(self, &c)
            })
            .collect()
    }

    /// f(θ, I) by trigonometric interpolation of the samples.
    pub fn eval(&self, theta: &[f64], action: &[f64]) -> f64 {
        let tab = PhaseTable::new(theta, self.dim, (self.grid / 2) as i64);
        self.sparse()
            .iter()
            .zip(&self.exponents)
            .map(|(s, e)| {
                let mono = action.first().copied().unwrap_or(0.0).powi(e[0] as i32) * action.get(1).copied().unwrap_or(0.0).powi(e[1] as i32);
                s.eval(&tab) * mono
            })
            .sum()
    }
}

struct PhaseTable {
    kmax: i64,
    rows: [Vec<Complex64>; 2],
}

impl PhaseTable {
    fn new(theta: &[f64], dim: usize, kmax: i64) -> Self {
        let row = |t: f64| (-kmax..=kmax).map(|k| Complex64::cis(k as f64 * t)).collect::<Vec<_>>();
        let second = if dim == 2 { row(theta[1]) } else { row(0.0) };
        Self { kmax, rows: [row(theta[0]), second] }
    }

    fn phase(&self, k: [i64; 2]) -> Complex64 {
        self.rows[0][(k[0] + self.kmax) as usize] * self.rows[1][(k[1] + self.kmax) as usize]
    }
}

#[derive(Debug, Clone)]
struct Sparse {
    modes: Vec<([i64; 2], Complex64)>,
}

impl Sparse {
    fn new(f: &FourierTaylor, coeffs: &[Complex64]) -> Self {
        let peak = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        Self::with_floor(f, coeffs, 1e-17 * peak)
    }

    fn with_floor(f: &FourierTaylor, coeffs: &[Complex64], floor: f64) -> Self {
        let modes = coeffs.iter().enumerate().filter(|(_, c)| c.norm() > floor).map(|(p, c)| (f.wavevector(p), *c)).collect();
        Self { modes }
    }

    fn eval(&self, tab: &PhaseTable) -> f64 {
        self.modes.iter().map(|(k, c)| (c * tab.phase(*k)).re).sum()
    }

    /// Value and θ-gradient.
    fn eval_grad(&self, tab: &PhaseTable) -> (f64, [f64; 2]) {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (k, c) in &self.modes {
            let e = c * tab.phase(*k);
            v += e.re;
            g[0] -= k[0] as f64 * e.im;
            g[1] -= k[1] as f64 * e.im;
        }
        (v, g)
    }
}

// ---------------------------------------------------------------------------
// KAM step

/// H(θ, I) = e + ⟨ω, I⟩ + P(θ, I).
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTaylorHamiltonian {
    pub omega: Vec<f64>,
    pub energy: f64,
    pub perturbation: FourierTaylor,
    /// Fourier truncation order K for the next step.
    pub truncation: usize,
    /// Strip width and action radius of the norm proxy.
    pub s: f64,
    pub r: f64,
}

impl FourierTaylorHamiltonian {
    pub fn new(omega: Vec<f64>, perturbation: FourierTaylor, truncation: usize, s: f64, r: f64) -> Result<Self, KamError> {
        if omega.len() != perturbation.dim {
            return Err(KamError::InvalidInput(format!("ω has {} components for a {}-torus", omega.len(), perturbation.dim)));
        }
        if !(s > 0.0 && r > 0.0) {
            return Err(KamError::ParameterOutOfRange(format!("need s, r > 0, got {s}, {r}")));
        }
        Ok(Self { omega, energy: 0.0, perturbation, truncation, s, r })
    }
}

/// Norm proxy of the perturbation on the domain (s, r).
pub fn strip_norm_proxy(h: &FourierTaylorHamiltonian, s: f64, r: f64) -> f64 {
    h.perturbation.proxy(s, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KamStepParams {
    pub sigma: f64,
    pub eta: f64,
    /// Fourier truncation K; overrides the Hamiltonian's when nonzero.
    pub truncation: usize,
    pub h: f64,
    pub kappa: f64,
    pub tau: f64,
    pub c0: f64,
    /// Return SmallnessViolation instead of reporting failed conditions.
    pub enforce_smallness: bool,
    pub quadrature_nodes: usize,
    pub flow_tolerance: f64,
}

impl Default for KamStepParams {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            eta: 0.12,
            truncation: 0,
            h: 0.0,
            kappa: 0.1,
            tau: 1.2,
            c0: 1.0,
            enforce_smallness: false,
            quadrature_nodes: 8,
            flow_tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub min_steps: usize,
    pub max_steps: usize,
    pub max_displacement: f64,
    /// max |A − Id| of the affine action map V = A I + b.
    pub max_linear_defect: f64,
    pub max_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KamStepResult {
    /// Truncation R: affine in I, Fourier order ≤ K.
    pub truncation: FourierTaylor,
    pub energy_shift: f64,
    pub frequency_shift: Vec<f64>,
    pub generator: FourierTaylor,
    /// Largest |θ-mean| over the coefficients of F.
    pub generator_mean: f64,
    /// max over |k| ≤ K of |{N, F} + R − N̂|.
    pub homological_residual: f64,
    pub smallness: Vec<Condition>,
    /// min over 0 < |k| ≤ K of |⟨ω,k⟩| |k|^τ.
    pub diophantine_margin: f64,
    pub flow: FlowStats,
    /// max |DΦᵀ J DΦ − J| at sample points.
    pub symplectic_defect: f64,
    pub eps: f64,
    pub eps_next: f64,
    /// ε₊ / (ε²/(rσ^{τ+1}) + (η² + σ^{−n}e^{−Kσ})ε).
    pub bound_constant: f64,
    pub params: KamStepParams,
    pub k_used: usize,
    pub next: FourierTaylorHamiltonian,
}

#[derive(Clone, Copy, Default)]
struct FlowState {
    theta: [f64; 2],
    a: [[f64; 2]; 2],
    b: [f64; 2],
}

impl FlowState {
    fn start(theta: [f64; 2]) -> Self {
        Self { theta, a: [[1.0, 0.0], [0.0, 1.0]], b: [0.0; 2] }
    }

    fn axpy(&self, h: f64, d: &FlowState) -> FlowState {
        let mut o = *self;
        for i in 0..2 {
            o.theta[i] += h * d.theta[i];
            o.b[i] += h * d.b[i];
            for j in 0..2 {
                o.a[i][j] += h * d.a[i][j];
            }
        }
        o
    }

    fn distance(&self, other: &FlowState) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            d = d.max((self.theta[i] - other.theta[i]).abs()).max((self.b[i] - other.b[i]).abs());
            for j in 0..2 {
                d = d.max((self.a[i][j] - other.a[i][j]).abs());
            }
        }
        d
    }

    /// V = A I + b.
    fn action(&self, i: &[f64; 2]) -> [f64; 2] {
        [self.a[0][0] * i[0] + self.a[0][1] * i[1] + self.b[0], self.a[1][0] * i[0] + self.a[1][1] * i[1] + self.b[1]]
    }
}

/// Hamiltonian vector field of F = F₀(θ) + ⟨F₁(θ), I⟩.
struct Generator {
    dim: usize,
    kmax: i64,
    base: Sparse,
    linear: Vec<Sparse>,
}

impl Generator {
    fn new(f: &FourierTaylor, coeffs: &[Vec<Complex64>], k: usize) -> Self {
        let base = Sparse::new(f, &coeffs[exponent_index(&f.exponents, [0, 0]).unwrap()]);
        let linear = (0..f.dim)
            .map(|i| {
                let mut e = [0, 0];
                e[i] = 1;
                Sparse::new(f, &coeffs[exponent_index(&f.exponents, e).unwrap()])
            })
            .collect();
        Self { dim: f.dim, kmax: k as i64, base, linear }
    }

    /// θ' = F₁(θ), A' = −M A, b' = −∇F₀ − M b with M_ij = ∂_i F₁_j.
    fn rhs(&self, s: &FlowState) -> FlowState {
        let tab = PhaseTable::new(&s.theta, self.dim, self.kmax);
        let (_, g0) = self.base.eval_grad(&tab);
        let mut f1 = [0.0; 2];
        let mut m = [[0.0; 2]; 2];
        for (j, lin) in self.linear.iter().enumerate() {
            let (v, g) = lin.eval_grad(&tab);
            f1[j] = v;
            for i in 0..2 {
                m[i][j] = g[i];
            }
        }
        let mut d = FlowState { theta: f1, ..Default::default() };
        for i in 0..2 {
            d.b[i] = -g0[i] - (m[i][0] * s.b[0] + m[i][1] * s.b[1]);
            for j in 0..2 {
                d.a[i][j] = -(m[i][0] * s.a[0][j] + m[i][1] * s.a[1][j]);
            }
        }
        d
    }

    fn rk4(&self, s: &FlowState, h: f64) -> FlowState {
        let k1 = self.rhs(s);
        let k2 = self.rhs(&s.axpy(h / 2.0, &k1));
        let k3 = self.rhs(&s.axpy(h / 2.0, &k2));
        let k4 = self.rhs(&s.axpy(h, &k3));
        let mut o = s.axpy(h / 6.0, &k1);
        o = o.axpy(h / 3.0, &k2);
        o = o.axpy(h / 3.0, &k3);
        o.axpy(h / 6.0, &k4)
    }

    fn fixed(&self, s: &FlowState, len: f64, n: usize) -> FlowState {
        let mut x = *s;
        for _ in 0..n {
            x = self.rk4(&x, len / n as f64);
        }
        x
    }

    /// Integrate over `len` with step doubling until successive results agree.
    fn segment(&self, s: &FlowState, len: f64, tol: f64) -> Result<(FlowState, usize), KamError> {
        if len == 0.0 {
            return Ok((*s, 0));
        }
        let mut n = 2;
        let mut coarse = self.fixed(s, len, n);
        loop {
            let fine = self.fixed(s, len, 2 * n);
            let d = fine.distance(&coarse);
            if d <= tol {
                return Ok((fine, 2 * n));
            }
            n *= 2;
            if n > 1 << 14 {
                return Err(KamError::FlowStepFailure { steps: n, defect: d });
            }
            coarse = fine;
        }
    }

    /// States at the sorted times `xs` ⊂ [0, 1], plus steps used.
    fn trajectory(&self, theta: [f64; 2], xs: &[f64], tol: f64) -> Result<(Vec<FlowState>, usize), KamError> {
        let mut s = FlowState::start(theta);
        let mut t = 0.0;
        let mut steps = 0;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let (next, n) = self.segment(&s, x - t, tol)?;
            steps += n;
            s = next;
            t = x;
            out.push(s);
        }
        Ok((out, steps))
    }
}

/// Σ_β g_β · (A I + b)^β for the polynomial with coefficients `g` (indexed by
/// `exps`), returned on the same exponents.
fn compose_affine(g: &[f64], exps: &[[usize; 2]], dim: usize, s: &FlowState) -> Vec<f64> {
    let deg = exps.last().map(|e| e[0] + e[1]).unwrap_or(0);
    let lin: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let mut v = vec![0.0; exps.len()];
            v[0] = s.b[i];
            for j in 0..dim {
                let mut e = [0, 0];
                e[j] = 1;
                if let Some(t) = exponent_index(exps, e) {
                    v[t] = s.a[i][j];
                }
            }
            v
        })
        .collect();
    let one = {
        let mut v = vec![0.0; exps.len()];
        v[0] = 1.0;
        v
    };
    // powers[i][p] = (A I + b)_i^p
    let powers: Vec<Vec<Vec<f64>>> = lin
        .iter()
        .map(|l| {
            let mut ps = vec![one.clone()];
            for p in 1..=deg {
                let next = poly_mul(&ps[p - 1], l, exps);
                ps.push(next);
            }
            ps
        })
        .collect();
    let mut out = vec![0.0; exps.len()];
    for (b, e) in exps.iter().enumerate() {
        if g[b] == 0.0 {
            continue;
        }
        let term = if dim == 1 { powers[0][e[0]].clone() } else { poly_mul(&powers[0][e[0]], &powers[1][e[1]], exps) };
        for (o, t) in out.iter_mut().zip(term) {
            *o += g[b] * t;
        }
    }
    out
}

fn smallness_conditions(eps: f64, r: f64, p: &KamStepParams, k: usize) -> Vec<Condition> {
    vec![
        Condition::le("error_vs_domain", eps, p.c0 * p.eta * r * p.sigma.powf(p.tau + 1.0)),
        Condition::le("error_vs_frequency_width", eps, p.c0 * p.h * r),
        Condition::le("width_vs_truncation", p.h, 0.5 / (k as f64).powf(p.tau + 1.0) * (1.0 + 1e-12)),
    ]
}

/// One KAM step at fixed real ω: truncate, solve the homological equation,
/// integrate the Lie flow of the generator and assemble the new perturbation
/// ∫₀¹ {(1−x)N̂ + xR, F}∘φ_x dx + (P − R)∘Φ on the grid.
pub fn kam_step(h: &FourierTaylorHamiltonian, params: &KamStepParams) -> Result<KamStepResult, KamError> {
    let p = &h.perturbation;
    let dim = p.dim;
    let k = if params.truncation > 0 { params.truncation } else { h.truncation };
    if k == 0 {
        return Err(KamError::ParameterOutOfRange("truncation order must be positive".into()));
    }
    if p.grid < 4 * k + 2 {
        return Err(KamError::InvalidInput(format!("grid {} too coarse for truncation {k}; need ≥ {}", p.grid, 4 * k + 2)));
    }
    if !(params.sigma > 0.0 && 5.0 * params.sigma < h.s && params.eta > 0.0 && params.eta < 1.0) {
        return Err(KamError::ParameterOutOfRange(format!(
            "need 0 < 5σ < s and 0 < η < 1, got σ = {}, s = {}, η = {}",
            params.sigma, h.s, params.eta
        )));
    }
    let eps = p.proxy(h.s, h.r);
    let width = if params.h > 0.0 { params.h } else { 0.5 / (k as f64).powf(params.tau + 1.0) };
    let used = KamStepParams { h: width, truncation: k, ..*params };
    let smallness = smallness_conditions(eps, h.r, &used, k);
    if params.enforce_smallness && smallness.iter().any(|c| !c.holds) {
        return Err(KamError::SmallnessViolation(smallness));
    }

    // Diophantine margin of the flow divisors ⟨ω,k⟩ up to K.
    let kk = k as i64;
    let mut margin = f64::INFINITY;
    for k1 in -kk..=kk {
        for k0 in -kk..=kk {
            let kv = [k0, k1];
            if (dim == 1 && k1 != 0) || (k0 == 0 && k1 == 0) || k0.abs() + k1.abs() > kk {
                continue;
            }
            margin = margin.min(dot(&h.omega, &kv[..dim]).abs() * l1(&kv).powf(params.tau));
        }
    }
    if margin < params.kappa {
        return Err(KamError::ParameterOutOfRange(format!(
            "ω fails |⟨ω,k⟩| ≥ κ|k|^(−τ) below K = {k}: margin {margin:e} < κ = {}",
            params.kappa
        )));
    }

    // Truncation and normal-form part.
    let r_trunc = p.truncated(k, 1);
    let energy_shift = r_trunc.mean([0, 0]);
    let frequency_shift: Vec<f64> = (0..dim)
        .map(|i| {
            let mut e = [0, 0];
            e[i] = 1;
            r_trunc.mean(e)
        })
        .collect();
    let mut nhat = FourierTaylor::zero(dim, p.grid, 1)?;
    nhat.samples[0].iter_mut().for_each(|v| *v = energy_shift);
    for (i, w) in frequency_shift.iter().enumerate() {
        let mut e = [0, 0];
        e[i] = 1;
        let t = exponent_index(&nhat.exponents, e).unwrap();
        nhat.samples[t].iter_mut().for_each(|v| *v = *w);
    }

    // Homological equation: F_k = R_k / (i⟨ω,k⟩), F₀ = 0.
    let r_coeffs = r_trunc.coefficients();
    let mut f_coeffs = r_coeffs.clone();
    let mut residual: f64 = 0.0;
    for (b, c) in f_coeffs.iter_mut().enumerate() {
        let mean_b = if b == 0 { energy_shift } else { frequency_shift.get(b - 1).copied().unwrap_or(0.0) };
        for (slot, v) in c.iter_mut().enumerate() {
            let kv = r_trunc.wavevector(slot);
            let inside = (kv[0].abs() + kv[1].abs()) as usize <= k && !r_trunc.is_nyquist(kv);
            if kv == [0, 0] {
                *v = Complex64::new(0.0, 0.0);
                residual = residual.max((r_coeffs[b][slot] - mean_b).norm());
            } else if inside {
                let div = Complex64::new(0.0, dot(&h.omega, &kv[..dim]));
                *v = r_coeffs[b][slot] / div;
                // {N, F} = −⟨ω, ∂_θ F⟩
                residual = residual.max((-div * *v + r_coeffs[b][slot]).norm());
            } else {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
    let generator = r_trunc.with_coefficients(f_coeffs.clone());
    let generator_mean = generator.exponents.iter().map(|e| generator.mean(*e).abs()).fold(0.0, f64::max);
    let field = Generator::new(&generator, &f_coeffs, p.grid / 2);

    // Brackets entering the integral term: G_x = G_N + x (G_R − G_N).
    let g_n = nhat.poisson(&generator);
    let g_r = r_trunc.poisson(&generator);
    let out_degree = p.degree().max(1);
    let exps = taylor_exponents(dim, out_degree);
    let g_n = g_n.with_degree(out_degree);
    let g_diff = g_r.with_degree(out_degree).sub(&g_n);
    // P − R in coefficient space, so retained modes cancel exactly.
    let full = p.with_degree(out_degree);
    let mut rest_coeffs = full.coefficients();
    for (c, e) in rest_coeffs.iter_mut().zip(&full.exponents) {
        if e[0] + e[1] > 1 {
            continue;
        }
        for (slot, v) in c.iter_mut().enumerate() {
            let kv = full.wavevector(slot);
            if (kv[0].abs() + kv[1].abs()) as usize <= k && !full.is_nyquist(kv) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
    // Transform roundoff of P itself is not carried into P₊.
    let p_peak = full.coefficients().iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
    let sp_rest: Vec<Sparse> = rest_coeffs.iter().map(|c| Sparse::with_floor(&full, c, 1e-15 * p_peak)).collect();
    let (sp_n, sp_diff) = (g_n.sparse_band(2 * k), g_diff.sparse_band(2 * k));

    let gl = GaussLegendre::new(params.quadrature_nodes.max(2));
    let (xs, ws) = gl.mapped(0.0, 1.0);
    let mut times = xs.clone();
    times.push(1.0);
    let kmax_tab = (p.grid / 2) as i64;

    let per_point: Vec<Result<(Vec<f64>, usize, FlowState), KamError>> = (0..p.points())
        .into_par_iter()
        .map(|pt| {
            let th = p.theta(pt);
            let (states, steps) = field.trajectory(th, &times, params.flow_tolerance)?;
            let mut acc = vec![0.0; exps.len()];
            for (m, x) in xs.iter().enumerate() {
                let st = &states[m];
                let tab = PhaseTable::new(&st.theta, dim, kmax_tab);
                let g: Vec<f64> = sp_n.iter().zip(&sp_diff).map(|(a, d)| a.eval(&tab) + x * d.eval(&tab)).collect();
                for (o, v) in acc.iter_mut().zip(compose_affine(&g, &exps, dim, st)) {
                    *o += ws[m] * v;
                }
            }
            let last = states[xs.len()];
            let tab = PhaseTable::new(&last.theta, dim, kmax_tab);
            let g: Vec<f64> = sp_rest.iter().map(|a| a.eval(&tab)).collect();
            for (o, v) in acc.iter_mut().zip(compose_affine(&g, &exps, dim, &last)) {
                *o += v;
            }
            Ok((acc, steps, last))
        })
        .collect();

    let mut next_p = FourierTaylor::zero(dim, p.grid, out_degree)?;
    let mut flow = FlowStats { min_steps: usize::MAX, max_steps: 0, max_displacement: 0.0, max_linear_defect: 0.0, max_shift: 0.0 };
    for (pt, res) in per_point.into_iter().enumerate() {
        let (acc, steps, last) = res?;
        for (b, v) in acc.into_iter().enumerate() {
            next_p.samples[b][pt] = v;
        }
        let th = p.theta(pt);
        flow.min_steps = flow.min_steps.min(steps);
        flow.max_steps = flow.max_steps.max(steps);
        for i in 0..dim {
            flow.max_displacement = flow.max_displacement.max((last.theta[i] - th[i]).abs());
            flow.max_shift = flow.max_shift.max(last.b[i].abs());
            for j in 0..dim {
                let id = if i == j { 1.0 } else { 0.0 };
                flow.max_linear_defect = flow.max_linear_defect.max((last.a[i][j] - id).abs());
            }
        }
    }

    // Two-thirds rule against aliasing of the composed data.
    let cut = (p.grid / 3) as i64;
    let mut c_next = next_p.coefficients();
    for c in &mut c_next {
        for (slot, v) in c.iter_mut().enumerate() {
            let kv = next_p.wavevector(slot);
            if kv[0].abs() > cut || kv[1].abs() > cut {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
    let next_p = next_p.with_coefficients(c_next);

    let symplectic_defect = symplectic_check(&field, dim, h.r, params.flow_tolerance)?;

    let s_next = h.s - 5.0 * params.sigma;
    let r_next = params.eta * h.r;
    let eps_next = next_p.proxy(s_next, r_next);
    let n = dim as f64;
    let model = eps * eps / (h.r * params.sigma.powf(params.tau + 1.0))
        + (params.eta.powi(2) + params.sigma.powf(-n) * (-(k as f64) * params.sigma).exp()) * eps;
    let bound_constant = if model > 0.0 { eps_next / model } else { 0.0 };

    let mut omega_next = h.omega.clone();
    for (w, d) in omega_next.iter_mut().zip(&frequency_shift) {
        *w += d;
    }
    let next = FourierTaylorHamiltonian {
        omega: omega_next,
        energy: h.energy + energy_shift,
        perturbation: next_p,
        truncation: h.truncation,
        s: s_next,
        r: r_next,
    };
    Ok(KamStepResult {
        truncation: r_trunc,
        energy_shift,
        frequency_shift,
        generator,
        generator_mean,
        homological_residual: residual,
        smallness,
        diophantine_margin: margin,
        flow,
        symplectic_defect,
        eps,
        eps_next,
        bound_constant,
        params: used,
        k_used: k,
        next,
    })
}

/// Finite-difference Jacobian of Φ(θ, I) = (U(θ), A(θ)I + b(θ)) at a few
/// sample points, tested against J = [[0, Id], [−Id, 0]].
fn symplectic_check(field: &Generator, dim: usize, r: f64, tol: f64) -> Result<f64, KamError> {
    let map = |th: [f64; 2], i: [f64; 2]| -> Result<[f64; 4], KamError> {
        let (st, _) = field.trajectory(th, &[1.0], tol)?;
        let v = st[0].action(&i);
        Ok([st[0].theta[0], st[0].theta[1], v[0], v[1]])
    };
    let hstep = 1e-5;
    let m = 2 * dim;
    let mut worst: f64 = 0.0;
    for sample in 0..6 {
        let th = [0.37 + 1.01 * sample as f64, 1.3 + 0.71 * sample as f64];
        let i0 = [0.5 * r * (sample % 2) as f64, 0.25 * r];
        let mut jac = vec![vec![0.0; m]; m];
        for c in 0..m {
            let (mut tp, mut tm, mut ip, mut im) = (th, th, i0, i0);
            if c < dim {
                tp[c] += hstep;
                tm[c] -= hstep;
            } else {
                ip[c - dim] += hstep;
                im[c - dim] -= hstep;
            }
            let (fp, fm) = (map(tp, ip)?, map(tm, im)?);
            for row in 0..m {
                let idx = if row < dim { row } else { 2 + row - dim };
                jac[row][c] = (fp[idx] - fm[idx]) / (2.0 * hstep);
            }
        }
        // (DΦᵀ J DΦ)_{ab} = Σ_i DΦ_{i,a} DΦ_{i+n,b} − DΦ_{i+n,a} DΦ_{i,b}
        for a in 0..m {
            for b in 0..m {
                let mut v = 0.0;
                for i in 0..dim {
                    v += jac[i][a] * jac[i + dim][b] - jac[i + dim][a] * jac[i][b];
                }
                let target = if b == a + dim {
                    1.0
                } else if a == b + dim {
                    -1.0
                } else {
                    0.0
                };
                worst = worst.max((v - target).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub j: usize,
    pub eps: f64,
    pub eps_next: f64,
    pub s: f64,
    pub r: f64,
    pub homological_residual: f64,
    pub symplectic_defect: f64,
    pub frequency_drift: Vec<f64>,
    pub conditions_hold: bool,
}

/// Chain `steps` KAM steps; `params(j, h)` supplies the parameters of step j.
pub fn iterate<F>(h0: &FourierTaylorHamiltonian, steps: usize, params: F) -> Result<(Vec<ConvergenceRow>, FourierTaylorHamiltonian), KamError>
where
    F: Fn(usize, &FourierTaylorHamiltonian) -> KamStepParams,
{
    let mut h = h0.clone();
    let mut rows = Vec::with_capacity(steps);
    for j in 0..steps {
        let res = kam_step(&h, &params(j, &h))?;
        rows.push(ConvergenceRow {
            j,
            eps: res.eps,
            eps_next: res.eps_next,
            s: h.s,
            r: h.r,
            homological_residual: res.homological_residual,
            symplectic_defect: res.symplectic_defect,
            frequency_drift: res.frequency_shift.clone(),
            conditions_hold: res.smallness.iter().all(|c| c.holds),
        });
        h = res.next;
    }
    Ok((rows, h))
}

/// Least-squares slope of ln ε_{j+1} against ln ε_j over rows with ε > 0.
pub fn convergence_order(rows: &[ConvergenceRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.eps > 0.0 && r.eps_next > 0.0).map(|r| (r.eps.ln(), r.eps_next.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(crate::numerics::linear_slope(&xs, &ys).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCorrection {
    /// Parameter ω whose drifted frequency ω + ∇_I R₀(0) hits the target.
    pub omega: Vec<f64>,
    pub drift: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Newton solve of ω + ∇_I R₀(0; ω) = target for an ω-parameterized family.
pub fn correct_frequency<F>(target: &[f64], family: F, truncation: usize, tol: f64) -> Result<FrequencyCorrection, KamError>
where
    F: Fn(&[f64]) -> FourierTaylorHamiltonian,
{
    let n = target.len();
    let drift = |w: &[f64]| -> Vec<f64> {
        let h = family(w);
        let r = h.perturbation.truncated(truncation, 1);
        (0..n)
            .map(|i| {
                let mut e = [0, 0];
                e[i] = 1;
                r.mean(e)
            })
            .collect()
    };
    let mut w = target.to_vec();
    for it in 0..50 {
        let d = drift(&w);
        let g: Vec<f64> = (0..n).map(|i| w[i] + d[i] - target[i]).collect();
        let res = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if res <= tol {
            return Ok(FrequencyCorrection { omega: w, drift: d, residual: res, iterations: it });
        }
        let step = 1e-7;
        let mut jac = nalgebra::DMatrix::<f64>::identity(n, n);
        for j in 0..n {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += step;
            wm[j] -= step;
            let (dp, dm) = (drift(&wp), drift(&wm));
            for i in 0..n {
                jac[(i, j)] += (dp[i] - dm[i]) / (2.0 * step);
            }
        }
        let delta = jac
            .lu()
            .solve(&nalgebra::DVector::from_vec(g))
            .ok_or_else(|| KamError::InvalidInput("singular frequency Jacobian".into()))?;
        for i in 0..n {
            w[i] -= delta[i];
        }
    }
    Err(KamError::InvalidInput("frequency correction did not converge".into()))
}

/// Chained steps on P = a·cos θ·(1 + c·I) with the Fourier truncation doubled
/// at each step (K_j = K₀·2^j).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineChain {
    pub amplitude: f64,
    /// Coefficient c of the action coupling; 0 gives an I-independent P.
    pub coupling: f64,
    pub omega: f64,
    pub grid: usize,
    pub k0: usize,
    pub sigma: f64,
    pub eta: f64,
    pub s0: f64,
    pub r0: f64,
}

impl Default for CosineChain {
    fn default() -> Self {
        Self {
            amplitude: 1e-3,
            coupling: 1.0,
            omega: PI * (5f64.sqrt() - 1.0),
            grid: 256,
            k0: 8,
            sigma: 0.04,
            eta: 0.12,
            s0: 0.9,
            r0: 0.5,
        }
    }
}

impl CosineChain {
    pub fn hamiltonian(&self) -> Result<FourierTaylorHamiltonian, KamError> {
        let (a, c) = (self.amplitude, self.coupling);
        let p = FourierTaylor::from_taylor(1, self.grid, 1, |t| vec![a * t[0].cos(), a * c * t[0].cos()])?;
        FourierTaylorHamiltonian::new(vec![self.omega], p, self.k0, self.s0, self.r0)
    }

    pub fn run(&self, steps: usize) -> Result<Vec<ConvergenceRow>, KamError> {
        let h0 = self.hamiltonian()?;
        let base = KamStepParams { sigma: self.sigma, eta: self.eta, ..Default::default() };
        let k0 = self.k0;
        iterate(&h0, steps, |j, _| KamStepParams { truncation: k0 << j, ..base }).map(|(rows, _)| rows)
    }
}

// ---------------------------------------------------------------------------
// Iteration schedule

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ell0Convention {
    /// ℓ₀ = 2τ + 2 + 2ϑ₀.
    DoubleTheta0,
    /// ℓ₀ = 2τ + 2 + ϑ₀.
    SingleTheta0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n: usize,
    pub tau: f64,
    pub theta: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub sigma0: f64,
    pub e0: f64,
    /// Step constant C₀ ≥ 1 entering δ = (6C₀)^{−1/ϑ}.
    pub big_c0: f64,
    /// Smallness constant c₀.
    pub small_c0: f64,
    /// Prefactor ε̂ in ε_j = ε̂ r_j σ_j^{τ+1} E_j.
    pub eps_hat: f64,
    pub m: usize,
    /// J(m); defaults to ⌈m(τ+1)/ϑ⌉ (0 when m = 0).
    pub j_of_m: Option<usize>,
    pub jmax: usize,
    pub ell0: Ell0Convention,
    /// Reject E₀ ≥ η₀² up front instead of reporting it as a failed flag.
    pub strict: bool,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            n: 1,
            tau: 1.2,
            theta: 0.25,
            theta0: 1.5,
            theta1: 1.0,
            sigma0: 1.0 / 40.0,
            e0: 1e-4,
            big_c0: 2.0,
            small_c0: 1.0,
            eps_hat: 1.0,
            m: 0,
            j_of_m: None,
            jmax: 50,
            ell0: Ell0Convention::DoubleTheta0,
            strict: false,
        }
    }
}

/// Quantities at step j. Fields prefixed `ln_` are natural logarithms, kept
/// because the plain values underflow within a few dozen steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub j: usize,
    pub s: f64,
    pub sigma: f64,
    pub ln_s: f64,
    pub ln_sigma: f64,
    pub nu: f64,
    pub ln_eta: f64,
    pub ln_r: f64,
    pub ln_e: f64,
    pub ln_eps: f64,
    /// ln ε_j from the closed form ε̂ r₀ σ₀^{τ+1} E₀ δ^{q_j}.
    pub ln_eps_closed: f64,
    pub p: f64,
    pub q: f64,
    pub ln_k: f64,
    pub ln_h: f64,
    pub u: f64,
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KamSchedule {
    pub params: ScheduleParams,
    pub delta: f64,
    pub s0: f64,
    pub j_of_m: usize,
    pub ell0: f64,
    pub ell_m: f64,
    pub rows: Vec<ScheduleRow>,
    pub all_hold: bool,
    /// First j with a failing condition and the names failing there.
    pub first_failure: Option<(usize, Vec<String>)>,
    /// Largest |q_j(first form) − q_j(second form)|.
    pub q_mismatch: f64,
}

pub fn build_schedule(p: &ScheduleParams) -> Result<KamSchedule, KamError> {
    let bad = |m: String| Err(KamError::ParameterOutOfRange(m));
    if p.n == 0 || p.jmax == 0 {
        return bad("need n ≥ 1 and jmax ≥ 1".into());
    }
    if !(p.tau > 0.0) {
        return bad(format!("τ = {} must be positive", p.tau));
    }
    if !(p.theta0 > 1.0) {
        return bad(format!("ϑ₀ = {} must exceed 1", p.theta0));
    }
    if !(p.theta > 0.0 && p.theta < (p.theta0 / 4.0).min(1.0)) {
        return bad(format!("need 0 < ϑ < min(ϑ₀/4, 1), got ϑ = {}", p.theta));
    }
    if !(1.0 <= p.theta1 && p.theta1 < p.theta0 && p.theta0 < p.tau + 1.0) {
        return bad(format!("need 1 ≤ ϑ₁ < ϑ₀ < τ + 1, got ϑ₁ = {}, ϑ₀ = {}, τ = {}", p.theta1, p.theta0, p.tau));
    }
    if !(p.big_c0 >= 1.0 && p.small_c0 > 0.0 && p.eps_hat > 0.0 && p.e0 > 0.0) {
        return bad("need C₀ ≥ 1 and c₀, ε̂, E₀ > 0".into());
    }
    let delta = (6.0 * p.big_c0).powf(-1.0 / p.theta);
    if !(p.sigma0 > 0.0 && p.sigma0 < (1.0 - delta) / 5.0) {
        return bad(format!("need 0 < σ₀ < (1 − δ)/5 = {}, got {}", (1.0 - delta) / 5.0, p.sigma0));
    }
    let tp1 = p.tau + 1.0;
    let required = p.m as f64 * tp1 / p.theta;
    let j_of_m = match (p.m, p.j_of_m) {
        (0, _) => 0,
        (_, Some(j)) if (j as f64) < required => return bad(format!("J(m) = {j} below m(τ+1)/ϑ = {required}")),
        (_, Some(j)) => j,
        (_, None) => required.ceil() as usize,
    };
    let ln_delta = delta.ln();
    let nu = |j: usize| if j < j_of_m { p.theta0 - p.theta } else { p.m as f64 * tp1 + p.theta0 - p.theta };
    let ln_eta0 = (tp1 + p.theta0) * ln_delta;
    if p.strict && p.e0.ln() >= 2.0 * ln_eta0 {
        return bad(format!("E₀ = {} not below η₀² = {:e}", p.e0, (2.0 * ln_eta0).exp()));
    }
    let s0 = 5.0 * p.sigma0 / (1.0 - delta);
    let ell0 = match p.ell0 {
        Ell0Convention::DoubleTheta0 => 2.0 * tp1 + 2.0 * p.theta0,
        Ell0Convention::SingleTheta0 => 2.0 * tp1 + p.theta0,
    };
    let ell_m = 2.0 * p.m as f64 * tp1 + ell0;
    let ln_c0 = p.small_c0.ln();
    let n = p.n as f64;

    let mut rows: Vec<ScheduleRow> = Vec::with_capacity(p.jmax + 1);
    let mut q_mismatch: f64 = 0.0;
    let (mut ln_r, mut ln_e, mut nu_sum) = (s0.ln(), p.e0.ln(), 0.0);
    let mut ln_eta = ln_eta0;
    for j in 0..=p.jmax {
        if j > 0 {
            let prev = &rows[j - 1];
            ln_r = prev.ln_r + prev.ln_eta;
            ln_e = prev.ln_e + nu(j - 1) * ln_delta;
            nu_sum += nu(j - 1);
            ln_eta = (nu(j) + tp1 + p.theta) * ln_delta;
        }
        let ln_sigma = p.sigma0.ln() + j as f64 * ln_delta;
        let ln_s = s0.ln() + j as f64 * ln_delta;
        let (s, sigma) = (s0 * delta.powi(j as i32), p.sigma0 * delta.powi(j as i32));
        let jf = j as f64;
        let pj = jf * (tp1 + p.theta) + nu_sum;
        let q_first = pj + jf * tp1 + nu_sum;
        let q_second = jf * (2.0 * tp1 + p.theta) + 2.0 * nu_sum;
        q_mismatch = q_mismatch.max((q_first - q_second).abs());
        debug_assert!((q_first - q_second).abs() <= 1e-9 * q_first.abs().max(1.0));
        let ln_eps = p.eps_hat.ln() + ln_r + tp1 * ln_sigma + ln_e;
        let ln_eps_closed = p.eps_hat.ln() + s0.ln() + tp1 * p.sigma0.ln() + p.e0.ln() + q_second * ln_delta;
        let lsq = ln_sigma * ln_sigma;
        let ln_k = -ln_sigma + lsq.ln();
        let ln_h = -tp1 * ln_k - 2f64.ln();

        let mut c = vec![
            Condition::log_lt("s_below_one", ln_s, 0.0),
            Condition::log_lt("r_below_one", ln_r, 0.0),
            Condition::log_lt("eta_below_eighth", ln_eta, (0.125f64).ln()),
            Condition::log_lt("five_sigma_below_s", 5f64.ln() + ln_sigma, ln_s),
            Condition::log_le("k_at_least_one", 0.0, ln_k),
            Condition::log_le("error_vs_domain", ln_eps, ln_c0 + ln_eta + ln_r + tp1 * ln_sigma),
            Condition::log_le("error_vs_frequency_width", ln_eps, ln_c0 + ln_h + ln_r),
            Condition::log_le("width_vs_truncation", ln_h, -(2f64.ln()) - tp1 * ln_k),
            Condition::log_le("width_vs_sigma", 2f64.ln() + ln_h, tp1 * ln_sigma),
            Condition::log_le("log_energy", 2f64.ln() + (2.0 * tp1) * ln_sigma.abs().ln() + ln_e, ln_c0),
            Condition::log_le("truncation_tail", -n * ln_sigma - lsq, 2.0 * ln_eta),
            Condition::log_lt("energy_below_eta_squared", ln_e, 2.0 * ln_eta),
            Condition::log_lt("eta_squared_below_sixty_fourth", 2.0 * ln_eta, -(64f64.ln())),
        ];
        if j > 0 {
            let prev = &rows[j - 1];
            c.push(Condition::le("nu_growth", 2.0 * nu(j) - 2.0 * nu(0), nu_sum));
            c.push(Condition::log_lt("width_ratio", ln_h - prev.ln_h, tp1 * ln_delta));
            c.push(Condition::log_lt("s_decreasing", ln_s, prev.ln_s));
            c.push(Condition::log_lt("r_decreasing", ln_r, prev.ln_r));
            c.push(Condition::log_lt("eps_decreasing", ln_eps, prev.ln_eps));
        }
        rows.push(ScheduleRow {
            j,
            s,
            sigma,
            ln_s,
            ln_sigma,
            nu: nu(j),
            ln_eta,
            ln_r,
            ln_e,
            ln_eps,
            ln_eps_closed,
            p: pj,
            q: q_second,
            ln_k,
            ln_h,
            u: 6.0 * s0 * delta.powi(j as i32),
            conditions: c,
        });
    }
    let first_failure = rows.iter().find_map(|r| {
        let failed: Vec<String> = r.conditions.iter().filter(|c| !c.holds).map(|c| c.name.clone()).collect();
        (!failed.is_empty()).then_some((r.j, failed))
    });
    Ok(KamSchedule {
        params: *p,
        delta,
        s0,
        j_of_m,
        ell0,
        ell_m,
        all_hold: first_failure.is_none(),
        first_failure,
        rows,
        q_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> f64 {
        PI * (5f64.sqrt() - 1.0)
    }

    #[test]
    fn divisor_branches() {
        let w = [golden()];
        let z = modified_divisor(&w, &[1], 0.1, 1.2, &standard_cutoff);
        assert_eq!(z, Complex64::new(1.0, 0.0) - Complex64::cis(w[0]));
        let z = modified_divisor(&[2.0 * PI / 3.0], &[3], 0.1, 1.2, &standard_cutoff);
        let reg = 0.1 / 3.0 * 4f64.powf(-1.2);
        assert!((z - Complex64::new(reg, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(standard_cutoff(0.0), 1.0);
        assert_eq!(standard_cutoff(PI / 5.0), 1.0);
        assert_eq!(standard_cutoff(-PI / 4.0), 0.0);
        let mid = standard_cutoff(0.7);
        assert!(mid > 0.0 && mid < 1.0);
        let xs: Vec<f64> = (0..200).map(|i| PI / 5.0 + i as f64 * (PI / 20.0) / 199.0).collect();
        assert!(xs.windows(2).all(|w| standard_cutoff(w[1]) <= standard_cutoff(w[0])));
    }

    #[test]
    fn homological_cos() {
        let w = [golden()];
        let modes = vec![FourierMode { k: vec![1], value: Complex64::new(0.5, 0.0) }, FourierMode { k: vec![-1], value: Complex64::new(0.5, 0.0) }];
        let sol = solve_homological(&modes, &w, 0.1, 1.2);
        let z1 = modified_divisor(&w, &[1], 0.1, 1.2, &standard_cutoff);
        assert!((sol.f[0].value + 1.0 / (2.0 * z1)).norm() < 1e-15);
        assert!(sol.max_residual < 1e-14);
        assert!(sol.regularized.is_empty());

        let c = solve_homological(&[FourierMode { k: vec![0], value: Complex64::new(2.0, 0.0) }], &w, 0.1, 1.2);
        assert!(c.f.is_empty());
        assert_eq!(c.c, Complex64::new(-2.0, 0.0));
    }

    #[test]
    fn homological_resonant_mode_reports_regularization() {
        let w = [2.0 * PI / 3.0];
        let modes = vec![FourierMode { k: vec![3], value: Complex64::new(1.0, 0.0) }];
        let sol = solve_homological(&modes, &w, 0.1, 1.2);
        assert_eq!(sol.regularized, vec![vec![3]]);
        // f̂ (e^{ikω} − 1) − F̂ = −F̂ reg / z with z = reg here.
        assert!((sol.max_residual - 1.0).abs() < 1e-12);
        assert!(sol.max_amplification <= 3.0 / 0.1 * 4f64.powf(1.2) * (1.0 + 1e-12));
    }

    #[test]
    fn smoothing_identity_and_mean() {
        let n = 256;
        let xs: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
        let f: Vec<f64> = xs.iter().map(|x| 1.0 + x.cos() + 0.3 * (4.0 * x).sin()).collect();
        let k = SmoothingKernel::default();
        let out = smooth(&f, 0.1, &k).unwrap();
        assert!(out.samples.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-14));
        let out = smooth(&f, 1.0, &k).unwrap();
        assert!(out.samples.iter().all(|a| (a - 1.0).abs() < 1e-14));
        assert_eq!(out.highest_mode, 0);
        assert!(smooth(&f, 0.0, &k).is_err());
        assert_eq!(k.multiplier(0.0), 1.0);
        assert_eq!(k.multiplier(1.0), 0.0);
    }

    #[test]
    fn smoothing_rate_matches_regularity() {
        let rhos: Vec<f64> = (3..9).map(|j| 0.5f64.powi(j)).collect();
        for ell in [2.0, 3.0] {
            let f = regularity_test_function(ell, 1 << 14);
            let rate = smoothing_rate(&f, &rhos, &SmoothingKernel::default()).unwrap();
            assert!((rate.slope - ell).abs() < 0.15, "ℓ = {ell}: {rate:?}");
        }
    }

    #[test]
    fn proxy_two_modes() {
        let f = FourierTaylor::from_taylor(1, 64, 0, |t| vec![t[0].cos()]).unwrap();
        assert!((f.proxy(0.7, 0.3) - 0.7f64.exp()).abs() < 1e-14);
        assert!((f.proxy(0.0, 0.3) - 1.0).abs() < 1e-14);
        assert!(f.hermitian_defect() < 1e-15);
    }

    #[test]
    fn poisson_bracket_closed_form() {
        // {cos θ (1 + I), sin θ (1 + I)} = −(1 + I)
        let f = FourierTaylor::from_taylor(1, 32, 1, |t| vec![t[0].cos(), t[0].cos()]).unwrap();
        let g = FourierTaylor::from_taylor(1, 32, 1, |t| vec![t[0].sin(), t[0].sin()]).unwrap();
        let b = f.with_degree(2).poisson(&g.with_degree(2));
        for th in [0.1, 2.0] {
            for i in [0.0, 0.3] {
                assert!((b.eval(&[th], &[i]) + (1.0 + i)).abs() < 1e-13);
            }
        }
    }

    fn cos_hamiltonian(eps: f64, coupled: bool) -> FourierTaylorHamiltonian {
        let p = FourierTaylor::from_taylor(1, 64, 1, |t| vec![eps * t[0].cos(), if coupled { eps * t[0].cos() } else { 0.0 }]).unwrap();
        FourierTaylorHamiltonian::new(vec![golden()], p, 8, 0.9, 0.5).unwrap()
    }

    #[test]
    fn doubling_chain_converges_quadratically() {
        let rows = CosineChain::default().run(3).unwrap();
        let order = convergence_order(&rows).unwrap();
        assert!((order - 2.0).abs() < 0.2, "{rows:?}");
        assert!(rows.iter().all(|r| r.homological_residual < 1e-12 && r.symplectic_defect < 1e-8));
        let flat = CosineChain { coupling: 0.0, ..Default::default() }.run(1).unwrap();
        assert_eq!(flat[0].eps_next, 0.0);
    }

    #[test]
    fn step_on_zero_perturbation_is_identity() {
        let p = FourierTaylor::zero(1, 64, 1).unwrap();
        let h = FourierTaylorHamiltonian::new(vec![golden()], p, 8, 0.9, 0.5).unwrap();
        let res = kam_step(&h, &KamStepParams::default()).unwrap();
        assert_eq!(res.eps, 0.0);
        assert_eq!(res.eps_next, 0.0);
        assert_eq!(res.flow.max_displacement, 0.0);
        assert_eq!(res.flow.max_shift, 0.0);
    }

    #[test]
    fn step_on_cosine_matches_closed_form_generator() {
        let eps = 1e-3;
        let h = cos_hamiltonian(eps, false);
        let res = kam_step(&h, &KamStepParams::default()).unwrap();
        for th in [0.0f64, 0.4, 2.5] {
            let expected = eps * th.sin() / golden();
            assert!((res.generator.eval(&[th], &[0.0]) - expected).abs() < 1e-16);
        }
        assert!(res.generator_mean < 1e-18);
        assert!(res.homological_residual < 1e-16);
        // I-independent perturbation is removed exactly.
        assert!(res.eps_next < 1e-18, "{}", res.eps_next);
        assert!(res.symplectic_defect < 1e-8);
    }

    #[test]
    fn step_preserves_reality_and_reduces_error() {
        let h = cos_hamiltonian(1e-3, true);
        let res = kam_step(&h, &KamStepParams::default()).unwrap();
        assert!(res.next.perturbation.hermitian_defect() < 1e-12);
        assert!(res.eps_next < 1e-2 * res.eps);
        assert!(res.symplectic_defect < 1e-8);
        assert!(res.homological_residual < 1e-12);
        assert!(res.bound_constant.is_finite());
    }

    #[test]
    fn smallness_enforcement() {
        let h = cos_hamiltonian(0.2, true);
        let p = KamStepParams { enforce_smallness: true, ..Default::default() };
        assert!(matches!(kam_step(&h, &p), Err(KamError::SmallnessViolation(_))));
    }

    #[test]
    fn two_torus_step() {
        let w = vec![1.0, golden() / 2.0];
        let eps = 1e-3;
        let p = FourierTaylor::from_taylor(2, 32, 1, |t| {
            let v = eps * (t[0].cos() + 0.5 * (t[0] - t[1]).cos());
            vec![v, v, 0.5 * v]
        })
        .unwrap();
        let h = FourierTaylorHamiltonian::new(w, p, 4, 0.9, 0.5).unwrap();
        let res = kam_step(&h, &KamStepParams { kappa: 0.01, ..Default::default() }).unwrap();
        assert!(res.homological_residual < 1e-15);
        assert!(res.symplectic_defect < 1e-8);
        assert!(res.eps_next < 1e-2 * res.eps);
        assert!(res.next.perturbation.hermitian_defect() < 1e-12);
    }

    #[test]
    fn frequency_correction_newton() {
        let target = [golden()];
        let fam = |w: &[f64]| {
            let a = 1e-3 * (1.0 + w[0] * w[0]);
            let p = FourierTaylor::from_taylor(1, 32, 1, |t| vec![0.0, a + 1e-3 * t[0].cos()]).unwrap();
            FourierTaylorHamiltonian::new(w.to_vec(), p, 4, 0.9, 0.5).unwrap()
        };
        let fc = correct_frequency(&target, fam, 4, 1e-14).unwrap();
        assert!((fc.omega[0] + 1e-3 * (1.0 + fc.omega[0].powi(2)) - target[0]).abs() < 1e-13);
    }

    #[test]
    fn schedule_relations() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        assert!((s.delta - 12f64.powf(-4.0)).abs() < 1e-18);
        for w in s.rows.windows(2) {
            assert!((w[1].s - (w[0].s - 5.0 * w[0].sigma)).abs() <= 1e-14 * w[0].s);
            assert!((w[1].ln_e - w[0].ln_e - w[0].nu * s.delta.ln()).abs() < 1e-9);
        }
        for r in &s.rows {
            assert!((r.sigma - (1.0 - s.delta) * r.s / 5.0).abs() <= 1e-14 * r.sigma);
            assert!((r.ln_eps - r.ln_eps_closed).abs() < 1e-8 * r.ln_eps.abs());
        }
        assert_eq!(s.q_mismatch, 0.0);
    }

    #[test]
    fn schedule_rejections() {
        let e = ScheduleParams { e0: 0.5, ..Default::default() };
        let s = build_schedule(&e).unwrap();
        let (j, names) = s.first_failure.unwrap();
        assert_eq!(j, 0);
        assert!(names.iter().any(|n| n == "energy_below_eta_squared"));
        assert!(build_schedule(&ScheduleParams { strict: true, ..e }).is_err());
        let m = ScheduleParams { m: 2, j_of_m: Some(3), ..Default::default() };
        assert!(matches!(build_schedule(&m), Err(KamError::ParameterOutOfRange(_))));
        let ok = ScheduleParams { m: 2, j_of_m: None, ..Default::default() };
        assert_eq!(build_schedule(&ok).unwrap().j_of_m, 18);
        let ell = ScheduleParams { ell0: Ell0Convention::SingleTheta0, ..Default::default() };
        assert!((build_schedule(&ell).unwrap().ell0 - 5.9).abs() < 1e-12);
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn divisor_lower_bound(w in 0.0..(2.0 * PI), k in 1i64..100, kappa_i in 0usize..2, tau_i in 0usize..2) {
            let kappa = [0.01, 0.1][kappa_i];
            let tau = [1.2, 2.0][tau_i];
            let z = modified_divisor(&[w], &[k], kappa, tau, &standard_cutoff);
            prop_assert!(z.norm() * (1.0 + k as f64).powf(tau) / kappa >= 1.0 / 3.0);
        }

        #[test]
        fn proxy_bounds_grid_sup(seed in 0u64..1000, s in 0.0..1.0f64) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = FourierTaylor::from_taylor(1, 64, 0, |t| {
                vec![(0..6).map(|j| a[j] * ((j + 1) as f64 * t[0] + j as f64).cos()).sum()]
            }).unwrap();
            let sup = f.samples[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(f.proxy(s, 1.0) >= sup - 1e-14);
            prop_assert!(f.proxy(s + 0.1, 1.0) >= f.proxy(s, 1.0));
        }

        #[test]
        fn schedule_self_consistent(sigma_scale in 0.05..0.99f64, theta in 0.05..0.37f64, m in 0usize..3) {
            let p = ScheduleParams { theta, m, jmax: 20, ..Default::default() };
            let delta = (6.0 * p.big_c0).powf(-1.0 / theta);
            let p = ScheduleParams { sigma0: sigma_scale * (1.0 - delta) / 5.0, ..p };
            let s = build_schedule(&p).unwrap();
            prop_assert!(s.q_mismatch < 1e-9);
            for w in s.rows.windows(2) {
                if w[1].s > 1e-290 {
                    prop_assert!((w[1].s - (w[0].s - 5.0 * w[0].sigma)).abs() <= 1e-14 * w[0].s);
                }
                prop_assert!((w[1].ln_s - w[0].ln_s - s.delta.ln()).abs() < 1e-9 * w[1].ln_s.abs());
                prop_assert!(w[1].ln_h - w[0].ln_h < (p.tau + 1.0) * s.delta.ln());
            }
        }
    }
}
