//! Periodic billiard orbits: variational search, monodromy classification,
//! resonance checks and the first twist coefficient at elliptic points.

use crate::billiard::{bounce, chord_jet, jacobian_from_jet, matmul2, BilliardError, BilliardOptions, PhasePoint};
use crate::circles::circle_distance;
use crate::geometry::BoundaryCurve;
use crate::numerics::{bump_weights, weighted_polyfit, wrap_pi};
use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitError {
    #[error("Newton did not converge, final residual {residual:e}")]
    NoConvergence { residual: f64 },
    #[error("length Hessian is singular")]
    DegenerateHessian,
    #[error("orbit is resonant at order {order}")]
    ResonantOrbit { order: u32 },
    #[error("orbit is not elliptic (trace {trace})")]
    NotElliptic { trace: f64 },
    #[error("jet extraction ill-conditioned (condition number {condition:e})")]
    JetIllConditioned { condition: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("orbit of the return map escaped: {0}")]
    Escaped(String),
    #[error(transparent)]
    Billiard(#[from] BilliardError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: usize,
    pub winding: i64,
    /// Lifted vertex arclengths s_0 < s_1 < … < s_{m−1}.
    pub vertices: Vec<f64>,
    pub perimeter: f64,
    pub length: f64,
    /// Max |∂(total length)/∂s_j|.
    pub residual: f64,
    /// Max deviation of B^m(ρ₀) from ρ₀ in (s, p).
    pub closure: f64,
}

impl PeriodicOrbit {
    fn vertex(&self, j: usize) -> f64 {
        let m = self.period;
        self.vertices[j % m] + (j / m) as f64 * self.winding as f64 * self.perimeter
    }

    /// Phase point (s_0, p_0) of the first vertex.
    pub fn start(&self, curve: &BoundaryCurve) -> PhasePoint {
        let jet = chord_jet(curve, self.vertex(0), self.vertex(1));
        PhasePoint::new(self.vertices[0].rem_euclid(self.perimeter), jet.p0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PeriodicOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 100 }
    }
}

/// Vertices at normal angles θ₀ + 2πwj/m, a natural seed on symmetric tables.
pub fn angular_seed(curve: &BoundaryCurve, m: usize, winding: i64, theta0: f64) -> Vec<f64> {
    (0..m).map(|j| curve.arclength_at(theta0 + TWO_PI * winding as f64 * j as f64 / m as f64)).collect()
}

fn gradient_and_hessian(curve: &BoundaryCurve, s: &[f64], shift: f64) -> (DVector<f64>, DMatrix<f64>, f64) {
    let m = s.len();
    let at = |j: usize| if j < m { s[j] } else { s[j - m] + shift };
    let jets: Vec<_> = (0..m).map(|j| chord_jet(curve, at(j), at(j + 1))).collect();
    let mut g = DVector::zeros(m);
    let mut h = DMatrix::zeros(m, m);
    for j in 0..m {
        let prev = &jets[(j + m - 1) % m];
        let next = &jets[j];
        g[j] = prev.p1 - next.p0;
        h[(j, j)] += prev.l22 + next.l11;
        let k = (j + 1) % m;
        h[(j, k)] += next.l12;
        h[(k, j)] += next.l12;
    }
    (g, h, jets.iter().map(|j| j.length).sum())
}

/// Critical point of the length functional Σ ℓ(s_j, s_{j+1}) with
/// s_m = s_0 + winding·L, by Newton from `seed`.
pub fn find_periodic(
    curve: &BoundaryCurve,
    m: usize,
    winding: i64,
    seed: &[f64],
    opts: &PeriodicOptions,
) -> Result<PeriodicOrbit, OrbitError> {
    if m < 2 || seed.len() != m {
        return Err(OrbitError::InvalidInput(format!("need m ≥ 2 seed vertices, got m = {m}, {} seeds", seed.len())));
    }
    if winding <= 0 || winding as usize >= m {
        return Err(OrbitError::InvalidInput(format!("winding {winding} must lie in 1..m")));
    }
    let l = curve.perimeter();
    let shift = winding as f64 * l;
    let mut s = seed.to_vec();
    let max_step = l / (8.0 * m as f64);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let (g, h, _) = gradient_and_hessian(curve, &s, shift);
        residual = g.amax();
        if residual < opts.tolerance {
            break;
        }
        let svd = h.svd(true, true);
        let smax = svd.singular_values.max();
        if !(smax > 0.0) {
            return Err(OrbitError::DegenerateHessian);
        }
        // directions along continuous symmetries are left untouched
        let delta = svd.solve(&(-g), 1e-10 * smax).map_err(|_| OrbitError::DegenerateHessian)?;
        let scale = (max_step / delta.amax()).min(1.0);
        for (x, d) in s.iter_mut().zip(delta.iter()) {
            *x += scale * d;
        }
    }
    if !(residual < opts.tolerance) {
        return Err(OrbitError::NoConvergence { residual });
    }
    let (g, _, length) = gradient_and_hessian(curve, &s, shift);
    let base = s[0].rem_euclid(l);
    let offset = s[0] - base;
    let vertices: Vec<f64> = s.iter().map(|v| v - offset).collect();
    let mut orbit = PeriodicOrbit {
        period: m,
        winding,
        vertices,
        perimeter: l,
        length,
        residual: g.amax(),
        closure: 0.0,
    };
    let start = orbit.start(curve);
    let opts_b = BilliardOptions::default();
    let mut cur = start;
    for _ in 0..m {
        cur = bounce(curve, cur, &opts_b)?.next;
    }
    let ds = (cur.s - start.s).rem_euclid(l);
    orbit.closure = ds.min(l - ds).max((cur.p - start.p).abs());
    Ok(orbit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitType {
    Elliptic,
    Hyperbolic,
    Parabolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitReport {
    pub monodromy: [[f64; 2]; 2],
    pub trace: f64,
    pub determinant: f64,
    pub kind: OrbitType,
    /// φ ∈ (0, π) with 2 cos φ = trace, elliptic only.
    pub eigenphase: Option<f64>,
    /// Largest eigenvalue modulus for hyperbolic orbits.
    pub multiplier: Option<f64>,
    pub resonance_order: u32,
    /// Orders k ≤ N with kφ ∈ 2πℤ within 1e-9.
    pub resonances: Vec<u32>,
}

impl OrbitReport {
    pub fn is_elementary(&self) -> bool {
        self.resonances.is_empty()
    }
}

pub fn monodromy(curve: &BoundaryCurve, orbit: &PeriodicOrbit) -> [[f64; 2]; 2] {
    let mut acc = [[1.0, 0.0], [0.0, 1.0]];
    for j in 0..orbit.period {
        let jac = jacobian_from_jet(&chord_jet(curve, orbit.vertex(j), orbit.vertex(j + 1)));
        acc = matmul2(&jac, &acc);
    }
    acc
}

pub fn classify_monodromy(m: [[f64; 2]; 2], order: u32) -> OrbitReport {
    let trace = m[0][0] + m[1][1];
    let determinant = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let (kind, eigenphase, multiplier) = if (trace.abs() - 2.0).abs() < 1e-9 {
        (OrbitType::Parabolic, None, None)
    } else if trace.abs() < 2.0 {
        (OrbitType::Elliptic, Some((0.5 * trace).acos()), None)
    } else {
        let disc = (0.25 * trace * trace - 1.0).sqrt();
        (OrbitType::Hyperbolic, None, Some(0.5 * trace.abs() + disc))
    };
    let phase = match kind {
        OrbitType::Elliptic => eigenphase.unwrap(),
        OrbitType::Parabolic => {
            if trace > 0.0 {
                0.0
            } else {
                PI
            }
        }
        OrbitType::Hyperbolic => f64::NAN,
    };
    let resonances = (1..=order).filter(|&k| circle_distance(k as f64 * phase) < 1e-9).collect();
    OrbitReport { monodromy: m, trace, determinant, kind, eigenphase, multiplier, resonance_order: order, resonances }
}

pub fn classify(curve: &BoundaryCurve, orbit: &PeriodicOrbit, order: u32) -> OrbitReport {
    classify_monodromy(monodromy(curve, orbit), order)
}

/// Area-preserving planar map with a distinguished fixed point.
pub trait ReturnMap: Sync {
    fn apply(&self, x: [f64; 2]) -> Result<[f64; 2], OrbitError>;
    fn fixed_point(&self) -> [f64; 2];
    fn linearization(&self) -> Option<[[f64; 2]; 2]> {
        None
    }
}

/// B^m in (s, p) around a periodic orbit, with s kept continuous near s_0.
pub struct BilliardReturn<'a> {
    curve: &'a BoundaryCurve,
    period: usize,
    base: PhasePoint,
    monodromy: [[f64; 2]; 2],
}

impl<'a> BilliardReturn<'a> {
    pub fn new(curve: &'a BoundaryCurve, orbit: &PeriodicOrbit) -> Self {
        Self { curve, period: orbit.period, base: orbit.start(curve), monodromy: monodromy(curve, orbit) }
    }
}

impl ReturnMap for BilliardReturn<'_> {
    fn apply(&self, x: [f64; 2]) -> Result<[f64; 2], OrbitError> {
        let l = self.curve.perimeter();
        let opts = BilliardOptions::default();
        let mut cur = PhasePoint::new(x[0].rem_euclid(l), x[1]);
        for _ in 0..self.period {
            cur = bounce(self.curve, cur, &opts)?.next;
        }
        let ds = (cur.s - self.base.s + 0.5 * l).rem_euclid(l) - 0.5 * l;
        Ok([self.base.s + ds, cur.p])
    }

    fn fixed_point(&self) -> [f64; 2] {
        [self.base.s, self.base.p]
    }

    fn linearization(&self) -> Option<[[f64; 2]; 2]> {
        Some(self.monodromy)
    }
}

/// (x, y) ↦ rotation of (x, y) by ω₀ + c·I + c₂·I², I = (x² + y²)/2.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticTwist {
    pub omega0: f64,
    pub c: f64,
    pub c2: f64,
}

impl ReturnMap for SyntheticTwist {
    fn apply(&self, x: [f64; 2]) -> Result<[f64; 2], OrbitError> {
        let i = 0.5 * (x[0] * x[0] + x[1] * x[1]);
        let (s, c) = (self.omega0 + self.c * i + self.c2 * i * i).sin_cos();
        Ok([c * x[0] - s * x[1], s * x[0] + c * x[1]])
    }

    fn fixed_point(&self) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Quadratic area-preserving map (x, y) ↦ R(a)(x, y − x²).
#[derive(Debug, Clone, Copy)]
pub struct HenonMap {
    pub angle: f64,
}

impl ReturnMap for HenonMap {
    fn apply(&self, x: [f64; 2]) -> Result<[f64; 2], OrbitError> {
        let (s, c) = self.angle.sin_cos();
        let y = x[1] - x[0] * x[0];
        Ok([c * x[0] - s * y, s * x[0] + c * y])
    }

    fn fixed_point(&self) -> [f64; 2] {
        [0.0, 0.0]
    }
}

#[derive(Debug, Clone)]
pub struct TwistOptions {
    /// Base stencil step in normalized coordinates.
    pub step: f64,
    pub richardson_levels: usize,
    pub condition_threshold: f64,
    pub amplitudes: usize,
    pub max_amplitude: f64,
    pub min_amplitude: f64,
    pub iterations: usize,
    pub max_iterations: usize,
    pub fourier_modes: usize,
    /// Relative agreement required between the two routes.
    pub cross_tolerance: f64,
    pub twist_threshold: f64,
    /// Skip the jet route instead of failing when the point is not 4-elementary.
    pub allow_resonant: bool,
}

impl Default for TwistOptions {
    fn default() -> Self {
        Self {
            step: 0.02,
            richardson_levels: 3,
            condition_threshold: 1e8,
            amplitudes: 8,
            max_amplitude: 0.08,
            min_amplitude: 0.02,
            iterations: 4000,
            max_iterations: 64_000,
            fourier_modes: 6,
            cross_tolerance: 1e-3,
            twist_threshold: 1e-8,
            allow_resonant: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnfReport {
    pub eigenphase: f64,
    /// Rotation of the linear part in the symplectic orientation of the plane.
    pub oriented_rotation: f64,
    pub tau1: f64,
    pub jet_tau1: Option<f64>,
    pub fit_tau1: f64,
    pub fit_tau2: f64,
    pub fit_intercept: f64,
    /// (I, ρ) samples of the fit.
    pub fit_points: Vec<[f64; 2]>,
    pub cross_residual: Option<f64>,
    pub cross_tolerance: f64,
    pub methods: Vec<String>,
    pub jet_condition: f64,
    pub twisted: bool,
}

/// Normalized symplectic frame: x = x₀ + Tξ with the linear map a rotation
/// by ψ ∈ (0, π) in ξ, |det T| = 1.
struct EllipticFrame {
    t: Matrix2<f64>,
    t_inv: Matrix2<f64>,
    mu: Complex64,
    det_t: f64,
    condition: f64,
}

fn elliptic_frame(m: [[f64; 2]; 2]) -> Result<EllipticFrame, OrbitError> {
    let trace = m[0][0] + m[1][1];
    if !(trace.abs() < 2.0) {
        return Err(OrbitError::NotElliptic { trace });
    }
    let psi = (0.5 * trace).acos();
    let mu = Complex64::from_polar(1.0, psi);
    // eigenvector of M for μ: (M − μ)q = 0
    let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let q = if b.abs() >= c.abs() {
        [Complex64::new(b, 0.0), mu - a]
    } else {
        [mu - d, Complex64::new(c, 0.0)]
    };
    let det_q = q[0].re * q[1].im - q[0].im * q[1].re;
    let scale = 1.0 / (4.0 * det_q.abs()).sqrt();
    let (qr, qi) = ([q[0].re * scale, q[1].re * scale], [q[0].im * scale, q[1].im * scale]);
    let t = Matrix2::new(2.0 * qr[0], -2.0 * qi[0], 2.0 * qr[1], -2.0 * qi[1]);
    let t_inv = t.try_inverse().ok_or(OrbitError::JetIllConditioned { condition: f64::INFINITY })?;
    let sv = t.singular_values();
    Ok(EllipticFrame { t, t_inv, mu, det_t: t.determinant(), condition: sv.max() / sv.min() })
}

const STENCIL: [[f64; 5]; 4] = [
    [0.0, 0.0, 1.0, 0.0, 0.0],
    [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0],
    [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0],
    [-0.5, 1.0, 0.0, -1.0, 0.5],
];

/// Mixed partials ∂_u^a ∂_v^b of Z = G₁ + iG₂ for a + b ≤ 3, tensor
/// 5-point stencils with Richardson extrapolation in h².
fn complex_jet(
    map: &dyn ReturnMap,
    frame: &EllipticFrame,
    step: f64,
    levels: usize,
) -> Result<[[Complex64; 4]; 4], OrbitError> {
    let x0 = map.fixed_point();
    let g = |u: f64, v: f64| -> Result<Complex64, OrbitError> {
        let dx = frame.t * nalgebra::Vector2::new(u, v);
        let y = map.apply([x0[0] + dx[0], x0[1] + dx[1]])?;
        let xi = frame.t_inv * nalgebra::Vector2::new(y[0] - x0[0], y[1] - x0[1]);
        Ok(Complex64::new(xi[0], xi[1]))
    };
    let mut tables = Vec::new();
    for level in 0..levels.max(1) {
        let h = step / (1 << level) as f64;
        let mut grid = [[Complex64::new(0.0, 0.0); 5]; 5];
        for (i, row) in grid.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = g((i as f64 - 2.0) * h, (j as f64 - 2.0) * h)?;
            }
        }
        let mut d = [[Complex64::new(0.0, 0.0); 4]; 4];
        for a in 0..4 {
            for b in 0..4 - a {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..5 {
                    for j in 0..5 {
                        acc += grid[i][j] * STENCIL[a][i] * STENCIL[b][j];
                    }
                }
                d[a][b] = acc / h.powi((a + b) as i32);
            }
        }
        tables.push(d);
    }
    // eliminate h², h⁴, … in turn
    for k in 1..tables.len() {
        let f = 4f64.powi(k as i32);
        for l in (k..tables.len()).rev() {
            for a in 0..4 {
                for b in 0..4 - a {
                    tables[l][a][b] = (f * tables[l][a][b] - tables[l - 1][a][b]) / (f - 1.0);
                }
            }
        }
    }
    Ok(*tables.last().unwrap())
}

/// ∂_z^k ∂_z̄^l from the real partials.
fn wirtinger(d: &[[Complex64; 4]; 4], k: usize, l: usize) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    // coefficients of (X − iY)^k (X + iY)^l indexed by the power of Y
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for factor in std::iter::repeat(-i).take(k).chain(std::iter::repeat(i).take(l)) {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (p, c) in poly.iter().enumerate() {
            next[p] += c;
            next[p + 1] += c * factor;
        }
        poly = next;
    }
    let n = k + l;
    let mut acc = Complex64::new(0.0, 0.0);
    for (b, c) in poly.iter().enumerate() {
        acc += c * d[n - b][b];
    }
    acc / 2f64.powi(n as i32)
}

/// First twist coefficient dρ/dI of a nonresonant elliptic fixed point from
/// the cubic normal form coefficient.
fn jet_twist(map: &dyn ReturnMap, frame: &EllipticFrame, opts: &TwistOptions) -> Result<f64, OrbitError> {
    let d = complex_jet(map, frame, opts.step, opts.richardson_levels)?;
    let mu = frame.mu;
    let g20 = wirtinger(&d, 2, 0);
    let g11 = wirtinger(&d, 1, 1);
    let g02 = wirtinger(&d, 0, 2);
    let g21 = wirtinger(&d, 2, 1);
    let one = Complex64::new(1.0, 0.0);
    let c1 = g20 * g11 * (mu.conj() - 3.0 + 2.0 * mu) / (2.0 * (mu * mu - mu) * (mu.conj() - one))
        + g11.norm_sqr() / (one - mu.conj())
        + g02.norm_sqr() / (2.0 * (mu * mu - mu.conj()))
        + g21 / 2.0;
    // ξ = (Re z, Im z) and I = |det T|·|z|²/2 with |det T| = 1
    let twist_xi = 2.0 * (mu.conj() * c1).im;
    Ok(frame.det_t.signum() * twist_xi)
}

/// Rotation number (radians per iterate) and enclosed action of the orbit
/// of ξ₀ in the normalized frame.
fn circle_sample(
    map: &dyn ReturnMap,
    frame: &EllipticFrame,
    amplitude: f64,
    opts: &TwistOptions,
) -> Result<(f64, f64), OrbitError> {
    let x0 = map.fixed_point();
    let to_x = |xi: [f64; 2]| {
        let dx = frame.t * nalgebra::Vector2::new(xi[0], xi[1]);
        [x0[0] + dx[0], x0[1] + dx[1]]
    };
    let to_xi = |x: [f64; 2]| {
        let v = frame.t_inv * nalgebra::Vector2::new(x[0] - x0[0], x[1] - x0[1]);
        [v[0], v[1]]
    };
    let mut pts: Vec<[f64; 2]> = vec![[amplitude, 0.0]];
    let mut incr: Vec<f64> = Vec::new();
    let mut n = opts.iterations;
    loop {
        while pts.len() <= n {
            let last = *pts.last().unwrap();
            let next = to_xi(map.apply(to_x(last))?);
            let r = next[0].hypot(next[1]);
            if !(r < 10.0 * opts.max_amplitude) {
                return Err(OrbitError::Escaped(format!("amplitude {amplitude} reached radius {r}")));
            }
            incr.push(wrap_pi(next[1].atan2(next[0]) - last[1].atan2(last[0])));
            pts.push(next);
        }
        let w = bump_weights(n);
        let rho: f64 = w.iter().zip(&incr).map(|(w, d)| w * d).sum();
        // angular coverage of {jρ}; the Fourier fit needs every sector filled
        let sectors = 8 * opts.fourier_modes;
        let mut hit = vec![false; sectors];
        for j in 0..n {
            let a = (j as f64 * rho).rem_euclid(TWO_PI);
            hit[((a / TWO_PI * sectors as f64) as usize).min(sectors - 1)] = true;
        }
        if hit.iter().all(|&h| h) || n >= opts.max_iterations {
            let area = fourier_area(&pts[..n], rho, opts.fourier_modes);
            return Ok((rho, area.abs() * frame.det_t.abs() / TWO_PI));
        }
        n = (2 * n).min(opts.max_iterations);
    }
}

/// Signed area π Σ k|c_k|² of the curve ζ(θ) sampled at θ_j = jρ, with c_k
/// from a least-squares fit.
fn fourier_area(pts: &[[f64; 2]], rho: f64, modes: usize) -> f64 {
    let kk = 2 * modes + 1;
    let n = pts.len();
    // real design over (Re c_k, Im c_k) for k = −K..K
    let mut a = DMatrix::zeros(2 * n, 2 * kk);
    let mut y = DVector::zeros(2 * n);
    for (j, p) in pts.iter().enumerate() {
        for idx in 0..kk {
            let k = idx as f64 - modes as f64;
            let (s, c) = (k * j as f64 * rho).sin_cos();
            a[(2 * j, 2 * idx)] = c;
            a[(2 * j, 2 * idx + 1)] = -s;
            a[(2 * j + 1, 2 * idx)] = s;
            a[(2 * j + 1, 2 * idx + 1)] = c;
        }
        y[2 * j] = p[0];
        y[2 * j + 1] = p[1];
    }
    let coef = a.svd(true, true).solve(&y, 1e-12).expect("svd solve");
    (0..kk)
        .map(|idx| {
            let k = idx as f64 - modes as f64;
            k * (coef[2 * idx].powi(2) + coef[2 * idx + 1].powi(2))
        })
        .sum::<f64>()
        * PI
}

fn finite_difference_linearization(map: &dyn ReturnMap) -> Result<[[f64; 2]; 2], OrbitError> {
    let x0 = map.fixed_point();
    let h = 1e-4 * (1.0 + x0[0].abs().max(x0[1].abs()));
    let mut m = [[0.0; 2]; 2];
    for col in 0..2 {
        let mut vals = [[0.0; 2]; 4];
        for (idx, k) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
            let mut x = x0;
            x[col] += k * h;
            vals[idx] = map.apply(x)?;
        }
        for row in 0..2 {
            m[row][col] = (vals[0][row] - 8.0 * vals[1][row] + 8.0 * vals[2][row] - vals[3][row]) / (12.0 * h);
        }
    }
    Ok(m)
}

/// Twist coefficient at the fixed point of a generic area-preserving map,
/// by the normal-form jet and by a rotation–action fit.
pub fn twist_at_fixed_point(map: &dyn ReturnMap, opts: &TwistOptions) -> Result<BnfReport, OrbitError> {
    let m = match map.linearization() {
        Some(m) => m,
        None => finite_difference_linearization(map)?,
    };
    let report = classify_monodromy(m, 4);
    if report.kind != OrbitType::Elliptic {
        if report.kind == OrbitType::Parabolic {
            return Err(OrbitError::ResonantOrbit { order: if report.trace > 0.0 { 1 } else { 2 } });
        }
        return Err(OrbitError::NotElliptic { trace: report.trace });
    }
    let frame = elliptic_frame(m)?;
    if frame.condition > opts.condition_threshold {
        return Err(OrbitError::JetIllConditioned { condition: frame.condition });
    }
    let eigenphase = report.eigenphase.unwrap();
    let resonant = report.resonances.first().copied();
    let mut methods = Vec::new();
    let jet_tau1 = match resonant {
        Some(order) if !opts.allow_resonant => return Err(OrbitError::ResonantOrbit { order }),
        Some(_) => None,
        None => {
            methods.push("jet-normal-form".to_string());
            Some(jet_twist(map, &frame, opts)?)
        }
    };
    let n = opts.amplitudes.max(3);
    let mut points = Vec::with_capacity(n);
    for j in 0..n {
        let r = opts.min_amplitude + (opts.max_amplitude - opts.min_amplitude) * j as f64 / (n - 1) as f64;
        let (rho, action) = circle_sample(map, &frame, r, opts)?;
        points.push([action, frame.det_t.signum() * rho]);
    }
    methods.push("rotation-action-fit".to_string());
    let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
    let (coef, _) = weighted_polyfit(&xs, &ys, &vec![1.0; n], 2);
    let fit_tau1 = coef[1];
    let tau1 = jet_tau1.unwrap_or(fit_tau1);
    let cross_residual = jet_tau1.map(|j| (j - fit_tau1).abs() / j.abs().max(fit_tau1.abs()).max(1e-300));
    Ok(BnfReport {
        eigenphase,
        oriented_rotation: frame.det_t.signum() * eigenphase,
        tau1,
        jet_tau1,
        fit_tau1,
        fit_tau2: coef[2],
        fit_intercept: coef[0],
        fit_points: points,
        cross_residual,
        cross_tolerance: opts.cross_tolerance,
        methods,
        jet_condition: frame.condition,
        twisted: tau1.abs() > opts.twist_threshold,
    })
}

/// Twist coefficient of the return map B^m at an elliptic periodic orbit.
pub fn twist_at_elliptic(curve: &BoundaryCurve, orbit: &PeriodicOrbit, opts: &TwistOptions) -> Result<BnfReport, OrbitError> {
    twist_at_fixed_point(&BilliardReturn::new(curve, orbit), opts)
}

/// Which of |φ/2π| or 1 − |φ/2π| matches `target` (in turns), if either.
pub fn match_eigenphase(phi: f64, target: f64, tol: f64) -> Option<&'static str> {
    let turns = (phi / TWO_PI).abs().rem_euclid(1.0);
    let t = target.abs().rem_euclid(1.0);
    if (turns - t).abs() < tol {
        Some("direct")
    } else if (1.0 - turns - t).abs() < tol {
        Some("reflected")
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::billiard::jacobian_fd;
    use crate::geometry::{make_circle, make_ellipse};

    #[test]
    fn ellipse_axis_orbits() {
        let e = make_ellipse(2.0, 1.0).unwrap();
        let mut seed = angular_seed(&e, 2, 1, PI / 2.0);
        seed[0] += 0.05;
        seed[1] -= 0.03;
        let minor = find_periodic(&e, 2, 1, &seed, &PeriodicOptions::default()).unwrap();
        assert!((minor.length - 4.0).abs() < 1e-10);
        assert!(minor.closure < 1e-9);
        for &v in &minor.vertices {
            assert!(e.position(v)[0].abs() < 1e-10);
        }
        let mut seed = angular_seed(&e, 2, 1, 0.0);
        seed[1] += 0.04;
        let major = find_periodic(&e, 2, 1, &seed, &PeriodicOptions::default()).unwrap();
        assert!((major.length - 8.0).abs() < 1e-10);
        let rep = classify(&e, &minor, 4);
        assert_eq!(rep.kind, OrbitType::Elliptic);
        assert!((rep.trace + 1.0).abs() < 1e-9);
        assert!((rep.determinant - 1.0).abs() < 1e-8);
        assert!((rep.eigenphase.unwrap() - TWO_PI / 3.0).abs() < 1e-8);
        assert_eq!(rep.resonances, vec![3]);
        let rep = classify(&e, &major, 4);
        assert_eq!(rep.kind, OrbitType::Hyperbolic);
        assert!(rep.multiplier.unwrap() > 1.0);
    }

    #[test]
    fn monodromy_matches_finite_differences() {
        let e = make_ellipse(2.0, 1.0).unwrap();
        let minor = find_periodic(&e, 2, 1, &angular_seed(&e, 2, 1, PI / 2.0), &PeriodicOptions::default()).unwrap();
        let start = minor.start(&e);
        let j0 = jacobian_fd(&e, start, 1e-6).unwrap();
        let mid = bounce(&e, start, &BilliardOptions::default()).unwrap().next;
        let j1 = jacobian_fd(&e, mid, 1e-6).unwrap();
        let fd = matmul2(&j1, &j0);
        let an = monodromy(&e, &minor);
        for r in 0..2 {
            for c in 0..2 {
                assert!((fd[r][c] - an[r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn disk_triangle() {
        let d = make_circle(1.0).unwrap();
        let mut seed = angular_seed(&d, 3, 1, 0.3);
        seed[1] += 0.1;
        let tri = find_periodic(&d, 3, 1, &seed, &PeriodicOptions::default()).unwrap();
        assert!((tri.length - 3.0 * 3f64.sqrt()).abs() < 1e-10);
        let rep = classify(&d, &tri, 4);
        assert_eq!(rep.kind, OrbitType::Parabolic);
        let diam = find_periodic(&d, 2, 1, &angular_seed(&d, 2, 1, 0.0), &PeriodicOptions::default()).unwrap();
        assert!(matches!(twist_at_elliptic(&d, &diam, &TwistOptions::default()), Err(OrbitError::ResonantOrbit { .. })));
    }

    #[test]
    fn artificial_resonance() {
        let (s, c) = (PI / 2.0).sin_cos();
        let rep = classify_monodromy([[c, -s], [s, c]], 4);
        assert_eq!(rep.resonances, vec![4]);
    }

    #[test]
    fn synthetic_twist_recovered() {
        let map = SyntheticTwist { omega0: 1.1, c: 0.7, c2: 0.0 };
        let rep = twist_at_fixed_point(&map, &TwistOptions::default()).unwrap();
        assert!((rep.jet_tau1.unwrap() - 0.7).abs() < 1e-8, "{rep:?}");
        assert!((rep.fit_tau1 - 0.7).abs() < 1e-8, "{rep:?}");
        let map = SyntheticTwist { omega0: -1.1, c: -0.7, c2: 0.0 };
        let rep = twist_at_fixed_point(&map, &TwistOptions::default()).unwrap();
        assert!((rep.tau1 + 0.7).abs() < 1e-8, "{rep:?}");
        assert!((rep.oriented_rotation + 1.1).abs() < 1e-9);
    }

    #[test]
    fn henon_routes_agree() {
        let map = HenonMap { angle: TWO_PI * 0.21 };
        let rep = twist_at_fixed_point(&map, &TwistOptions::default()).unwrap();
        assert!(rep.cross_residual.unwrap() < 1e-3, "{rep:?}");
        assert!(rep.twisted);
    }

    #[test]
    fn eigenphase_branches() {
        assert_eq!(match_eigenphase(TWO_PI / 3.0, 1.0 / 3.0, 1e-4), Some("direct"));
        assert_eq!(match_eigenphase(TWO_PI / 3.0, -2.0 / 3.0, 1e-4), Some("reflected"));
        assert_eq!(match_eigenphase(1.0, 0.45, 1e-4), None);
    }

    #[test]
    fn ellipse_minor_axis_twist() {
        let e = make_ellipse(2.0, 1.0).unwrap();
        let minor = find_periodic(&e, 2, 1, &angular_seed(&e, 2, 1, PI / 2.0), &PeriodicOptions::default()).unwrap();
        assert!(matches!(twist_at_elliptic(&e, &minor, &TwistOptions::default()), Err(OrbitError::ResonantOrbit { order: 3 })));
        let opts = TwistOptions { allow_resonant: true, ..TwistOptions::default() };
        let rep = twist_at_elliptic(&e, &minor, &opts).unwrap();
        assert!(rep.twisted, "{rep:?}");
        assert!(rep.jet_tau1.is_none());
        assert!((rep.fit_intercept.abs() - TWO_PI / 3.0).abs() < 1e-6, "{rep:?}");
        assert!(match_eigenphase(rep.eigenphase, 1.0 / 3.0, 1e-4).is_some());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn twist_family_recovers_c(sign in proptest::bool::ANY, mag in 0usize..3, omega0 in 0.5f64..2.5, c2 in -1.0f64..1.0) {
            let c = [0.1, 1.0, 10.0][mag] * if sign { 1.0 } else { -1.0 };
            let rep = twist_at_fixed_point(&SyntheticTwist { omega0, c, c2 }, &TwistOptions::default()).unwrap();
            proptest::prop_assert!((rep.tau1 - c).abs() < 1e-6 * c.abs(), "{:?}", rep);
        }
    }
}
