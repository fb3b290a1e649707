//! Invariant circles of the billiard map at Diophantine frequencies, their
//! average action β(ω) and action I(ω), and Diophantine-set utilities.

use crate::billiard::{bounce, chord_jet, BilliardError, BilliardOptions, PhasePoint};
use crate::geometry::BoundaryCurve;
use crate::numerics::{bump_weights, wrap_pi};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircleError {
    #[error("invalid Diophantine spec: {0}")]
    InvalidSpec(String),
    #[error("frequency {omega} fails the Diophantine condition at k = {k}")]
    PreconditionViolation { omega: f64, k: u64 },
    #[error("divisor |e^(ikω) − 1| = {divisor:e} at k = {k} below κ/k^τ = {bound:e}")]
    SmallDivisorBlowup { k: usize, divisor: f64, bound: f64 },
    #[error("Newton did not converge; residual history {history:?}")]
    NoConvergence { history: Vec<f64> },
    #[error("need at least 3 records with distinct frequencies")]
    SpacingTooCoarse,
    #[error("no seed orbit with rotation {0} found")]
    SeedFailure(f64),
    #[error(transparent)]
    Billiard(#[from] BilliardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineSpec {
    pub kappa: f64,
    pub tau: f64,
    pub kmax: u64,
}

impl DiophantineSpec {
    pub fn new(kappa: f64, tau: f64, kmax: u64) -> Result<Self, CircleError> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(CircleError::InvalidSpec(format!("kappa = {kappa} must lie in (0, 1)")));
        }
        if !(tau > 1.0) {
            return Err(CircleError::InvalidSpec(format!("tau = {tau} must exceed 1")));
        }
        if kmax < 1 {
            return Err(CircleError::InvalidSpec("kmax must be at least 1".into()));
        }
        Ok(Self { kappa, tau, kmax })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineVerdict {
    pub accepted: bool,
    /// k minimizing dist(kω, 2πℤ)·k^τ.
    pub worst_k: u64,
    /// dist(kω, 2πℤ)·k^τ − κ at the worst k.
    pub margin: f64,
}

/// Distance from x to the lattice 2πℤ.
pub fn circle_distance(x: f64) -> f64 {
    let r = x.rem_euclid(TWO_PI);
    r.min(TWO_PI - r)
}

pub fn is_diophantine(omega: f64, spec: &DiophantineSpec) -> DiophantineVerdict {
    let mut worst_k = 1;
    let mut worst = f64::INFINITY;
    for k in 1..=spec.kmax {
        let v = circle_distance(k as f64 * omega) * (k as f64).powf(spec.tau);
        if v < worst {
            worst = v;
            worst_k = k;
        }
    }
    DiophantineVerdict { accepted: worst >= spec.kappa, worst_k, margin: worst - spec.kappa }
}

/// Monte Carlo estimate of the fraction of ω in `interval` failing the
/// condition. Chunks use independent ChaCha streams keyed by the seed.
pub fn measure_omega_kappa(interval: (f64, f64), spec: &DiophantineSpec, samples: usize, seed: u64) -> f64 {
    const CHUNK: usize = 1024;
    let chunks = samples.div_ceil(CHUNK);
    let failed: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            (0..count)
                .filter(|_| {
                    let w = rng.gen_range(interval.0..interval.1);
                    !is_diophantine(w, spec).accepted
                })
                .count()
        })
        .sum();
    failed as f64 / samples as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AveragingScheme {
    Plain,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    pub omega: f64,
    /// Difference between the estimates from the full and the half orbit.
    pub error_proxy: f64,
}

fn average(values: &[f64], scheme: AveragingScheme) -> f64 {
    match scheme {
        AveragingScheme::Plain => values.iter().sum::<f64>() / values.len() as f64,
        AveragingScheme::Weighted => bump_weights(values.len()).iter().zip(values).map(|(w, v)| w * v).sum(),
    }
}

/// Rotation number 2π⟨Δs⟩/L of the orbit of `rho`.
pub fn rotation_number(
    curve: &BoundaryCurve,
    rho: PhasePoint,
    iterations: usize,
    scheme: AveragingScheme,
) -> Result<RotationEstimate, CircleError> {
    let advances = orbit_advances(curve, rho, iterations)?;
    let scale = TWO_PI / curve.perimeter();
    let full = average(&advances, scheme) * scale;
    let half = average(&advances[..(iterations / 2).max(1)], scheme) * scale;
    Ok(RotationEstimate { omega: full, error_proxy: (full - half).abs() })
}

fn orbit_advances(curve: &BoundaryCurve, rho: PhasePoint, n: usize) -> Result<Vec<f64>, CircleError> {
    let opts = BilliardOptions::default();
    let mut cur = rho;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let b = bounce(curve, cur, &opts)?;
        out.push(b.advance);
        cur = b.next;
    }
    Ok(out)
}

/// Birkhoff average of −chord along the orbit of `rho`.
pub fn birkhoff_beta(
    curve: &BoundaryCurve,
    rho: PhasePoint,
    iterations: usize,
    scheme: AveragingScheme,
) -> Result<f64, CircleError> {
    let opts = BilliardOptions::default();
    let mut cur = rho;
    let mut chords = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let b = bounce(curve, cur, &opts)?;
        chords.push(b.chord);
        cur = b.next;
    }
    Ok(-average(&chords, scheme))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCircleRecord {
    pub omega: f64,
    pub perimeter: f64,
    /// u(θ) = Σ_k u_cos[k-1] cos kθ + u_sin[k-1] sin kθ (zero mean).
    pub u_cos: Vec<f64>,
    pub u_sin: Vec<f64>,
    /// v(θ) = v_mean + Σ_k v_cos[k-1] cos kθ + v_sin[k-1] sin kθ.
    pub v_mean: f64,
    pub v_cos: Vec<f64>,
    pub v_sin: Vec<f64>,
    pub residual: f64,
    pub beta: f64,
    pub action: f64,
    pub newton_history: Vec<f64>,
}

impl InvariantCircleRecord {
    pub fn modes(&self) -> usize {
        self.u_cos.len()
    }

    /// Lifted arclength s(θ) = θL/2π + u(θ).
    pub fn s_at(&self, theta: f64) -> f64 {
        theta * self.perimeter / TWO_PI + trig_eval(&self.u_cos, &self.u_sin, theta)
    }

    pub fn ds_dtheta(&self, theta: f64) -> f64 {
        let mut d = self.perimeter / TWO_PI;
        for k in 1..=self.u_cos.len() {
            let kf = k as f64;
            d += kf * (-self.u_cos[k - 1] * (kf * theta).sin() + self.u_sin[k - 1] * (kf * theta).cos());
        }
        d
    }

    pub fn v_at(&self, theta: f64) -> f64 {
        self.v_mean + trig_eval(&self.v_cos, &self.v_sin, theta)
    }

    pub fn point(&self, theta: f64) -> PhasePoint {
        PhasePoint::new(self.s_at(theta).rem_euclid(self.perimeter), self.v_at(theta))
    }
}

fn trig_eval(c: &[f64], s: &[f64], theta: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..=c.len() {
        let (sn, cs) = (k as f64 * theta).sin_cos();
        acc += c[k - 1] * cs + s[k - 1] * sn;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub enum CircleSeed {
    /// Locate an orbit with the requested rotation from the vertex s = 0.
    Auto,
    /// Phase point on (or near) the sought circle.
    Orbit(PhasePoint),
    /// Initial Fourier data (cos, sin) of u.
    Coefficients(Vec<f64>, Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct CircleOptions {
    pub modes: usize,
    pub spec: DiophantineSpec,
    pub seed: CircleSeed,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed_iterations: usize,
}

impl CircleOptions {
    pub fn new(modes: usize, spec: DiophantineSpec) -> Self {
        Self { modes, spec, seed: CircleSeed::Auto, tolerance: 1e-13, max_iterations: 30, seed_iterations: 4096 }
    }
}

/// Fourier data of u from an orbit whose rotation is close to ω, by weighted
/// Birkhoff projection.
fn seed_from_orbit(
    curve: &BoundaryCurve,
    rho: PhasePoint,
    omega: f64,
    modes: usize,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>), CircleError> {
    let l = curve.perimeter();
    let adv = orbit_advances(curve, rho, n)?;
    let w = bump_weights(n);
    let mut lifted = Vec::with_capacity(n);
    let mut s = rho.s;
    for a in &adv {
        lifted.push(s);
        s += a;
    }
    let offsets: Vec<f64> = lifted.iter().enumerate().map(|(j, s)| s - j as f64 * omega * l / TWO_PI).collect();
    let c: f64 = w.iter().zip(&offsets).map(|(w, o)| w * o).sum();
    let theta0 = TWO_PI * c / l;
    let mut uc = vec![0.0; modes];
    let mut us = vec![0.0; modes];
    for k in 1..=modes {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let ph = -(k as f64) * (j as f64 * omega);
            acc += Complex64::from_polar(w[j] * (offsets[j] - c), ph);
        }
        let coef = acc * Complex64::from_polar(1.0, -(k as f64) * theta0);
        uc[k - 1] = 2.0 * coef.re;
        us[k - 1] = -2.0 * coef.im;
    }
    Ok((uc, us))
}

/// Orbit length separating all modes |k| ≤ K in the Birkhoff projection:
/// N·dist(jω, 2πℤ) ≫ 1 for every mode difference j ≤ 2K.
fn projection_length(omega: f64, modes: usize, floor: usize) -> usize {
    let gap = (1..=2 * modes).map(|j| circle_distance(j as f64 * omega)).fold(f64::INFINITY, f64::min);
    ((64.0 / gap).ceil() as usize).clamp(floor, 1 << 20)
}

/// Momentum at s = 0 whose orbit rotates by ω, located by bisection on the
/// weighted rotation number.
pub fn seed_momentum(curve: &BoundaryCurve, omega: f64, iterations: usize) -> Result<f64, CircleError> {
    let est = |p: f64| {
        rotation_number(curve, PhasePoint::new(0.0, p), iterations, AveragingScheme::Weighted).map(|r| r.omega)
    };
    // rotation decreases with p on the s = 0 ray
    let (mut lo, mut hi) = if omega < PI { (1e-9, 1.0 - 1e-7) } else { (-1.0 + 1e-7, -1e-9) };
    let (flo, fhi) = (est(lo)? - omega, est(hi)? - omega);
    if flo.signum() == fhi.signum() {
        return Err(CircleError::SeedFailure(omega));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let f = est(mid)? - omega;
        if f.abs() < 1e-12 {
            return Ok(mid);
        }
        if f.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Euler–Lagrange residual p_out(θ) − p_in(θ) and its Jacobian with respect
/// to the Fourier coefficients of u.
fn lagrangian_system(
    curve: &BoundaryCurve,
    omega: f64,
    uc: &[f64],
    us: &[f64],
    thetas: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let l = curve.perimeter();
    let modes = uc.len();
    let s_of = |t: f64| t * l / TWO_PI + trig_eval(uc, us, t);
    let m = thetas.len();
    let mut e = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, 2 * modes);
    for (row, &t) in thetas.iter().enumerate() {
        let (sm, s0, sp) = (s_of(t - omega), s_of(t), s_of(t + omega));
        let fwd = chord_jet(curve, s0, sp);
        let bwd = chord_jet(curve, sm, s0);
        e[row] = fwd.p0 - bwd.p1;
        // G = −ℓ: E = G₁(s0, sp) + G₂(sm, s0)
        let a_here = -fwd.l11 - bwd.l22;
        let a_next = -fwd.l12;
        let a_prev = -bwd.l12;
        for k in 1..=modes {
            let kf = k as f64;
            jac[(row, k - 1)] = a_here * (kf * t).cos() + a_next * (kf * (t + omega)).cos() + a_prev * (kf * (t - omega)).cos();
            jac[(row, modes + k - 1)] =
                a_here * (kf * t).sin() + a_next * (kf * (t + omega)).sin() + a_prev * (kf * (t - omega)).sin();
        }
    }
    (e, jac)
}

/// Kronecker circle of rotation ω by Newton on the vertex-arclength
/// formulation s(θ) = θL/2π + u(θ).
pub fn find_circle(curve: &BoundaryCurve, omega: f64, opts: &CircleOptions) -> Result<InvariantCircleRecord, CircleError> {
    let verdict = is_diophantine(omega, &opts.spec);
    if !verdict.accepted {
        return Err(CircleError::PreconditionViolation { omega, k: verdict.worst_k });
    }
    let modes = opts.modes.max(1);
    for k in 1..=modes {
        let divisor = (Complex64::from_polar(1.0, k as f64 * omega) - 1.0).norm();
        let bound = opts.spec.kappa / (k as f64).powf(opts.spec.tau);
        if divisor < bound {
            return Err(CircleError::SmallDivisorBlowup { k, divisor, bound });
        }
    }
    let (mut uc, mut us) = match &opts.seed {
        CircleSeed::Coefficients(c, s) => {
            let mut c = c.clone();
            let mut s = s.clone();
            c.resize(modes, 0.0);
            s.resize(modes, 0.0);
            (c, s)
        }
        CircleSeed::Orbit(rho) => seed_from_orbit(curve, *rho, omega, modes, projection_length(omega, modes, opts.seed_iterations))?,
        CircleSeed::Auto => {
            let p = seed_momentum(curve, omega, opts.seed_iterations)?;
            seed_from_orbit(curve, PhasePoint::new(0.0, p), omega, modes, projection_length(omega, modes, opts.seed_iterations))?
        }
    };
    let m = 4 * modes + 4;
    let thetas: Vec<f64> = (0..m).map(|j| TWO_PI * j as f64 / m as f64).collect();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let (e, jac) = lagrangian_system(curve, omega, &uc, &us, &thetas);
        let res = e.amax();
        history.push(res);
        if res < opts.tolerance {
            converged = true;
            break;
        }
        if history.len() >= 4 {
            let n = history.len();
            // stagnation at round-off level
            if res < 1e-11 && history[n - 2] < 1e-11 && res >= 0.5 * history[n - 2] {
                converged = true;
                break;
            }
        }
        let delta = jac.svd(true, true).solve(&(-e), 1e-13).map_err(|_| CircleError::NoConvergence { history: history.clone() })?;
        for k in 0..modes {
            uc[k] += delta[k];
            us[k] += delta[modes + k];
        }
        if !uc.iter().chain(&us).all(|v| v.is_finite()) {
            return Err(CircleError::NoConvergence { history });
        }
    }
    if !converged {
        return Err(CircleError::NoConvergence { history });
    }
    finish_record(curve, omega, uc, us, history)
}

fn finish_record(
    curve: &BoundaryCurve,
    omega: f64,
    uc: Vec<f64>,
    us: Vec<f64>,
    history: Vec<f64>,
) -> Result<InvariantCircleRecord, CircleError> {
    let l = curve.perimeter();
    let modes = uc.len();
    let mut rec = InvariantCircleRecord {
        omega,
        perimeter: l,
        u_cos: uc,
        u_sin: us,
        v_mean: 0.0,
        v_cos: vec![0.0; modes],
        v_sin: vec![0.0; modes],
        residual: f64::NAN,
        beta: 0.0,
        action: 0.0,
        newton_history: history,
    };
    let n = 16 * modes.max(16);
    let mut vs = Vec::with_capacity(n);
    let mut chords = Vec::with_capacity(n);
    let mut flux = 0.0;
    for j in 0..n {
        let t = TWO_PI * j as f64 / n as f64;
        let jet = chord_jet(curve, rec.s_at(t), rec.s_at(t + omega));
        vs.push(jet.p0);
        chords.push(jet.length);
        flux += jet.p0 * rec.ds_dtheta(t);
    }
    let coeffs = crate::numerics::dft_real(&vs);
    rec.v_mean = coeffs[0].re;
    for k in 1..=modes {
        rec.v_cos[k - 1] = 2.0 * coeffs[k].re;
        rec.v_sin[k - 1] = -2.0 * coeffs[k].im;
    }
    rec.beta = -chords.iter().sum::<f64>() / n as f64;
    rec.action = -flux / n as f64;
    rec.residual = conjugacy_residual(curve, &rec, 2048)?;
    Ok(rec)
}

/// max_θ ‖B(f(θ)) − f(θ + ω)‖ on `samples` angles offset from any solve grid.
pub fn conjugacy_residual(curve: &BoundaryCurve, rec: &InvariantCircleRecord, samples: usize) -> Result<f64, CircleError> {
    let opts = BilliardOptions::default();
    let l = curve.perimeter();
    let mut worst: f64 = 0.0;
    for j in 0..samples {
        let t = TWO_PI * (j as f64 + 0.371_830_4) / samples as f64;
        let b = bounce(curve, rec.point(t), &opts)?;
        let target = rec.point(t + rec.omega);
        let ds = (b.next.s - target.s).rem_euclid(l);
        worst = worst.max(ds.min(l - ds)).max((b.next.p - target.p).abs());
    }
    Ok(worst)
}

/// Average action of B^m on the circle, −(1/2π)∫ Σ_{i<m} chord dθ.
pub fn beta_of_power(curve: &BoundaryCurve, rec: &InvariantCircleRecord, m: usize) -> f64 {
    let n = 512;
    let mut acc = 0.0;
    for j in 0..n {
        let t = TWO_PI * j as f64 / n as f64;
        for i in 0..m {
            let a = rec.s_at(t + i as f64 * rec.omega);
            let b = rec.s_at(t + (i + 1) as f64 * rec.omega);
            acc += chord_jet(curve, a, b).length;
        }
    }
    -acc / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnfIdentityReport {
    pub omega: f64,
    pub dbeta_domega: f64,
    pub action: f64,
    pub residual: f64,
    /// |dL/dI − ω| with L(I) = ωI − β.
    pub legendre_residual: f64,
}

/// dβ/dω against I(ω) at the middle of three records.
pub fn bnf_identity_residual(records: &[InvariantCircleRecord]) -> Result<BnfIdentityReport, CircleError> {
    if records.len() < 3 {
        return Err(CircleError::SpacingTooCoarse);
    }
    let mut r: Vec<&InvariantCircleRecord> = records.iter().collect();
    r.sort_by(|a, b| a.omega.partial_cmp(&b.omega).unwrap());
    let mid = r.len() / 2;
    let (a, b, c) = (r[mid - 1], r[mid], r[mid + 1]);
    let (h1, h2) = (b.omega - a.omega, c.omega - b.omega);
    if h1 < 1e-12 || h2 < 1e-12 {
        return Err(CircleError::SpacingTooCoarse);
    }
    // derivative of the quadratic through three points at the middle
    let deriv = |fa: f64, fb: f64, fc: f64| {
        -h2 / (h1 * (h1 + h2)) * fa + (h2 - h1) / (h1 * h2) * fb + h1 / (h2 * (h1 + h2)) * fc
    };
    let db = deriv(a.beta, b.beta, c.beta);
    let lg = |x: &InvariantCircleRecord| x.omega * x.action - x.beta;
    let dl = deriv(lg(a), lg(b), lg(c));
    let di = deriv(a.action, b.action, c.action);
    Ok(BnfIdentityReport {
        omega: b.omega,
        dbeta_domega: db,
        action: b.action,
        residual: (db - b.action).abs(),
        legendre_residual: (dl / di - b.omega).abs(),
    })
}

/// Angle of a point around the origin, unwrapped step by step.
pub fn unwrap_step(prev: f64, raw: f64) -> f64 {
    prev + wrap_pi(raw - prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_circle, make_ellipse};

    fn golden() -> f64 {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        TWO_PI / (phi * phi)
    }

    #[test]
    fn diophantine_examples() {
        let spec = DiophantineSpec::new(0.1, 1.2, 10_000).unwrap();
        assert!(is_diophantine(golden(), &spec).accepted);
        let v = is_diophantine(PI, &spec);
        assert!(!v.accepted && v.worst_k == 2);
        let v = is_diophantine(TWO_PI * 3.0 / 7.0, &spec);
        assert!(!v.accepted && v.worst_k == 7);
        assert!(DiophantineSpec::new(1.5, 1.2, 10).is_err());
        assert!(DiophantineSpec::new(0.1, 1.0, 10).is_err());
    }

    #[test]
    fn measure_is_monotone_and_reproducible() {
        let f = |k: f64| measure_omega_kappa((0.0, TWO_PI), &DiophantineSpec::new(k, 2.0, 200).unwrap(), 20_000, 7);
        let (a, b, c) = (f(0.2), f(0.1), f(0.05));
        assert!(a > b && b > c && c > 0.0);
        assert_eq!(b, f(0.1));
        let big = measure_omega_kappa((0.0, TWO_PI), &DiophantineSpec::new(0.999, 1.1, 10_000).unwrap(), 4000, 3);
        assert!(big > 0.8);
    }

    #[test]
    fn disk_rotation_numbers() {
        let c = make_circle(1.0).unwrap();
        let r = rotation_number(&c, PhasePoint::new(0.2, (PI / 6.0).cos()), 500, AveragingScheme::Weighted).unwrap();
        assert!((r.omega - PI / 3.0).abs() < 1e-12);
        let r = rotation_number(&c, PhasePoint::new(0.2, 0.0), 100, AveragingScheme::Plain).unwrap();
        assert!((r.omega - PI).abs() < 1e-12);
    }

    #[test]
    fn disk_circle_closed_forms() {
        let c = make_circle(1.0).unwrap();
        let spec = DiophantineSpec::new(0.05, 1.5, 1000).unwrap();
        let w = golden();
        let mut opts = CircleOptions::new(16, spec);
        opts.seed = CircleSeed::Coefficients(vec![0.01], vec![0.0]);
        let rec = find_circle(&c, w, &opts).unwrap();
        assert!(rec.u_cos.iter().chain(&rec.u_sin).all(|x| x.abs() < 1e-12));
        assert!((rec.v_mean - (w / 2.0).cos()).abs() < 1e-12);
        assert!((rec.beta + 2.0 * (w / 2.0).sin()).abs() < 1e-12);
        assert!((rec.action + (w / 2.0).cos()).abs() < 1e-12);
        assert!(rec.residual < 1e-9);
        assert!((beta_of_power(&c, &rec, 3) - 3.0 * rec.beta).abs() < 1e-7);
        assert!(matches!(find_circle(&c, TWO_PI * 2.0 / 5.0, &opts), Err(CircleError::PreconditionViolation { .. })));
    }

    #[test]
    fn disk_bnf_identity() {
        let c = make_circle(1.0).unwrap();
        let spec = DiophantineSpec::new(0.01, 1.5, 200).unwrap();
        let w0 = golden();
        let recs: Vec<InvariantCircleRecord> = [-1e-3, 0.0, 1e-3]
            .iter()
            .map(|h| {
                let mut o = CircleOptions::new(16, spec);
                o.seed = CircleSeed::Coefficients(vec![], vec![]);
                find_circle(&c, w0 + h, &o).unwrap()
            })
            .collect();
        let rep = bnf_identity_residual(&recs).unwrap();
        assert!(rep.residual < 1e-5);
        assert!(rep.legendre_residual < 1e-5);
        let same = vec![recs[1].clone(), recs[1].clone(), recs[1].clone()];
        assert!(matches!(bnf_identity_residual(&same), Err(CircleError::SpacingTooCoarse)));
    }

    #[test]
    fn ellipse_circle_at_golden_frequency() {
        let e = make_ellipse(2.0, 1.0).unwrap();
        let spec = DiophantineSpec::new(0.05, 1.5, 1000).unwrap();
        let rec = find_circle(&e, golden(), &CircleOptions::new(48, spec)).unwrap();
        assert!(rec.residual < 1e-9, "{:?}", rec.newton_history);
        assert!(rec.beta < 0.0);
        let mean_u = crate::numerics::periodic_trapezoid(TWO_PI, 256, |t| rec.s_at(t) - t * rec.perimeter / TWO_PI);
        assert!(mean_u.abs() < 1e-12);
    }
}
