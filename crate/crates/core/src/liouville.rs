//! Liouville billiard tables: metric (f(x) − q(y))(dx² + dy²) on a cylinder,
//! action integrals, rotation function, twist coefficients at the elliptic
//! bouncing-ball orbit and the Radon transform on invariant circles.

use crate::numerics::{bisect, periodic_trapezoid, safeguarded_newton, Chebyshev, GaussLegendre};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Evaluator returning value, first and second derivative.
pub type ProfileFn = Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiouvilleError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("level h = {h} outside the admissible range ({lo}, {hi}]")]
    LevelOutOfRange { h: f64, lo: f64, hi: f64 },
    #[error("turning point of f = {h} not bracketed")]
    TurningPointFailure { h: f64 },
    #[error("profile carries no Morse jet at x = 1/4")]
    JetMissing,
    #[error("boundary function not invariant under the symmetry group: deviation {deviation:e} at x = {x}")]
    SymmetryViolation { x: f64, deviation: f64 },
}

/// Taylor data f(1/4 + t) = α₀ + α₁t² + α₂t⁴ + … in the x-variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorseJet {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

#[derive(Clone)]
pub struct LiouvilleProfile {
    f: ProfileFn,
    q: ProfileFn,
    n: f64,
    jet: Option<MorseJet>,
    /// (ε, N) when the profile is the Euclidean ellipse.
    ellipse: Option<(f64, f64)>,
}

impl fmt::Debug for LiouvilleProfile {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("LiouvilleProfile")
            .field("n", &self.n)
            .field("jet", &self.jet)
            .field("ellipse", &self.ellipse)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalFlags {
    pub q_decreasing_at_boundary: bool,
    pub f_increasing_on_quarter: bool,
}

impl LiouvilleProfile {
    pub fn new(f: ProfileFn, q: ProfileFn, n: f64, jet: Option<MorseJet>) -> Result<Self, LiouvilleError> {
        let p = Self { f, q, n, jet, ellipse: None };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), LiouvilleError> {
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(LiouvilleError::InvalidProfile(format!("N = {} must be positive", self.n)));
        }
        for j in 1..64 {
            let x = j as f64 / 128.0;
            let d = (self.fv(x) - self.fv(-x)).abs();
            if d > 1e-12 * self.alpha0().abs().max(1.0) {
                return Err(LiouvilleError::InvalidProfile(format!("f not even at x = {x}")));
            }
            let y = self.n * j as f64 / 64.0;
            let d = (self.qv(y) - self.qv(-y)).abs();
            if d > 1e-12 * self.qv(self.n).abs().max(1.0) {
                return Err(LiouvilleError::InvalidProfile(format!("q not even at y = {y}")));
            }
        }
        for i in 1..32 {
            let x = 0.5 * i as f64 / 32.0;
            for j in 0..=16 {
                let y = -self.n + 2.0 * self.n * j as f64 / 16.0;
                if self.fv(x) - self.qv(y) <= 0.0 {
                    return Err(LiouvilleError::InvalidProfile(format!("metric not positive at ({x}, {y})")));
                }
            }
        }
        let a0 = self.alpha0();
        let a1 = (self.f)(0.25)[2] / 2.0;
        if !(a0 > 0.0) || !(a1 < 0.0) {
            return Err(LiouvilleError::InvalidProfile(format!(
                "Morse condition fails at x = 1/4 (alpha0 = {a0}, alpha1 = {a1})"
            )));
        }
        Ok(())
    }

    pub fn fv(&self, x: f64) -> f64 {
        (self.f)(x)[0]
    }

    pub fn f_derivs(&self, x: f64) -> [f64; 3] {
        (self.f)(x)
    }

    pub fn qv(&self, y: f64) -> f64 {
        (self.q)(y)[0]
    }

    pub fn q_derivs(&self, y: f64) -> [f64; 3] {
        (self.q)(y)
    }

    pub fn half_width(&self) -> f64 {
        self.n
    }

    pub fn jet(&self) -> Option<MorseJet> {
        self.jet
    }

    pub fn ellipse_parameters(&self) -> Option<(f64, f64)> {
        self.ellipse
    }

    pub fn alpha0(&self) -> f64 {
        self.fv(0.25)
    }

    /// Boundary value q(N) (negative).
    pub fn q_boundary(&self) -> f64 {
        self.qv(self.n)
    }

    pub fn classical_flags(&self) -> ClassicalFlags {
        let f_inc = (0..64).all(|j| {
            let x = 0.25 * (j as f64 + 0.5) / 64.0;
            self.f_derivs(x)[1] > 0.0
        });
        ClassicalFlags { q_decreasing_at_boundary: self.q_derivs(self.n)[1] < 0.0, f_increasing_on_quarter: f_inc }
    }
}

/// Euclidean ellipse with semi-axes a > b > 0 in elliptic coordinates.
pub fn ellipse_profile(a: f64, b: f64) -> Result<LiouvilleProfile, LiouvilleError> {
    if !(b > 0.0 && a > b) {
        return Err(LiouvilleError::InvalidProfile(format!("need a > b > 0, got a = {a}, b = {b}")));
    }
    let eps = (a * a - b * b).sqrt();
    if eps < 1e-8 {
        return Err(LiouvilleError::InvalidProfile(format!("focal distance {eps:e} below 1e-8")));
    }
    ellipse_profile_from(eps, (b / a).atanh() / (2.0 * PI))
}

/// Ellipse profile parametrized by the focal half-distance ε and N.
pub fn ellipse_profile_from(eps: f64, n: f64) -> Result<LiouvilleProfile, LiouvilleError> {
    if !(eps >= 1e-8 && n > 0.0) {
        return Err(LiouvilleError::InvalidProfile(format!("need eps >= 1e-8 and N > 0, got {eps}, {n}")));
    }
    let c2 = (2.0 * PI * eps).powi(2);
    let w = 2.0 * PI;
    let f: ProfileFn = Arc::new(move |x: f64| {
        let s = (w * x).sin();
        [c2 * s * s, c2 * w * (2.0 * w * x).sin(), c2 * 2.0 * w * w * (2.0 * w * x).cos()]
    });
    let q: ProfileFn = Arc::new(move |y: f64| {
        let s = (w * y).sinh();
        [-c2 * s * s, -c2 * w * (2.0 * w * y).sinh(), -c2 * 2.0 * w * w * (2.0 * w * y).cosh()]
    });
    let jet = MorseJet { alpha0: c2, alpha1: -4.0 * PI * PI * c2, alpha2: 16.0 * PI.powi(4) * c2 / 3.0 };
    let mut p = LiouvilleProfile::new(f, q, n, Some(jet))?;
    p.ellipse = Some((eps, n));
    Ok(p)
}

/// Liouville level h of the line through `point` with direction `dir` in the
/// ellipse x²/a² + y²/b² ≤ 1: h = 4π²(λ − b²) where the line is tangent to
/// the confocal conic with parameter λ.
pub fn ellipse_caustic_level(a: f64, b: f64, point: [f64; 2], dir: [f64; 2]) -> f64 {
    let m = dir[0] * point[1] - dir[1] * point[0];
    let lambda = a * a * dir[1] * dir[1] + b * b * dir[0] * dir[0] - m * m;
    4.0 * PI * PI * (lambda - b * b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleActions {
    pub h: f64,
    pub k: f64,
    pub i: f64,
    pub dk_dh: f64,
    pub di_dh: f64,
    pub d2k_dh2: f64,
    pub x_left: f64,
    pub x_right: f64,
}

/// Integral over [a, b] by 32-point Gauss–Legendre panels, doubled until the
/// relative change is below `tol`.
fn converged_gl<F: Fn(f64) -> f64>(rule: &GaussLegendre, a: f64, b: f64, tol: f64, f: F) -> f64 {
    let mut panels = 1;
    let mut prev = rule.integrate_composite(a, b, panels, &f);
    while panels < 512 {
        panels *= 2;
        let next = rule.integrate_composite(a, b, panels, &f);
        if (next - prev).abs() <= tol * next.abs().max(1e-300) {
            return next;
        }
        prev = next;
    }
    prev
}

/// Trapezoid sum on [0, π] with half-weight endpoints, doubled to convergence.
fn converged_endpoint_trapezoid<F: Fn(f64) -> f64>(tol: f64, f: F) -> f64 {
    let rule = |n: usize| {
        let h = PI / n as f64;
        let mut acc = 0.5 * (f(0.0) + f(PI));
        for j in 1..n {
            acc += f(h * j as f64);
        }
        acc * h
    };
    let mut n = 32;
    let mut prev = rule(n);
    while n < 2048 {
        n *= 2;
        let next = rule(n);
        if (next - prev).abs() <= tol * next.abs().max(1e-300) {
            return next;
        }
        prev = next;
    }
    prev
}

const QUAD_TOL: f64 = 1e-14;

fn gl32() -> GaussLegendre {
    GaussLegendre::new(32)
}

/// Root of f(x) = h on [0, 1/4] (left) or [1/4, 1/2] (right).
pub fn turning_point(profile: &LiouvilleProfile, h: f64, right: bool) -> Result<f64, LiouvilleError> {
    let (a, b) = if right { (0.25, 0.5) } else { (0.0, 0.25) };
    let g = |x: f64| {
        let d = profile.f_derivs(x);
        (d[0] - h, d[1])
    };
    safeguarded_newton(g, a, b, 0.5 * (a + b), 1e-16, 200).ok_or(LiouvilleError::TurningPointFailure { h })
}

/// Action integrals and their h-derivatives at a level h ∈ (0, α₀].
pub fn actions(profile: &LiouvilleProfile, h: f64) -> Result<LiouvilleActions, LiouvilleError> {
    let a0 = profile.alpha0();
    if !(h > 0.0 && h <= a0 * (1.0 + 1e-14)) {
        return Err(LiouvilleError::LevelOutOfRange { h, lo: 0.0, hi: a0 });
    }
    let rule = gl32();
    let n = profile.half_width();
    let k = 4.0 * converged_gl(&rule, 0.0, n, QUAD_TOL, |y| (h - profile.qv(y)).sqrt());
    let dk_dh = 2.0 * converged_gl(&rule, 0.0, n, QUAD_TOL, |y| 1.0 / (h - profile.qv(y)).sqrt());
    let d2k_dh2 = -converged_gl(&rule, 0.0, n, QUAD_TOL, |y| (h - profile.qv(y)).powf(-1.5));
    if (h - a0).abs() <= 1e-14 * a0 {
        let a1 = profile.f_derivs(0.25)[2] / 2.0;
        return Ok(LiouvilleActions {
            h,
            k,
            i: 0.0,
            dk_dh,
            di_dh: -PI / (-a1).sqrt(),
            d2k_dh2,
            x_left: 0.25,
            x_right: 0.25,
        });
    }
    let xl = turning_point(profile, h, false)?;
    let xr = turning_point(profile, h, true)?;
    let width = xr - xl;
    let slope = GaussLegendre::new(12);
    // φ = (f − h)/((x − x')(x'' − x)) with the difference taken from the
    // nearer turning point as a mean of f'
    let phi = |u: f64| {
        let (sh, ch) = ((0.5 * u).sin(), (0.5 * u).cos());
        let (left, right) = (width * sh * sh, width * ch * ch);
        if u <= 0.5 * PI {
            let mean = slope.integrate(0.0, 1.0, |t| profile.f_derivs(xl + t * left)[1]);
            mean / right
        } else {
            let mean = slope.integrate(0.0, 1.0, |t| profile.f_derivs(xr - t * right)[1]);
            -mean / left
        }
    };
    let i = 0.5 * width * width * converged_endpoint_trapezoid(QUAD_TOL, |u| u.sin().powi(2) * phi(u).sqrt());
    let di_dh = -converged_endpoint_trapezoid(QUAD_TOL, |u| 1.0 / phi(u).sqrt());
    Ok(LiouvilleActions { h, k, i, dk_dh, di_dh, d2k_dh2, x_left: xl, x_right: xr })
}

/// ρ(h) = (dK/dh)/(dI/dh).
pub fn rotation_function(profile: &LiouvilleProfile, h: f64) -> Result<f64, LiouvilleError> {
    let a = actions(profile, h)?;
    Ok(a.dk_dh / a.di_dh)
}

/// Rotation number (radians per bounce) of the rotational invariant circle
/// at a level h ∈ (q(N), 0): orbits tangent to an interior caustic.
pub fn caustic_rotation(profile: &LiouvilleProfile, h: f64) -> Result<f64, LiouvilleError> {
    let qn = profile.q_boundary();
    if !(h > qn && h < 0.0) {
        return Err(LiouvilleError::LevelOutOfRange { h, lo: qn, hi: 0.0 });
    }
    let n = profile.half_width();
    let yh = bisect(|y| profile.qv(y) - h, 0.0, n, 1e-16).ok_or(LiouvilleError::TurningPointFailure { h })?;
    let width = n - yh;
    let slope = GaussLegendre::new(12);
    let rule = gl32();
    // (h − q)/(y − y_h) as a mean of −q' keeps the integrand free of cancellation
    let num = converged_gl(&rule, 0.0, PI, QUAD_TOL, |u| {
        let sh = (0.5 * u).sin();
        let gap = width * sh * sh;
        let mean = -slope.integrate(0.0, 1.0, |t| profile.q_derivs(yh + t * gap)[1]);
        (0.5 * u).cos() * (width / mean).sqrt()
    });
    let den = periodic_trapezoid(1.0, 1024, |x| 1.0 / (profile.fv(x) - h).sqrt());
    Ok(2.0 * PI * 2.0 * num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistRoute {
    pub dk_di: f64,
    pub d2k_di2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwistReport {
    pub integral: Option<TwistRoute>,
    pub numerical: TwistRoute,
    pub closed_form: Option<TwistRoute>,
    pub max_relative_discrepancy: f64,
    pub twisted: bool,
}

/// Twist coefficients from the jet and the two boundary integrals.
pub fn twist_by_integrals(profile: &LiouvilleProfile) -> Result<TwistRoute, LiouvilleError> {
    let jet = profile.jet().ok_or(LiouvilleError::JetMissing)?;
    let rule = gl32();
    let n = profile.half_width();
    let a0 = jet.alpha0;
    let j1 = 2.0 * converged_gl(&rule, 0.0, n, QUAD_TOL, |y| 1.0 / (a0 - profile.qv(y)).sqrt());
    let j3 = 2.0 * converged_gl(&rule, 0.0, n, QUAD_TOL, |y| (a0 - profile.qv(y)).powf(-1.5));
    let (a1, a2) = (jet.alpha1, jet.alpha2);
    Ok(TwistRoute {
        dk_di: -(-a1).sqrt() / PI * j1,
        d2k_di2: a1 / (4.0 * PI * PI) * (2.0 * j3 - 3.0 * a2 / (a1 * a1) * j1),
    })
}

/// Chebyshev interpolants of the action derivatives on [α₀/2, α₀], evaluated
/// at α₀ from interior levels only.
#[derive(Debug, Clone)]
pub struct ActionInterpolants {
    pub i: Chebyshev,
    pub di_dh: Chebyshev,
    pub k: Chebyshev,
    pub dk_dh: Chebyshev,
    pub d2k_dh2: Chebyshev,
}

pub fn action_interpolants(profile: &LiouvilleProfile, lo_fraction: f64, nodes: usize) -> Result<ActionInterpolants, LiouvilleError> {
    let a0 = profile.alpha0();
    let (lo, hi) = (lo_fraction * a0, a0);
    let hs = Chebyshev::nodes(lo, hi, nodes);
    let acts: Result<Vec<LiouvilleActions>, LiouvilleError> = hs.iter().map(|&h| actions(profile, h)).collect();
    let acts = acts?;
    let build = |g: &dyn Fn(&LiouvilleActions) -> f64| {
        let v: Vec<f64> = acts.iter().map(g).collect();
        Chebyshev::from_values(lo, hi, &v)
    };
    Ok(ActionInterpolants {
        i: build(&|a| a.i),
        di_dh: build(&|a| a.di_dh),
        k: build(&|a| a.k),
        dk_dh: build(&|a| a.dk_dh),
        d2k_dh2: build(&|a| a.d2k_dh2),
    })
}

/// Twist coefficients from quadratured K(h), I(h) and spectral differences,
/// combined as (K''I' − K'I'')/I'³ at h = α₀.
pub fn twist_by_quadrature(profile: &LiouvilleProfile) -> Result<TwistRoute, LiouvilleError> {
    let a0 = profile.alpha0();
    let it = action_interpolants(profile, 0.5, 20)?;
    let i1 = it.di_dh.eval(a0);
    let i2 = it.di_dh.derivative().eval(a0);
    let k1 = it.dk_dh.eval(a0);
    let k2 = it.d2k_dh2.eval(a0);
    Ok(TwistRoute { dk_di: k1 / i1, d2k_di2: (k2 * i1 - k1 * i2) / i1.powi(3) })
}

/// Closed forms for the ellipse: −(2/π)arctan(sinh 2πN) and
/// −(1/(2επ²))·sinh 2πN / cosh² 2πN.
pub fn twist_closed_form(eps: f64, n: f64) -> TwistRoute {
    let (sh, ch) = ((2.0 * PI * n).sinh(), (2.0 * PI * n).cosh());
    TwistRoute { dk_di: -2.0 / PI * sh.atan(), d2k_di2: -sh / (ch * ch) / (2.0 * eps * PI * PI) }
}

pub fn twist_report(profile: &LiouvilleProfile) -> Result<TwistReport, LiouvilleError> {
    let integral = twist_by_integrals(profile)?;
    let numerical = twist_by_quadrature(profile)?;
    let closed = profile.ellipse_parameters().map(|(e, n)| twist_closed_form(e, n));
    let mut routes = vec![integral, numerical];
    routes.extend(closed);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    let mut worst: f64 = 0.0;
    for i in 0..routes.len() {
        for j in i + 1..routes.len() {
            worst = worst
                .max(rel(routes[i].dk_di, routes[j].dk_di))
                .max(rel(routes[i].d2k_di2, routes[j].d2k_di2));
        }
    }
    let twisted = integral.d2k_di2.abs() > 1e-12 && integral.d2k_di2.signum() == numerical.d2k_di2.signum();
    Ok(TwistReport { integral: Some(integral), numerical, closed_form: closed, max_relative_discrepancy: worst, twisted })
}

/// Jet identities at h = α₀ measured from interior levels against the
/// formulas in the Morse jet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JetIdentityCheck {
    pub i_at_alpha0: f64,
    pub di_dh: f64,
    pub di_dh_formula: f64,
    pub d2i_dh2: f64,
    pub d2i_dh2_formula: f64,
}

pub fn jet_identities(profile: &LiouvilleProfile) -> Result<JetIdentityCheck, LiouvilleError> {
    let jet = profile.jet().ok_or(LiouvilleError::JetMissing)?;
    let a0 = profile.alpha0();
    let it = action_interpolants(profile, 0.5, 20)?;
    let r = (-jet.alpha1).sqrt();
    Ok(JetIdentityCheck {
        i_at_alpha0: it.i.eval(a0),
        di_dh: it.di_dh.eval(a0),
        di_dh_formula: -PI / r,
        d2i_dh2: it.di_dh.derivative().eval(a0),
        d2i_dh2_formula: 3.0 * PI * jet.alpha2 / (4.0 * jet.alpha1 * jet.alpha1 * r),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonantLevel {
    /// Target value of dK/dI(0).
    pub rho: f64,
    pub n: f64,
    pub residual: f64,
}

pub const RESONANT_RHOS: [f64; 5] = [-0.25, -1.0 / 3.0, -0.5, -2.0 / 3.0, -0.75];

/// Values of N where the ellipse's bouncing-ball eigenphase is resonant of
/// order ≤ 4. The ellipse twist −(2/π)arctan(sinh 2πN) does not depend on ε.
pub fn resonant_levels(_eps: f64, n_max: f64) -> Vec<ResonantLevel> {
    let g = |n: f64| -2.0 / PI * (2.0 * PI * n).sinh().atan();
    RESONANT_RHOS
        .iter()
        .filter_map(|&rho| {
            let n = bisect(|n| g(n) - rho, 1e-300, n_max, 1e-15)?;
            Some(ResonantLevel { rho, n, residual: g(n) - rho })
        })
        .collect()
}

/// Boundary function K(x) on y = N.
pub type BoundaryFn<'a> = &'a dyn Fn(f64) -> f64;

fn converged_periodic<F: Fn(f64) -> f64>(f: F) -> f64 {
    let mut n = 64;
    let mut prev = periodic_trapezoid(1.0, n, &f);
    while n < 1 << 16 {
        n *= 2;
        let next = periodic_trapezoid(1.0, n, &f);
        if (next - prev).abs() <= 1e-15 * next.abs().max(1.0) {
            return next;
        }
        prev = next;
    }
    prev
}

/// Radon transform of K at a level h ∈ (q(N), 0), with the Leray form
/// normalized to a probability measure.
pub fn radon(profile: &LiouvilleProfile, k: BoundaryFn, h: f64) -> Result<f64, LiouvilleError> {
    let qn = profile.q_boundary();
    if !(h > qn && h < 0.0) {
        return Err(LiouvilleError::LevelOutOfRange { h, lo: qn, hi: 0.0 });
    }
    let mass = converged_periodic(|x| 1.0 / (profile.fv(x) - h).sqrt());
    let body = converged_periodic(|x| {
        let fx = profile.fv(x);
        k(x) / (fx - qn).sqrt() / (fx - h).sqrt()
    });
    Ok((h - qn).sqrt() * body / mass)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetryMode {
    /// Reject boundary functions that are not group invariant.
    Strict,
    /// Use the invariant projection and report the discarded part.
    Project,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// m_k = ∫₀¹ K₁ (f − q(N))^{−k−1/2} dx for the invariant part of K.
    pub moments: Vec<f64>,
    /// k-th h-derivative of ∫ K₁ (f − h)^{−1/2} at h = q(N).
    pub derivatives: Vec<f64>,
    pub first_nonzero: Option<usize>,
    pub symmetry_deviation: f64,
}

pub fn radon_moments(
    profile: &LiouvilleProfile,
    k: BoundaryFn,
    count: usize,
    mode: SymmetryMode,
) -> Result<MomentReport, LiouvilleError> {
    let qn = profile.q_boundary();
    let sym = |x: f64| 0.25 * (k(x) + k(-x) + k(x + 0.5) + k(0.5 - x));
    let mut deviation: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut at = 0.0;
    for j in 0..512 {
        let x = j as f64 / 512.0;
        let d = (k(x) - sym(x)).abs();
        scale = scale.max(k(x).abs());
        if d > deviation {
            deviation = d;
            at = x;
        }
    }
    if mode == SymmetryMode::Strict && deviation > 1e-10 * scale.max(1.0) {
        return Err(LiouvilleError::SymmetryViolation { x: at, deviation });
    }
    let moments: Vec<f64> = (0..count)
        .map(|m| {
            converged_periodic(|x| {
                let g = profile.fv(x) - qn;
                sym(x) / g.sqrt() * g.powf(-(m as f64) - 0.5)
            })
        })
        .collect();
    let mut factor = 1.0;
    let derivatives: Vec<f64> = moments
        .iter()
        .enumerate()
        .map(|(m, v)| {
            if m > 0 {
                factor *= (2.0 * m as f64 - 1.0) / 2.0;
            }
            factor * v
        })
        .collect();
    let size = moments.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let reference = converged_periodic(|x| k(x).abs() / (profile.fv(x) - qn));
    let threshold = 1e-12 * reference.max(1e-300);
    let first_nonzero = if size <= threshold { None } else { moments.iter().position(|v| v.abs() > threshold) };
    Ok(MomentReport { moments, derivatives, first_nonzero, symmetry_deviation: deviation })
}

/// Level sweep rows (h, K, I, ρ).
pub fn actions_table(profile: &LiouvilleProfile, levels: &[f64]) -> Result<Vec<[f64; 4]>, LiouvilleError> {
    levels
        .iter()
        .map(|&h| actions(profile, h).map(|a| [h, a.k, a.i, a.dk_dh / a.di_dh]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e21() -> LiouvilleProfile {
        ellipse_profile(2.0, 1.0).unwrap()
    }

    #[test]
    fn ellipse_parameters() {
        let p = e21();
        let (eps, n) = p.ellipse_parameters().unwrap();
        assert!((eps - 3f64.sqrt()).abs() < 1e-15);
        assert!(((2.0 * PI * n).sinh() - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        assert!(((2.0 * PI * n).cosh() - 2.0 / 3f64.sqrt()).abs() < 1e-14);
        let jet = p.jet().unwrap();
        assert!((jet.alpha1 / jet.alpha0 + 4.0 * PI * PI).abs() < 1e-12);
        // jet matches the evaluator
        assert!((jet.alpha0 - p.alpha0()).abs() < 1e-12 * jet.alpha0);
        assert!((jet.alpha1 - p.f_derivs(0.25)[2] / 2.0).abs() < 1e-10 * jet.alpha0);
        assert!(ellipse_profile(1.0, 1.0 - 1e-18).is_err());
        assert!(ellipse_profile(1.0, 2.0).is_err());
        let flags = p.classical_flags();
        assert!(flags.q_decreasing_at_boundary && flags.f_increasing_on_quarter);
    }

    #[test]
    fn actions_at_top_level() {
        let p = e21();
        let a0 = p.alpha0();
        let a = actions(&p, a0).unwrap();
        assert_eq!(a.i, 0.0);
        let jet = p.jet().unwrap();
        assert!((a.di_dh + PI / (-jet.alpha1).sqrt()).abs() < 1e-8 * a.di_dh.abs());
        // K(α₀) against an independent fine composite rule
        let g = GaussLegendre::new(20);
        let n = p.half_width();
        let k = 2.0 * g.integrate_composite(-n, n, 400, |y| (a0 - p.qv(y)).sqrt());
        assert!((a.k - k).abs() < 1e-10 * k);
        assert!(actions(&p, 1.01 * a0).is_err());
        assert!(actions(&p, 0.0).is_err());
    }

    #[test]
    fn whispering_gallery_turning_points() {
        let p = e21();
        let a = actions(&p, 1e-8 * p.alpha0()).unwrap();
        assert!(a.x_left < 1e-4 && a.x_right > 0.5 - 1e-4);
    }

    #[test]
    fn action_derivatives_match_finite_differences() {
        let p = e21();
        let h = 0.6 * p.alpha0();
        let d = 1e-4 * p.alpha0();
        let (ap, am, a) = (actions(&p, h + d).unwrap(), actions(&p, h - d).unwrap(), actions(&p, h).unwrap());
        assert!(((ap.i - am.i) / (2.0 * d) - a.di_dh).abs() < 1e-7 * a.di_dh.abs());
        assert!(((ap.k - am.k) / (2.0 * d) - a.dk_dh).abs() < 1e-7 * a.dk_dh.abs());
        assert!(((ap.dk_dh - am.dk_dh) / (2.0 * d) - a.d2k_dh2).abs() < 1e-6 * a.d2k_dh2.abs());
        assert!(a.i > 0.0);
    }

    #[test]
    fn rotation_at_top_and_monotone() {
        let p = e21();
        let r = rotation_function(&p, p.alpha0()).unwrap();
        assert!((r + 1.0 / 3.0).abs() < 1e-12);
        let vals: Vec<f64> = (1..=50).map(|j| rotation_function(&p, p.alpha0() * j as f64 / 50.0).unwrap()).collect();
        let inc = vals.windows(2).all(|w| w[1] > w[0]);
        let dec = vals.windows(2).all(|w| w[1] < w[0]);
        assert!(inc || dec);
    }

    #[test]
    fn twist_routes_agree_on_2_1() {
        let rep = twist_report(&e21()).unwrap();
        let int = rep.integral.unwrap();
        assert!((int.dk_di + 1.0 / 3.0).abs() < 1e-8);
        assert!((int.d2k_di2 + 1.0 / (8.0 * PI * PI)).abs() < 1e-8 / (8.0 * PI * PI));
        assert!((rep.numerical.dk_di + 1.0 / 3.0).abs() < 1e-6);
        assert!((rep.numerical.d2k_di2 + 1.0 / (8.0 * PI * PI)).abs() < 1e-4 / (8.0 * PI * PI));
        assert!(rep.max_relative_discrepancy < 1e-6, "{rep:?}");
        assert!(rep.twisted);
    }

    #[test]
    fn jet_identity_triplet() {
        let c = jet_identities(&e21()).unwrap();
        assert!(c.i_at_alpha0.abs() < 1e-10, "{c:?}");
        assert!((c.di_dh / c.di_dh_formula - 1.0).abs() < 1e-6);
        assert!((c.d2i_dh2 / c.d2i_dh2_formula - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resonant_levels_five() {
        let r = resonant_levels(3f64.sqrt(), 2.0);
        assert_eq!(r.len(), 5);
        for l in &r {
            assert!(l.residual.abs() < 1e-10);
        }
        let half = r.iter().find(|l| l.rho == -0.5).unwrap();
        assert!((half.n - 1f64.asinh() / (2.0 * PI)).abs() < 1e-10);
        let third = r.iter().find(|l| (l.rho + 1.0 / 3.0).abs() < 1e-15).unwrap();
        assert!(((2.0 * PI * third.n).sinh() - 1.0 / 3f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn radon_examples() {
        let p = e21();
        let qn = p.q_boundary();
        let h = 0.5 * qn;
        assert_eq!(radon(&p, &|_| 0.0, h).unwrap(), 0.0);
        let unit = radon(&p, &|x| (p.fv(x) - qn).sqrt(), h).unwrap();
        assert!((unit - (h - qn).sqrt()).abs() < 1e-9);
        let odd = radon(&p, &|x| (2.0 * PI * x).sin() * (1.0 + (2.0 * PI * x).cos()), h).unwrap();
        assert!(odd.abs() < 1e-14);
        assert!(radon(&p, &|_| 1.0, 0.1).is_err());
    }

    #[test]
    fn moment_examples() {
        let p = e21();
        let qn = p.q_boundary();
        let z = radon_moments(&p, &|_| 0.0, 4, SymmetryMode::Strict).unwrap();
        assert!(z.moments.iter().all(|m| *m == 0.0) && z.first_nonzero.is_none());
        let odd = |x: f64| (p.fv(x) - qn).sqrt() * p.f_derivs(x)[1];
        assert!(matches!(
            radon_moments(&p, &odd, 4, SymmetryMode::Strict),
            Err(LiouvilleError::SymmetryViolation { .. })
        ));
        let proj = radon_moments(&p, &odd, 4, SymmetryMode::Project).unwrap();
        assert!(proj.first_nonzero.is_none());
        let c4 = |x: f64| (p.fv(x) - qn).sqrt() * (4.0 * PI * x).cos();
        let m = radon_moments(&p, &c4, 4, SymmetryMode::Strict).unwrap();
        assert_eq!(m.first_nonzero, Some(0));
    }

    #[test]
    fn caustic_level_of_bouncing_ball() {
        let (a, b) = (2.0, 1.0);
        let h = ellipse_caustic_level(a, b, [0.0, b], [0.0, -1.0]);
        assert!((h - 4.0 * PI * PI * 3.0).abs() < 1e-12);
        let p = 0.3f64;
        let h = ellipse_caustic_level(a, b, [a, 0.0], [-(1.0 - p * p).sqrt(), p]);
        assert!((h + 4.0 * PI * PI * b * b * p * p).abs() < 1e-12);
    }
}
