//! The billiard ball map on (s, p): s arclength of the impact point, p the
//! tangential component of the outgoing unit direction.

use crate::geometry::BoundaryCurve;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const TWO_PI: f64 = 2.0 * PI;
const SECTORS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilliardError {
    #[error("glancing ray at bounce {index}: sin of the incidence angle is {sin_angle:e}")]
    GlancingRay { index: usize, sin_angle: f64 },
    #[error("momentum {0} outside the open coball interval")]
    InvalidMomentum(f64),
    #[error("generating function needs distinct boundary points (s = {0})")]
    CoincidentPoints(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub s: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(s: f64, p: f64) -> Self {
        Self { s, p }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BilliardOptions {
    /// Minimum sin of the angle between ray and boundary.
    pub glancing_threshold: f64,
    /// Newton tolerance in arclength.
    pub tolerance: f64,
}

impl Default for BilliardOptions {
    fn default() -> Self {
        Self { glancing_threshold: 1e-9, tolerance: 1e-13 }
    }
}

/// One application of the map with its chord and the arclength advance in (0, L).
#[derive(Debug, Clone, Copy)]
pub struct Bounce {
    pub next: PhasePoint,
    pub chord: f64,
    pub advance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitSegment {
    pub points: Vec<PhasePoint>,
    pub chords: Vec<f64>,
    /// Lifted arclength advances of each bounce.
    pub advances: Vec<f64>,
}

impl OrbitSegment {
    pub fn total_length(&self) -> f64 {
        self.chords.iter().sum()
    }

    /// Max deviation from the reflection law at interior impacts.
    pub fn reflection_residual(&self, curve: &BoundaryCurve) -> f64 {
        let mut worst: f64 = 0.0;
        let pts: Vec<[f64; 2]> = self.points.iter().map(|q| curve.position(q.s)).collect();
        for j in 1..self.points.len().saturating_sub(1) {
            let t = curve.frame(self.points[j].s).tangent;
            let dir = |a: [f64; 2], b: [f64; 2]| {
                let v = [b[0] - a[0], b[1] - a[1]];
                let n = v[0].hypot(v[1]);
                [v[0] / n, v[1] / n]
            };
            let din = dir(pts[j - 1], pts[j]);
            let dout = dir(pts[j], pts[j + 1]);
            let pin = din[0] * t[0] + din[1] * t[1];
            let pout = dout[0] * t[0] + dout[1] * t[1];
            worst = worst.max((pin - pout).abs()).max((pout - self.points[j].p).abs());
        }
        worst
    }

    /// Rows (index, s, p, chord to the next impact).
    pub fn rows(&self) -> Vec<(usize, f64, f64, Option<f64>)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, q)| (i, q.s, q.p, self.chords.get(i).copied()))
            .collect()
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn step(curve: &BoundaryCurve, rho: PhasePoint) -> Result<PhasePoint, BilliardError> {
    bounce(curve, rho, &BilliardOptions::default()).map(|b| b.next)
}

/// Next impact of the ray leaving `rho`, with chord and arclength advance.
pub fn bounce(curve: &BoundaryCurve, rho: PhasePoint, opts: &BilliardOptions) -> Result<Bounce, BilliardError> {
    if !(rho.p.abs() < 1.0) || !rho.s.is_finite() {
        return Err(BilliardError::InvalidMomentum(rho.p));
    }
    let sin0 = (1.0 - rho.p * rho.p).sqrt();
    if sin0 < opts.glancing_threshold {
        return Err(BilliardError::GlancingRay { index: 0, sin_angle: sin0 });
    }
    let theta0 = curve.theta_at(rho.s);
    let f0 = curve.frame_at_theta(theta0);
    let x0 = f0.position;
    let t0 = f0.tangent;
    let n0 = f0.normal;
    let phi = rho.p.acos();
    let angle = |theta: f64| -> (f64, f64) {
        let x = curve.position_at_theta(theta);
        let v = [x[0] - x0[0], x[1] - x0[1]];
        let c = dot(n0, v);
        let d = dot(t0, v);
        let (sn, cs) = theta.sin_cos();
        let r = curve.radius_of_curvature(theta).0;
        let dv = [-sn * r, cs * r];
        let dc = dot(n0, dv);
        let dd = dot(t0, dv);
        (c.atan2(d), (d * dc - c * dd) / (c * c + d * d))
    };
    // bracket by a coarse scan over the normal angle
    let mut lo = theta0;
    let mut hi = theta0 + TWO_PI;
    for j in 1..SECTORS {
        let th = theta0 + TWO_PI * j as f64 / SECTORS as f64;
        let (psi, _) = angle(th);
        if psi >= phi {
            hi = th;
            break;
        }
        lo = th;
    }
    let g = |th: f64| {
        if th <= theta0 {
            return (-phi, 0.5);
        }
        if th >= theta0 + TWO_PI {
            return (PI - phi, 0.5);
        }
        let (psi, dpsi) = angle(th);
        (psi - phi, dpsi)
    };
    let rmax = curve.radius_of_curvature(0.5 * (lo + hi)).0.max(1e-300);
    let tol_theta = (opts.tolerance / rmax).max(1e-16);
    let theta1 = crate::numerics::safeguarded_newton(g, lo, hi, 0.5 * (lo + hi), tol_theta, 200)
        .expect("ray leaves a convex table through exactly one boundary point");
    let f1 = curve.frame_at_theta(theta1);
    let v = [f1.position[0] - x0[0], f1.position[1] - x0[1]];
    let chord = v[0].hypot(v[1]);
    let d = [v[0] / chord, v[1] / chord];
    let p1 = dot(d, f1.tangent);
    let sin1 = -dot(d, f1.normal);
    if sin1 < opts.glancing_threshold {
        return Err(BilliardError::GlancingRay { index: 0, sin_angle: sin1 });
    }
    let advance = curve.arclength_at(theta1) - curve.arclength_at(theta0);
    let s1 = (rho.s + advance).rem_euclid(curve.perimeter());
    Ok(Bounce { next: PhasePoint { s: s1, p: p1 }, chord, advance })
}

pub fn iterate(curve: &BoundaryCurve, rho: PhasePoint, n: usize) -> Result<OrbitSegment, BilliardError> {
    let opts = BilliardOptions::default();
    let mut points = Vec::with_capacity(n + 1);
    let mut chords = Vec::with_capacity(n);
    let mut advances = Vec::with_capacity(n);
    points.push(rho);
    let mut cur = rho;
    for index in 0..n {
        let b = bounce(curve, cur, &opts).map_err(|e| match e {
            BilliardError::GlancingRay { sin_angle, .. } => BilliardError::GlancingRay { index, sin_angle },
            other => other,
        })?;
        chords.push(b.chord);
        advances.push(b.advance);
        points.push(b.next);
        cur = b.next;
    }
    Ok(OrbitSegment { points, chords, advances })
}

/// G(s, s') = −‖γ(s) − γ(s')‖.
pub fn generating_value(curve: &BoundaryCurve, s: f64, s1: f64) -> Result<f64, BilliardError> {
    let l = curve.perimeter();
    let gap = (s - s1).rem_euclid(l);
    if gap.min(l - gap) < 1e-14 * l {
        return Err(BilliardError::CoincidentPoints(s));
    }
    let a = curve.position(s);
    let b = curve.position(s1);
    Ok(-(a[0] - b[0]).hypot(a[1] - b[1]))
}

/// Second derivatives of the chord length ℓ(s, s') together with the chord data.
#[derive(Debug, Clone, Copy)]
pub struct ChordJet {
    pub length: f64,
    /// ∂ℓ/∂s = −p, ∂ℓ/∂s' = p'
    pub p0: f64,
    pub p1: f64,
    pub l11: f64,
    pub l12: f64,
    pub l22: f64,
}

/// Chord data between boundary points given by their normal angles.
pub fn chord_jet_theta(curve: &BoundaryCurve, theta0: f64, theta1: f64) -> ChordJet {
    let f0 = curve.frame_at_theta(theta0);
    let f1 = curve.frame_at_theta(theta1);
    let v = [f1.position[0] - f0.position[0], f1.position[1] - f0.position[1]];
    let length = v[0].hypot(v[1]);
    let d = [v[0] / length, v[1] / length];
    let p0 = dot(d, f0.tangent);
    let p1 = dot(d, f1.tangent);
    let sin0 = dot(d, f0.normal);
    let sin1 = -dot(d, f1.normal);
    ChordJet {
        length,
        p0,
        p1,
        l11: sin0 * sin0 / length - f0.curvature * sin0,
        l12: sin0 * sin1 / length,
        l22: sin1 * sin1 / length - f1.curvature * sin1,
    }
}

pub fn chord_jet(curve: &BoundaryCurve, s0: f64, s1: f64) -> ChordJet {
    chord_jet_theta(curve, curve.theta_at(s0), curve.theta_at(s1))
}

/// Jacobian of the map along the chord described by `j`.
pub fn jacobian_from_jet(j: &ChordJet) -> [[f64; 2]; 2] {
    [
        [-j.l11 / j.l12, -1.0 / j.l12],
        [j.l12 - j.l11 * j.l22 / j.l12, -j.l22 / j.l12],
    ]
}

/// Analytic dB(ρ) in (s, p) coordinates.
pub fn jacobian(curve: &BoundaryCurve, rho: PhasePoint) -> Result<[[f64; 2]; 2], BilliardError> {
    let b = bounce(curve, rho, &BilliardOptions::default())?;
    Ok(jacobian_from_jet(&chord_jet(curve, rho.s, b.next.s)))
}

/// Central finite-difference Jacobian of the map.
pub fn jacobian_fd(curve: &BoundaryCurve, rho: PhasePoint, h: f64) -> Result<[[f64; 2]; 2], BilliardError> {
    let opts = BilliardOptions::default();
    let base = bounce(curve, rho, &opts)?;
    let eval = |q: PhasePoint| -> Result<[f64; 2], BilliardError> {
        let b = bounce(curve, q, &opts)?;
        Ok([q.s + b.advance, b.next.p])
    };
    let _ = base;
    let sp = eval(PhasePoint::new(rho.s + h, rho.p))?;
    let sm = eval(PhasePoint::new(rho.s - h, rho.p))?;
    let pp = eval(PhasePoint::new(rho.s, rho.p + h))?;
    let pm = eval(PhasePoint::new(rho.s, rho.p - h))?;
    Ok([
        [(sp[0] - sm[0]) / (2.0 * h), (pp[0] - pm[0]) / (2.0 * h)],
        [(sp[1] - sm[1]) / (2.0 * h), (pp[1] - pm[1]) / (2.0 * h)],
    ])
}

pub fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn matmul2(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_circle, make_ellipse};

    #[test]
    fn disk_quarter_chord() {
        let c = make_circle(1.0).unwrap();
        let b = bounce(&c, PhasePoint::new(0.0, (PI / 4.0).cos()), &BilliardOptions::default()).unwrap();
        assert!((b.next.s - PI / 2.0).abs() < 1e-12);
        assert!((b.next.p - (PI / 4.0).cos()).abs() < 1e-13);
        assert!((b.chord - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn disk_diameter() {
        let c = make_circle(1.0).unwrap();
        let b = bounce(&c, PhasePoint::new(0.0, 0.0), &BilliardOptions::default()).unwrap();
        assert!((b.next.s - PI).abs() < 1e-12 && b.next.p.abs() < 1e-13);
        assert!((b.chord - 2.0).abs() < 1e-13);
    }

    #[test]
    fn ellipse_minor_axis_bounce() {
        let e = make_ellipse(2.0, 1.0).unwrap();
        let l = e.perimeter();
        let q = step(&e, PhasePoint::new(0.75 * l, 0.0)).unwrap();
        assert!((q.s - 0.25 * l).abs() < 1e-12 && q.p.abs() < 1e-12);
        let seg = iterate(&e, PhasePoint::new(0.75 * l, 0.0), 2).unwrap();
        assert!((seg.points[2].s - 0.75 * l).abs() < 1e-11);
        assert!((seg.total_length() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn disk_hexagon_closes() {
        let c = make_circle(1.0).unwrap();
        let seg = iterate(&c, PhasePoint::new(0.3, (PI / 6.0).cos()), 6).unwrap();
        let end = seg.points[6];
        let gap = (end.s - 0.3).rem_euclid(TWO_PI);
        assert!(gap.min(TWO_PI - gap) < 1e-10 && (end.p - (PI / 6.0).cos()).abs() < 1e-10);
        assert!((seg.total_length() - 6.0).abs() < 1e-12);
        assert!(seg.reflection_residual(&c) < 1e-10);
    }

    #[test]
    fn zero_iterations() {
        let c = make_circle(1.0).unwrap();
        let seg = iterate(&c, PhasePoint::new(0.0, 0.2), 0).unwrap();
        assert_eq!(seg.points.len(), 1);
        assert_eq!(seg.total_length(), 0.0);
    }

    #[test]
    fn glancing_rejected() {
        let c = make_circle(1.0).unwrap();
        assert!(matches!(
            step(&c, PhasePoint::new(0.0, 1.0 - 1e-20)),
            Err(BilliardError::InvalidMomentum(_)) | Err(BilliardError::GlancingRay { .. })
        ));
        assert!(matches!(step(&c, PhasePoint::new(0.0, 1.0)), Err(BilliardError::InvalidMomentum(_))));
    }

    #[test]
    fn disk_jacobian_is_a_shear() {
        let c = make_circle(1.0).unwrap();
        for p in [-0.7, 0.0, 0.4, 0.9] {
            let j = jacobian(&c, PhasePoint::new(1.0, p)).unwrap();
            let f = jacobian_fd(&c, PhasePoint::new(1.0, p), 1e-6).unwrap();
            assert!((j[0][0] + j[1][1] - 2.0).abs() < 1e-10);
            assert!((det2(&j) - 1.0).abs() < 1e-10);
            // ds'/dp = 2 dφ/dp = −2/sin φ
            assert!((j[0][1] + 2.0 / (1.0 - p * p).sqrt()).abs() < 1e-10);
            for a in 0..2 {
                for b in 0..2 {
                    assert!((j[a][b] - f[a][b]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn minor_axis_monodromy_is_elliptic() {
        let e = make_ellipse(2.0, 1.0).unwrap();
        let l = e.perimeter();
        let a = jacobian(&e, PhasePoint::new(0.25 * l, 0.0)).unwrap();
        let b = jacobian(&e, PhasePoint::new(0.75 * l, 0.0)).unwrap();
        let m = matmul2(&b, &a);
        let tr = m[0][0] + m[1][1];
        assert!((tr + 1.0).abs() < 1e-10);
        let af = jacobian_fd(&e, PhasePoint::new(0.25 * l, 0.0), 1e-6).unwrap();
        let bf = jacobian_fd(&e, PhasePoint::new(0.75 * l, 0.0), 1e-6).unwrap();
        let mf = matmul2(&bf, &af);
        assert!((mf[0][0] + mf[1][1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn generating_function_values_and_derivatives() {
        let c = make_circle(1.0).unwrap();
        assert!((generating_value(&c, 0.0, PI).unwrap() + 2.0).abs() < 1e-14);
        assert!((generating_value(&c, 0.0, PI / 2.0).unwrap() + 2f64.sqrt()).abs() < 1e-14);
        assert!(matches!(generating_value(&c, 1.0, 1.0), Err(BilliardError::CoincidentPoints(_))));
        let e = make_ellipse(2.0, 1.0).unwrap();
        let rho = PhasePoint::new(0.4, 0.3);
        let b = bounce(&e, rho, &BilliardOptions::default()).unwrap();
        let s1 = rho.s + b.advance;
        let h = 1e-6;
        let g1 = (generating_value(&e, rho.s + h, s1).unwrap() - generating_value(&e, rho.s - h, s1).unwrap()) / (2.0 * h);
        let g2 = (generating_value(&e, rho.s, s1 + h).unwrap() - generating_value(&e, rho.s, s1 - h).unwrap()) / (2.0 * h);
        assert!((g1 - rho.p).abs() < 1e-7);
        assert!((g2 + b.next.p).abs() < 1e-7);
        assert!(
            (generating_value(&e, 0.4, 3.0).unwrap() - generating_value(&e, 3.0, 0.4).unwrap()).abs() < 1e-15
        );
    }
}
