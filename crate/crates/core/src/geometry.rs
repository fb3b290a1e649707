//! Strictly convex planar boundary curves parametrized by the direction of the
//! outward normal, with arclength lookup tables.

use crate::numerics::GaussLegendre;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const TWO_PI: f64 = 2.0 * PI;
pub const DEFAULT_GRID: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid ellipse axes a = {a}, b = {b} (need a >= b > 0)")]
    InvalidAxes { a: f64, b: f64 },
    #[error("support function not strictly convex: radius of curvature {radius} at theta = {theta}")]
    ConvexityViolation { theta: f64, radius: f64 },
    #[error("arclength grid needs at least 16 nodes, got {0}")]
    InvalidGrid(usize),
    #[error("curve document: {0}")]
    Document(String),
}

/// Serializable description of a curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CurveSpec {
    Ellipse { a: f64, b: f64 },
    /// H(θ) = constant + Σ_k cos[k-1]·cos kθ + sin[k-1]·sin kθ.
    Support {
        constant: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

impl CurveSpec {
    pub fn dilated(&self, factor: f64) -> Self {
        match self {
            CurveSpec::Ellipse { a, b } => CurveSpec::Ellipse { a: a * factor, b: b * factor },
            CurveSpec::Support { constant, cos, sin } => CurveSpec::Support {
                constant: constant * factor,
                cos: cos.iter().map(|c| c * factor).collect(),
                sin: sin.iter().map(|c| c * factor).collect(),
            },
        }
    }
}

/// Position, unit tangent (counterclockwise), inward unit normal and curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub position: [f64; 2],
    pub tangent: [f64; 2],
    pub normal: [f64; 2],
    pub curvature: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryCurve {
    spec: CurveSpec,
    perimeter: f64,
    grid_theta: Vec<f64>,
    grid_s: Vec<f64>,
    rule: GaussLegendre,
}

pub fn make_ellipse(a: f64, b: f64) -> Result<BoundaryCurve, GeometryError> {
    BoundaryCurve::new(CurveSpec::Ellipse { a, b }, DEFAULT_GRID)
}

pub fn make_support_curve(constant: f64, cos: Vec<f64>, sin: Vec<f64>) -> Result<BoundaryCurve, GeometryError> {
    BoundaryCurve::new(CurveSpec::Support { constant, cos, sin }, DEFAULT_GRID)
}

pub fn make_circle(radius: f64) -> Result<BoundaryCurve, GeometryError> {
    make_ellipse(radius, radius)
}

impl BoundaryCurve {
    pub fn new(spec: CurveSpec, grid: usize) -> Result<Self, GeometryError> {
        if grid < 16 {
            return Err(GeometryError::InvalidGrid(grid));
        }
        match &spec {
            CurveSpec::Ellipse { a, b } => {
                if !(a.is_finite() && b.is_finite() && *b > 0.0 && a >= b) {
                    return Err(GeometryError::InvalidAxes { a: *a, b: *b });
                }
            }
            CurveSpec::Support { constant, cos, sin } => {
                if !constant.is_finite() || cos.iter().chain(sin).any(|c| !c.is_finite()) {
                    return Err(GeometryError::Document("non-finite support coefficient".into()));
                }
            }
        }
        let mut curve = Self {
            spec,
            perimeter: 0.0,
            grid_theta: Vec::new(),
            grid_s: Vec::new(),
            rule: GaussLegendre::new(8),
        };
        if let CurveSpec::Support { .. } = curve.spec {
            let samples = 16 * grid;
            for j in 0..samples {
                let theta = TWO_PI * j as f64 / samples as f64;
                let radius = curve.radius_of_curvature(theta).0;
                if radius <= 0.0 {
                    return Err(GeometryError::ConvexityViolation { theta, radius });
                }
            }
        }
        let grid_theta: Vec<f64> = (0..=grid).map(|j| TWO_PI * j as f64 / grid as f64).collect();
        let mut grid_s = vec![0.0; grid + 1];
        for j in 0..grid {
            let piece = curve
                .rule
                .integrate(grid_theta[j], grid_theta[j + 1], |t| curve.radius_of_curvature(t).0);
            grid_s[j + 1] = grid_s[j] + piece;
        }
        curve.perimeter = grid_s[grid];
        curve.grid_theta = grid_theta;
        curve.grid_s = grid_s;
        Ok(curve)
    }

    pub fn from_json(doc: &str) -> Result<Self, GeometryError> {
        let spec: CurveSpec = serde_json::from_str(doc).map_err(|e| GeometryError::Document(e.to_string()))?;
        Self::new(spec, DEFAULT_GRID)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("curve spec serializes")
    }

    pub fn spec(&self) -> &CurveSpec {
        &self.spec
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    pub fn grid_size(&self) -> usize {
        self.grid_theta.len() - 1
    }

    pub fn dilated(&self, factor: f64) -> Result<Self, GeometryError> {
        Self::new(self.spec.dilated(factor), self.grid_size())
    }

    /// Support function and its first three derivatives at normal angle θ.
    pub fn support(&self, theta: f64) -> [f64; 4] {
        match &self.spec {
            CurveSpec::Ellipse { a, b } => {
                let (s, c) = theta.sin_cos();
                let g = a * a * c * c + b * b * s * s;
                let h = g.sqrt();
                let g1 = (b * b - a * a) * 2.0 * s * c;
                let g2 = (b * b - a * a) * 2.0 * (c * c - s * s);
                let g3 = -(b * b - a * a) * 8.0 * s * c;
                let h1 = g1 / (2.0 * h);
                let h2 = (g2 - 2.0 * h1 * h1) / (2.0 * h);
                let h3 = (g3 - 6.0 * h1 * h2) / (2.0 * h);
                [h, h1, h2, h3]
            }
            CurveSpec::Support { constant, cos, sin } => {
                let mut out = [*constant, 0.0, 0.0, 0.0];
                let n = cos.len().max(sin.len());
                for k in 1..=n {
                    let ck = cos.get(k - 1).copied().unwrap_or(0.0);
                    let sk = sin.get(k - 1).copied().unwrap_or(0.0);
                    let kf = k as f64;
                    let (sn, cs) = (kf * theta).sin_cos();
                    let v = ck * cs + sk * sn;
                    let d = kf * (-ck * sn + sk * cs);
                    out[0] += v;
                    out[1] += d;
                    out[2] -= kf * kf * v;
                    out[3] -= kf * kf * d;
                }
                out
            }
        }
    }

    /// Radius of curvature H + H'' and its θ-derivative.
    pub fn radius_of_curvature(&self, theta: f64) -> (f64, f64) {
        match &self.spec {
            CurveSpec::Ellipse { a, b } => {
                let (s, c) = theta.sin_cos();
                let g = a * a * c * c + b * b * s * s;
                let g1 = (b * b - a * a) * 2.0 * s * c;
                let r = (a * b).powi(2) / (g * g.sqrt());
                (r, -1.5 * r * g1 / g)
            }
            CurveSpec::Support { .. } => {
                let h = self.support(theta);
                (h[0] + h[2], h[1] + h[3])
            }
        }
    }

    /// Boundary point with outward normal (cos θ, sin θ).
    pub fn position_at_theta(&self, theta: f64) -> [f64; 2] {
        let (s, c) = theta.sin_cos();
        match &self.spec {
            CurveSpec::Ellipse { a, b } => {
                let h = (a * a * c * c + b * b * s * s).sqrt();
                [a * a * c / h, b * b * s / h]
            }
            CurveSpec::Support { .. } => {
                let h = self.support(theta);
                [h[0] * c - h[1] * s, h[0] * s + h[1] * c]
            }
        }
    }

    /// Arclength from θ = 0, valid for any real θ (lifted).
    pub fn arclength_at(&self, theta: f64) -> f64 {
        let turns = (theta / TWO_PI).floor();
        let t = theta - turns * TWO_PI;
        let n = self.grid_size();
        let j = ((t / TWO_PI * n as f64).floor() as usize).min(n - 1);
        let piece = self.rule.integrate(self.grid_theta[j], t, |x| self.radius_of_curvature(x).0);
        turns * self.perimeter + self.grid_s[j] + piece
    }

    /// Normal angle θ ∈ [0, 2π) at arclength s (reduced mod L).
    pub fn theta_at(&self, s: f64) -> f64 {
        let s = s.rem_euclid(self.perimeter);
        let n = self.grid_size();
        let j = match self.grid_s.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        };
        let (s0, s1) = (self.grid_s[j], self.grid_s[j + 1]);
        let (t0, t1) = (self.grid_theta[j], self.grid_theta[j + 1]);
        let h = s1 - s0;
        let u = (s - s0) / h;
        let m0 = h / self.radius_of_curvature(t0).0;
        let m1 = h / self.radius_of_curvature(t1).0;
        // cubic Hermite with exact slopes dθ/ds = 1/ρ
        let u2 = u * u;
        let u3 = u2 * u;
        let mut theta = (2.0 * u3 - 3.0 * u2 + 1.0) * t0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * t1
            + (u3 - u2) * m1;
        theta = theta.clamp(t0, t1);
        for _ in 0..3 {
            let piece = self.rule.integrate(t0, theta, |x| self.radius_of_curvature(x).0);
            let err = s0 + piece - s;
            let step = err / self.radius_of_curvature(theta).0;
            theta -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        theta
    }

    pub fn position(&self, s: f64) -> [f64; 2] {
        self.position_at_theta(self.theta_at(s))
    }

    pub fn frame(&self, s: f64) -> Frame {
        self.frame_at_theta(self.theta_at(s))
    }

    pub fn frame_at_theta(&self, theta: f64) -> Frame {
        let (sn, cs) = theta.sin_cos();
        Frame {
            position: self.position_at_theta(theta),
            tangent: [-sn, cs],
            normal: [-cs, -sn],
            curvature: 1.0 / self.radius_of_curvature(theta).0,
        }
    }

    pub fn curvature(&self, s: f64) -> f64 {
        1.0 / self.radius_of_curvature(self.theta_at(s)).0
    }

    /// Arclength derivative of the curvature.
    pub fn curvature_derivative(&self, s: f64) -> f64 {
        let (r, dr) = self.radius_of_curvature(self.theta_at(s));
        -dr / (r * r * r)
    }

    pub fn min_radius_of_curvature(&self, samples: usize) -> (f64, f64) {
        (0..samples)
            .map(|j| {
                let t = TWO_PI * j as f64 / samples as f64;
                (self.radius_of_curvature(t).0, t)
            })
            .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc })
    }

    /// ∮ κ ds by the periodic trapezoid rule in arclength.
    pub fn total_curvature(&self, samples: usize) -> f64 {
        let h = self.perimeter / samples as f64;
        (0..samples).map(|j| self.curvature(h * j as f64)).sum::<f64>() * h
    }
}
