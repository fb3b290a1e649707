//! Quasi-eigenvalues from a Bohr–Sommerfeld-type quantization of an invariant
//! circle: the strong search for lattice hits of λ·(I, L) and the order-by-order
//! power-series correction of μ with the quantum symbol terms set to zero.

use crate::circles::{find_circle, CircleError, CircleOptions, CircleSeed, DiophantineSpec};
use crate::geometry::BoundaryCurve;
use crate::numerics::Chebyshev;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("(I, L) = ({i}, {l}) lies on a periodic line 2π·{kn}·I = L·{k}")]
    PeriodicLine { i: f64, l: f64, k: i64, kn: i64 },
    #[error("determinant L − ωI = {0} is not positive")]
    DegenerateDeterminant(f64),
    #[error("invalid seed: {0}")]
    InvalidSeed(String),
    #[error("action {i} outside the data interval [{lo}, {hi}]")]
    OutOfRange { i: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Circle(#[from] CircleError),
}

/// Sign in front of the ϑ/4 shift of the second quantization integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaslovSign {
    Plus,
    Minus,
}

impl MaslovSign {
    fn factor(self) -> f64 {
        match self {
            MaslovSign::Plus => 1.0,
            MaslovSign::Minus => -1.0,
        }
    }
}

/// Maslov integers (ϑ₀, ϑ). The default (1, 3) is a placeholder, not a value
/// derived for any particular table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maslov {
    pub theta0: i64,
    pub theta: i64,
    pub sign: MaslovSign,
}

impl Default for Maslov {
    fn default() -> Self {
        Self { theta0: 1, theta: 3, sign: MaslovSign::Plus }
    }
}

impl Maslov {
    pub fn new(theta0: i64, theta: i64) -> Self {
        Self { theta0, theta, sign: MaslovSign::Plus }
    }

    /// Lattice targets (k + ϑ₀/4, 2π(k_n ± ϑ/4)).
    pub fn targets(&self, q: (i64, i64)) -> (f64, f64) {
        (
            q.0 as f64 + self.theta0 as f64 / 4.0,
            2.0 * PI * (q.1 as f64 + self.sign.factor() * self.theta as f64 / 4.0),
        )
    }
}

/// L(I) near the torus: Taylor coefficients [L, L', L''/2!, …] at any action
/// in its domain.
pub trait ActionFunction: Sync {
    fn taylor(&self, i: f64, order: usize) -> Result<Vec<f64>, QuantizeError>;

    fn value(&self, i: f64) -> Result<f64, QuantizeError> {
        Ok(self.taylor(i, 0)?[0])
    }
}

/// Chebyshev interpolant of L on an action interval, with its derivatives.
#[derive(Debug, Clone)]
pub struct ChebyshevAction {
    derivatives: Vec<Chebyshev>,
}

impl ChebyshevAction {
    pub fn new(l: Chebyshev, order: usize) -> Self {
        let mut derivatives = vec![l];
        for _ in 0..order {
            let d = derivatives.last().unwrap().derivative();
            derivatives.push(d);
        }
        Self { derivatives }
    }

    pub fn fit<F: FnMut(f64) -> f64>(lo: f64, hi: f64, nodes: usize, order: usize, f: F) -> Self {
        Self::new(Chebyshev::fit(lo, hi, nodes, f), order)
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.derivatives[0].a, self.derivatives[0].b)
    }

    pub fn max_order(&self) -> usize {
        self.derivatives.len() - 1
    }
}

impl ActionFunction for ChebyshevAction {
    fn taylor(&self, i: f64, order: usize) -> Result<Vec<f64>, QuantizeError> {
        let (lo, hi) = self.interval();
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        if !(i >= lo && i <= hi) {
            return Err(QuantizeError::OutOfRange { i, lo, hi });
        }
        if order > self.max_order() {
            return Err(QuantizeError::InvalidSeed(format!(
                "Taylor order {order} exceeds the {} stored derivatives",
                self.max_order()
            )));
        }
        let mut fact = 1.0;
        Ok((0..=order)
            .map(|n| {
                if n > 0 {
                    fact *= n as f64;
                }
                self.derivatives[n].eval(i) / fact
            })
            .collect())
    }
}

/// Caustic data of a family of invariant circles: I(ω), β(ω) and L(I) = ωI − β.
#[derive(Debug, Clone)]
pub struct CircleFamilyData {
    pub omegas: Vec<f64>,
    pub actions: Vec<f64>,
    pub betas: Vec<f64>,
    pub max_residual: f64,
    pub action: ChebyshevAction,
    /// I(ω) as a Chebyshev series on the frequency interval.
    pub action_of_omega: Chebyshev,
}

impl CircleFamilyData {
    pub fn action_at(&self, omega: f64) -> f64 {
        self.action_of_omega.eval(omega)
    }
}

/// Circles at Chebyshev nodes of [ω_lo, ω_hi], continued from node to node, and
/// L(I) resampled at Chebyshev nodes in I by inverting I(ω).
pub fn circle_family(
    curve: &BoundaryCurve,
    omega_lo: f64,
    omega_hi: f64,
    nodes: usize,
    modes: usize,
    order: usize,
) -> Result<CircleFamilyData, QuantizeError> {
    let spec = DiophantineSpec::new(1e-6, 1.5, modes as u64)?;
    let omegas = Chebyshev::nodes(omega_lo, omega_hi, nodes);
    // continuation runs along increasing ω; values are put back in node order
    let order_idx: Vec<usize> = {
        let mut v: Vec<usize> = (0..nodes).collect();
        v.sort_by(|&a, &b| omegas[a].partial_cmp(&omegas[b]).unwrap());
        v
    };
    let mut actions = vec![0.0; nodes];
    let mut betas = vec![0.0; nodes];
    let mut max_residual: f64 = 0.0;
    let mut seed: Option<(Vec<f64>, Vec<f64>)> = None;
    for &j in &order_idx {
        let mut opts = CircleOptions::new(modes, spec);
        if let Some((c, s)) = seed.take() {
            opts.seed = CircleSeed::Coefficients(c, s);
        }
        let rec = find_circle(curve, omegas[j], &opts)?;
        actions[j] = rec.action;
        betas[j] = rec.beta;
        max_residual = max_residual.max(rec.residual);
        seed = Some((rec.u_cos, rec.u_sin));
    }
    let action_of_omega = Chebyshev::from_values(omega_lo, omega_hi, &actions);
    let beta_of_omega = Chebyshev::from_values(omega_lo, omega_hi, &betas);
    let di = action_of_omega.derivative();
    let (i_lo, i_hi) = (action_of_omega.eval(omega_lo), action_of_omega.eval(omega_hi));
    let (a, b) = (i_lo.min(i_hi), i_lo.max(i_hi));
    let invert = |target: f64| {
        let mut w = omega_lo + (target - i_lo) / (i_hi - i_lo) * (omega_hi - omega_lo);
        for _ in 0..60 {
            let step = (action_of_omega.eval(w) - target) / di.eval(w);
            w -= step;
            if step.abs() < 1e-16 * w.abs().max(1.0) {
                break;
            }
        }
        w
    };
    let l = Chebyshev::fit(a, b, nodes, |i| {
        let w = invert(i);
        w * i - beta_of_omega.eval(w)
    });
    Ok(CircleFamilyData {
        omegas,
        actions,
        betas,
        max_residual,
        action: ChebyshevAction::new(l, order),
        action_of_omega,
    })
}

/// Strong-search hit: lattice point q with its refined λ and joint distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub q: (i64, i64),
    pub lambda: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub maslov: Maslov,
    pub lambda_max: f64,
    pub tol: f64,
    /// Largest |k|, |k_n| tested by the non-periodicity proxy; 0 disables it.
    pub periodic_order: i64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { maslov: Maslov::default(), lambda_max: 1e3, tol: 0.05, periodic_order: 20 }
    }
}

/// Smallest-integer relation 2πk_n I = L k with |k|, |k_n| ≤ order.
pub fn periodic_relation(i: f64, l: f64, order: i64) -> Option<(i64, i64)> {
    let scale = (2.0 * PI * i).abs().max(l.abs());
    for k in -order..=order {
        for kn in 0..=order {
            if (k, kn) == (0, 0) || (kn == 0 && k < 0) {
                continue;
            }
            if (2.0 * PI * kn as f64 * i - l * k as f64).abs() <= 1e-12 * scale * (k.abs() + kn) as f64 {
                return Some((k, kn));
            }
        }
    }
    None
}

/// Joint distance of λ·(I, L) from the Maslov-shifted lattice point q.
fn joint_distance(i: f64, l: f64, lambda: f64, q: (i64, i64), m: &Maslov) -> f64 {
    let (t0, t1) = m.targets(q);
    (lambda * i - t0).abs().max((lambda * l - t1).abs() / (2.0 * PI))
}

/// λ ∈ [1, λmax] with λI − ϑ₀/4 and (λL ∓ πϑ/2)/2π both within tol of
/// integers. Candidates are the exact hits of either coordinate; each is
/// refined by least squares on the two conditions.
pub fn strong_search(i: f64, l: f64, opts: &SearchOptions) -> Result<Vec<SearchHit>, QuantizeError> {
    if !(i.is_finite() && l.is_finite()) || (i == 0.0 && l == 0.0) {
        return Err(QuantizeError::InvalidSeed(format!("(I, L) = ({i}, {l})")));
    }
    if opts.periodic_order > 0 {
        if let Some((k, kn)) = periodic_relation(i, l, opts.periodic_order) {
            return Err(QuantizeError::PeriodicLine { i, l, k, kn });
        }
    }
    if !(opts.tol > 0.0) || opts.lambda_max < 1.0 {
        return Ok(Vec::new());
    }
    let m = &opts.maslov;
    let shift0 = m.theta0 as f64 / 4.0;
    let shift1 = m.sign.factor() * m.theta as f64 / 4.0;
    let rate = [i, l / (2.0 * PI)];
    let shift = [shift0, shift1];
    let mut hits: Vec<SearchHit> = Vec::new();
    for axis in 0..2 {
        if rate[axis] == 0.0 {
            continue;
        }
        let ends = [rate[axis] - shift[axis], rate[axis] * opts.lambda_max - shift[axis]];
        let (lo, hi) = (ends[0].min(ends[1]).ceil() as i64, ends[0].max(ends[1]).floor() as i64);
        for n in lo..=hi {
            let lambda = (n as f64 + shift[axis]) / rate[axis];
            let q = (
                (lambda * rate[0] - shift0).round() as i64,
                (lambda * rate[1] - shift1).round() as i64,
            );
            let (t0, t1) = m.targets(q);
            let t1 = t1 / (2.0 * PI);
            let refined = (t0 * rate[0] + t1 * rate[1]) / (rate[0] * rate[0] + rate[1] * rate[1]);
            let lam = if refined >= 1.0 && refined <= opts.lambda_max { refined } else { lambda };
            let d = joint_distance(i, l, lam, q, m);
            if d < opts.tol && !hits.iter().any(|h| h.q == q) {
                hits.push(SearchHit { q, lambda: lam, distance: d });
            }
        }
    }
    hits.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
    Ok(hits)
}

/// Seed of the recursion: lattice point, base quasi-frequency and Maslov data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSeed {
    pub q: (i64, i64),
    pub mu0: f64,
    pub maslov: Maslov,
}

impl QuantizationSeed {
    /// Nearest lattice point to μ⁰·(I, L).
    pub fn nearest(i: f64, l: f64, mu0: f64, maslov: Maslov) -> Self {
        let k = (mu0 * i - maslov.theta0 as f64 / 4.0).round() as i64;
        let kn = (mu0 * l / (2.0 * PI) - maslov.sign.factor() * maslov.theta as f64 / 4.0).round() as i64;
        Self { q: (k, kn), mu0, maslov }
    }

    pub fn norm(&self) -> f64 {
        ((self.q.0 * self.q.0 + self.q.1 * self.q.1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationRecord {
    pub seed: QuantizationSeed,
    pub order: usize,
    pub action: f64,
    pub lagrangian: f64,
    pub omega: f64,
    /// D = L(I) − ωI.
    pub determinant: f64,
    pub eps: f64,
    pub w0: f64,
    pub v0: f64,
    /// c₀ … c_M.
    pub c: Vec<f64>,
    /// b₀ … b_{M+1}.
    pub b: Vec<f64>,
    pub mu: f64,
    pub zeta: f64,
    pub first_residual: f64,
    pub second_residual: f64,
}

/// Solution of b + cI = W, Lc + ωb = V by elimination.
pub fn solve_order(i: f64, l: f64, omega: f64, w: f64, v: f64) -> Result<(f64, f64), QuantizeError> {
    let d = l - omega * i;
    if !(d.abs() >= 1e-12) {
        return Err(QuantizeError::DegenerateDeterminant(d));
    }
    let c = (v - omega * w) / d;
    Ok((c, w - c * i))
}

/// Truncated power-series product, keeping coefficients of ε⁰ … ε^{n−1}.
fn series_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    for (p, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (r, &y) in b.iter().enumerate().take(n - p) {
            out[p + r] += x * y;
        }
    }
    out
}

/// Σ_n taylor[n]·δⁿ for a series δ without constant term.
fn series_compose(taylor: &[f64], delta: &[f64]) -> Vec<f64> {
    let n = delta.len();
    let mut out = vec![0.0; n];
    let mut power = vec![0.0; n];
    power[0] = 1.0;
    for (k, &t) in taylor.iter().enumerate() {
        if k > 0 {
            power = series_mul(&power, delta);
        }
        for (o, p) in out.iter_mut().zip(&power) {
            *o += t * p;
        }
    }
    out
}

/// Order-by-order solve of μζ = k + ϑ₀/4, μL(ζ) = 2π(k_n ± ϑ/4) in powers of
/// ε = 1/μ⁰, with μ = μ⁰ + Σ c_j ε^j and ζ = I + Σ b_j ε^{j+1}.
pub fn quasi_eigen(
    seed: &QuantizationSeed,
    lag: &dyn ActionFunction,
    action: f64,
    order: usize,
) -> Result<QuantizationRecord, QuantizeError> {
    if !(seed.mu0 >= 1.0) {
        return Err(QuantizeError::InvalidSeed(format!("μ⁰ = {} < 1", seed.mu0)));
    }
    let taylor = lag.taylor(action, order + 2)?;
    let (l, omega) = (taylor[0], taylor[1]);
    let d = l - omega * action;
    if !(d >= 1e-12) {
        return Err(QuantizeError::DegenerateDeterminant(d));
    }
    let eps = 1.0 / seed.mu0;
    let (t0, t1) = seed.maslov.targets(seed.q);
    let w0 = t0 - seed.mu0 * action;
    let v0 = t1 - seed.mu0 * l;
    // series in ε of length order + 3 covers the b_{M+1} term
    let len = order + 3;
    let mut m = vec![0.0; len];
    m[0] = 1.0;
    let mut delta = vec![0.0; len];
    let mut c = Vec::with_capacity(order + 1);
    let mut b = Vec::with_capacity(order + 2);
    for j in 0..=order {
        let mut zeta = delta.clone();
        zeta[0] = action;
        let first = series_mul(&m, &zeta);
        let second = series_mul(&m, &series_compose(&taylor, &delta));
        let (w, v) = if j == 0 { (w0, v0) } else { (-first[j + 1], -second[j + 1]) };
        let (cj, bj) = solve_order(action, l, omega, w, v)?;
        m[j + 1] = cj;
        delta[j + 1] = bj;
        c.push(cj);
        b.push(bj);
    }
    let mu = seed.mu0 + c.iter().rev().fold(0.0, |acc, &cj| acc * eps + cj);
    // b_{M+1} closes the first equation exactly: εμ·ζ = ε(k + ϑ₀/4)
    let zeta = t0 / mu;
    let partial = action + b.iter().enumerate().map(|(j, bj)| bj * eps.powi(j as i32 + 1)).sum::<f64>();
    b.push((zeta - partial) / eps.powi(order as i32 + 2));
    let mut rec = QuantizationRecord {
        seed: *seed,
        order,
        action,
        lagrangian: l,
        omega,
        determinant: d,
        eps,
        w0,
        v0,
        c,
        b,
        mu,
        zeta,
        first_residual: 0.0,
        second_residual: 0.0,
    };
    let (r1, r2) = residual_check(&rec, lag)?;
    rec.first_residual = r1;
    rec.second_residual = r2;
    Ok(rec)
}

/// (μζ − (k + ϑ₀/4), μL(ζ) − 2π(k_n ± ϑ/4)) with ζ = (k + ϑ₀/4)/μ.
pub fn residual_check(rec: &QuantizationRecord, lag: &dyn ActionFunction) -> Result<(f64, f64), QuantizeError> {
    let (t0, t1) = rec.seed.maslov.targets(rec.seed.q);
    let zeta = t0 / rec.mu;
    Ok(((rec.mu * zeta - t0).abs(), (rec.mu * lag.value(zeta)? - t1).abs()))
}

/// Records for many seeds at once.
pub fn quasi_eigen_batch(
    seeds: &[QuantizationSeed],
    lag: &dyn ActionFunction,
    action: f64,
    order: usize,
) -> Vec<Result<QuantizationRecord, QuantizeError>> {
    seeds.par_iter().map(|s| quasi_eigen(s, lag, action, order)).collect()
}
