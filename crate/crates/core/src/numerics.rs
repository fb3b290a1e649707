//! Shared numerical kernels: quadrature, Chebyshev interpolation, root finding,
//! least squares and averaging windows.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of `f` over [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(c + h * x);
        }
        acc * h
    }

    /// Composite rule with `panels` equal sub-intervals.
    pub fn integrate_composite<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        mut f: F,
    ) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|j| {
                let lo = a + h * j as f64;
                self.integrate(lo, lo + h, &mut f)
            })
            .sum()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        (
            self.nodes.iter().map(|x| c + h * x).collect(),
            self.weights.iter().map(|w| w * h).collect(),
        )
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Trapezoid rule for a `period`-periodic function sampled at `n` points.
pub fn periodic_trapezoid<F: FnMut(f64) -> f64>(period: f64, n: usize, mut f: F) -> f64 {
    let h = period / n as f64;
    (0..n).map(|j| f(h * j as f64)).sum::<f64>() * h
}

/// Chebyshev series on an interval, built from values at Chebyshev–Gauss nodes.
#[derive(Debug, Clone)]
pub struct Chebyshev {
    pub a: f64,
    pub b: f64,
    pub coeffs: Vec<f64>,
}

impl Chebyshev {
    pub fn fit<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> Self {
        let nodes: Vec<f64> = (0..n)
            .map(|j| (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).cos())
            .collect();
        let values: Vec<f64> = nodes
            .iter()
            .map(|t| f(0.5 * (a + b) + 0.5 * (b - a) * t))
            .collect();
        Self::from_values(a, b, &values)
    }

    /// Values are ordered as the nodes cos(π(j+½)/n), j = 0..n.
    pub fn from_values(a: f64, b: f64, values: &[f64]) -> Self {
        let n = values.len();
        let mut coeffs = vec![0.0; n];
        for (k, c) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, v) in values.iter().enumerate() {
                acc += v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos();
            }
            *c = 2.0 * acc / n as f64;
        }
        coeffs[0] *= 0.5;
        Self { a, b, coeffs }
    }

    pub fn nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let t = (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).cos();
                0.5 * (a + b) + 0.5 * (b - a) * t
            })
            .collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.coeffs[0]
    }

    pub fn derivative(&self) -> Self {
        let n = self.coeffs.len();
        if n < 2 {
            return Self { a: self.a, b: self.b, coeffs: vec![0.0] };
        }
        let mut d = vec![0.0; n];
        for k in (1..n).rev() {
            let next = if k + 1 < n { d[k + 1] } else { 0.0 };
            d[k - 1] = next + 2.0 * k as f64 * self.coeffs[k];
        }
        d[0] *= 0.5;
        d.truncate(n - 1);
        let scale = 2.0 / (self.b - self.a);
        for v in &mut d {
            *v *= scale;
        }
        Self { a: self.a, b: self.b, coeffs: d }
    }

    /// Magnitude of the trailing coefficients, a convergence proxy.
    pub fn tail(&self) -> f64 {
        let n = self.coeffs.len();
        self.coeffs[n.saturating_sub(3)..].iter().map(|c| c.abs()).fold(0.0, f64::max)
    }
}

/// Pure bisection on a sign change.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Newton iteration kept inside a sign-change bracket; `f` returns (value, derivative).
pub fn safeguarded_newton<F: FnMut(f64) -> (f64, f64)>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    x0: f64,
    tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let (fa, _) = f(a);
    let (fb, _) = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let neg_at_a = fa < 0.0;
    let mut x = if x0 > a.min(b) && x0 < a.max(b) { x0 } else { 0.5 * (a + b) };
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Some(x);
        }
        if (fx < 0.0) == neg_at_a {
            a = x;
        } else {
            b = x;
        }
        let mut next = x - fx / dfx;
        let lo = a.min(b);
        let hi = a.max(b);
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= tol {
            return Some(next);
        }
        x = next;
    }
    Some(x)
}

/// Weighted least-squares polynomial fit, coefficients in increasing degree
/// together with the parameter covariance estimate.
pub fn weighted_polyfit(xs: &[f64], ys: &[f64], ws: &[f64], degree: usize) -> (Vec<f64>, DMatrix<f64>) {
    let basis: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| (0..=degree).map(|k| x.powi(k as i32)).collect())
        .collect();
    weighted_linear_fit(&basis, ys, ws)
}

/// Weighted least squares for an arbitrary design; rows of `basis` are samples.
pub fn weighted_linear_fit(basis: &[Vec<f64>], ys: &[f64], ws: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = basis.len();
    let p = basis[0].len();
    let a = DMatrix::from_fn(m, p, |i, j| basis[i][j] * ws[i].sqrt());
    let y = DVector::from_fn(m, |i, _| ys[i] * ws[i].sqrt());
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&y, 1e-300).expect("svd solve");
    let resid = &a * &coef - &y;
    let dof = (m as f64 - p as f64).max(1.0);
    let s2 = resid.norm_squared() / dof;
    let ata = a.transpose() * &a;
    let cov = ata.try_inverse().unwrap_or_else(|| DMatrix::zeros(p, p)) * s2;
    (coef.iter().copied().collect(), cov)
}

/// Ordinary least-squares slope and intercept of y against x.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of log y against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_slope(&lx, &ly).0
}

/// Normalized exponential-bump weights for weighted Birkhoff averages.
pub fn bump_weights(n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|j| {
            let t = (j as f64 + 0.5) / n as f64;
            (-1.0 / (t * (1.0 - t))).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Forward DFT of real samples, normalized so that f(θ_j) = Σ c_k e^{ikθ_j}.
pub fn dft_real(samples: &[f64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    for c in &mut buf {
        *c /= n as f64;
    }
    buf
}

/// Inverse of [`dft_real`] on complex data, returning complex samples.
pub fn idft(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut buf = coeffs.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    buf
}

/// Signed wavenumber for FFT slot `j` of an `n`-point transform.
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Reduce an angle to [-π, π).
pub fn wrap_pi(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = (x + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r >= std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let g = GaussLegendre::new(8);
        // degree 15 is the exactness limit
        let v = g.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        let w: f64 = g.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_large_order() {
        let g = GaussLegendre::new(120);
        let v = g.integrate(0.0, std::f64::consts::PI, f64::sin);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn chebyshev_derivative_of_exp() {
        let c = Chebyshev::fit(-0.5, 1.5, 30, f64::exp);
        let d = c.derivative();
        let dd = d.derivative();
        for x in [-0.5, 0.0, 0.7, 1.5] {
            assert!((c.eval(x) - x.exp()).abs() < 1e-13);
            assert!((d.eval(x) - x.exp()).abs() < 1e-11);
            assert!((dd.eval(x) - x.exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_trapezoid_is_spectral() {
        let v = periodic_trapezoid(2.0 * std::f64::consts::PI, 32, |t| (t.cos()).exp());
        // 2π I₀(1)
        assert!((v - 2.0 * std::f64::consts::PI * 1.266_065_877_752_008_4).abs() < 1e-13);
    }

    #[test]
    fn roots() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        let r = safeguarded_newton(|x| (x.cos() - x, -x.sin() - 1.0), 0.0, 1.0, 0.5, 1e-15, 50).unwrap();
        assert!((r.cos() - r).abs() < 1e-14);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_none());
    }

    #[test]
    fn polyfit_recovers_quadratic() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x).collect();
        let ws = vec![1.0; 10];
        let (c, _) = weighted_polyfit(&xs, &ys, &ws, 2);
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-12 && (c[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dft_roundtrip_and_wavenumbers() {
        let n = 16;
        let xs: Vec<f64> = (0..n)
            .map(|j| {
                let t = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                1.0 + (3.0 * t).cos()
            })
            .collect();
        let c = dft_real(&xs);
        assert!((c[0].re - 1.0).abs() < 1e-14);
        assert!((c[3].re - 0.5).abs() < 1e-14 && (c[13].re - 0.5).abs() < 1e-14);
        assert_eq!(wavenumber(13, n), -3);
        let back = idft(&c);
        for (a, b) in back.iter().zip(&xs) {
            assert!((a.re - b).abs() < 1e-13);
        }
    }

    #[test]
    fn wrap_pi_range() {
        assert!((wrap_pi(3.0 * std::f64::consts::PI) + std::f64::consts::PI).abs() < 1e-15);
        assert!((wrap_pi(0.1) - 0.1).abs() < 1e-16);
    }
}
