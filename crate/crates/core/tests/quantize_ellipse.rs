use kamlab::geometry::make_ellipse;
use kamlab::numerics::linear_slope;
use kamlab::quantize::{circle_family, quasi_eigen, strong_search, ActionFunction, Maslov, QuantizationSeed, SearchOptions};
use std::f64::consts::PI;

fn golden_omega() -> f64 {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    2.0 * PI / (phi * phi) - 0.3
}

#[test]
fn ellipse_caustic_quantization() {
    let curve = make_ellipse(2.0, 1.0).unwrap();
    let w0 = golden_omega();
    let fam = circle_family(&curve, w0 - 0.2, w0 + 0.2, 28, 64, 5).unwrap();
    assert!(fam.max_residual < 1e-11);

    // determinant against the circle's own β at a node
    let (wj, ij, bj) = (fam.omegas[7], fam.actions[7], fam.betas[7]);
    let t = fam.action.taylor(ij, 1).unwrap();
    assert!((t[1] - wj).abs() < 1e-8);
    assert!((t[0] - t[1] * ij + bj).abs() < 1e-8, "D {} vs −β {}", t[0] - t[1] * ij, -bj);

    let i = fam.action_at(w0);
    let l = fam.action.value(i).unwrap();
    for m in [1usize, 2] {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for lvl in 0..5 {
            let base = 400.0 * 2f64.powi(lvl);
            let worst = (0..64)
                .map(|t| {
                    let seed = QuantizationSeed::nearest(i, l, base * (1.0 + 0.0031 * t as f64), Maslov::default());
                    quasi_eigen(&seed, &fam.action, i, m).unwrap().second_residual
                })
                .fold(0.0, f64::max);
            xs.push(base.ln());
            ys.push(worst.ln());
        }
        let (slope, _) = linear_slope(&xs, &ys);
        assert!((-slope - (m as f64 + 1.0)).abs() < 0.3, "M = {m}: slope {slope}");
    }

    // seeds from the strong search satisfy the quantization bound
    let hits = strong_search(i, l, &SearchOptions { lambda_max: 2e3, tol: 0.1, ..Default::default() }).unwrap();
    assert!(!hits.is_empty());
    for h in hits.iter().filter(|h| h.lambda > 200.0) {
        let seed = QuantizationSeed { q: h.q, mu0: h.lambda, maslov: Maslov::default() };
        let rec = quasi_eigen(&seed, &fam.action, i, 2).unwrap();
        assert!(rec.w0.abs() < 0.1 && rec.v0.abs() < 2.0 * PI * 0.1);
        assert!(rec.c[0].abs() < 0.3, "{rec:?}");
        assert!(rec.second_residual < 1e-6, "{rec:?}");
    }
}
