use kamlab::billiard::PhasePoint;
use kamlab::circles::{
    birkhoff_beta, bnf_identity_residual, find_circle, rotation_number, AveragingScheme, CircleOptions, CircleSeed,
    DiophantineSpec,
};
use kamlab::geometry::make_ellipse;
use kamlab::liouville::{caustic_rotation, ellipse_caustic_level, ellipse_profile};

fn vertex_level(p: f64) -> f64 {
    // s = 0 is the vertex (2, 0); the tangent there is (0, 1)
    ellipse_caustic_level(2.0, 1.0, [2.0, 0.0], [-(1.0 - p * p).sqrt(), p])
}

#[test]
fn billiard_rotation_matches_liouville_caustic_rotation() {
    let curve = make_ellipse(2.0, 1.0).unwrap();
    let profile = ellipse_profile(2.0, 1.0).unwrap();
    for p in [0.3, 0.55, 0.8] {
        let h = vertex_level(p);
        let predicted = caustic_rotation(&profile, h).unwrap();
        let measured = rotation_number(&curve, PhasePoint::new(0.0, p), 20_000, AveragingScheme::Weighted).unwrap();
        assert!((predicted - measured.omega).abs() < 1e-8, "p = {p}: {predicted} vs {}", measured.omega);
    }
}

#[test]
fn ellipse_circle_beta_matches_birkhoff_average() {
    let curve = make_ellipse(2.0, 1.0).unwrap();
    let spec = DiophantineSpec::new(0.05, 1.5, 1000).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let omega = 2.0 * std::f64::consts::PI / (phi * phi);
    let rec = find_circle(&curve, omega, &CircleOptions::new(48, spec)).unwrap();
    let birkhoff = birkhoff_beta(&curve, rec.point(0.0), 100_000, AveragingScheme::Weighted).unwrap();
    assert!((rec.beta - birkhoff).abs() < 1e-7, "{} vs {birkhoff}, residual {}", rec.beta, rec.residual);
}

#[test]
fn ellipse_bnf_identity_at_three_levels() {
    let curve = make_ellipse(2.0, 1.0).unwrap();
    let spec = DiophantineSpec::new(0.01, 1.5, 300).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let w0 = 2.0 * std::f64::consts::PI / (phi * phi) - 0.3;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut recs = Vec::new();
    for h in [-1e-3, 0.0, 1e-3] {
        let mut o = CircleOptions::new(40, spec);
        if let Some((c, s)) = prev.clone() {
            o.seed = CircleSeed::Coefficients(c, s);
        }
        let r = find_circle(&curve, w0 + h, &o).unwrap();
        prev = Some((r.u_cos.clone(), r.u_sin.clone()));
        recs.push(r);
    }
    let rep = bnf_identity_residual(&recs).unwrap();
    assert!(rep.residual < 1e-5, "{rep:?}");
}

#[test]
fn melrose_routes_agree_on_ellipse() {
    use kamlab::melrose::{boundary_frequencies, compare, interpolating_fit, FitOptions};
    let curve = make_ellipse(2.0, 1.0).unwrap();
    let rep = compare(&curve, &boundary_frequencies(0.2, 8), 48, &FitOptions::default()).unwrap();
    assert!(rep.first_residual < 1e-3, "{rep:?}");
    assert!(rep.length_residual < 1e-9);
    assert!(rep.curvature.first < 0.0);
    // the second invariant differs from the curvature formula by a fixed factor
    assert!((rep.fit.second / rep.curvature.second - 32.0).abs() < 1e-2, "{rep:?}");

    // truncation-dominated low-degree fits improve as the window shrinks
    let spec = DiophantineSpec::new(1e-5, 1.5, 48).unwrap();
    let exact = rep.curvature.first;
    let residuals: Vec<f64> = [0.2, 0.14, 0.1]
        .iter()
        .map(|&wmax| {
            let recs: Vec<_> = boundary_frequencies(wmax, 6)
                .into_iter()
                .map(|w| find_circle(&curve, w, &CircleOptions::new(48, spec)).unwrap())
                .collect();
            let fit = interpolating_fit(&recs, &FitOptions { degree: 1, max_omega: 0.2 }).unwrap();
            (fit.first - exact).abs()
        })
        .collect();
    assert!(residuals[0] > residuals[1] && residuals[1] > residuals[2], "{residuals:?}");
}
