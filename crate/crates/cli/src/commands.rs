//! One function per subcommand: run the experiment, collect tables and checks.

use crate::args::*;
use crate::output::{Cell, Check, Report, Table};
use kamlab::billiard::{iterate, PhasePoint};
use kamlab::circles::{
    birkhoff_beta, bnf_identity_residual, find_circle, is_diophantine, measure_omega_kappa, AveragingScheme, CircleOptions,
    CircleSeed, DiophantineSpec, InvariantCircleRecord,
};
use kamlab::geometry::{make_circle, make_ellipse, make_support_curve, BoundaryCurve};
use kamlab::kam::{
    build_schedule, convergence_order, kam_step, regularity_test_function, smoothing_rate, CosineChain, Ell0Convention,
    KamStepParams, ScheduleParams, SmoothingKernel,
};
use kamlab::liouville::{
    actions_table, ellipse_profile, ellipse_profile_from, radon, radon_moments, resonant_levels, twist_report,
    LiouvilleProfile, SymmetryMode,
};
use kamlab::melrose::{boundary_frequencies, compare, FitOptions};
use kamlab::numerics::linear_slope;
use kamlab::orbits::{angular_seed, classify, find_periodic, twist_at_elliptic, PeriodicOptions, PeriodicOrbit, TwistOptions};
use kamlab::quantize::{
    circle_family, quasi_eigen, strong_search, ActionFunction, ChebyshevAction, Maslov, MaslovSign, QuantizationSeed,
    SearchOptions,
};
use serde_json::json;
use std::f64::consts::PI;
use std::fmt::Display;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{context}: {message}")]
    Module { context: String, message: String },
    #[error("invalid argument {field}: {message}")]
    Argument { field: String, message: String },
}

fn ctx<E: Display>(context: &'static str) -> impl Fn(E) -> CommandError {
    move |e| CommandError::Module { context: context.into(), message: e.to_string() }
}

fn bad(field: &str, message: impl Into<String>) -> CommandError {
    CommandError::Argument { field: field.into(), message: message.into() }
}

type Outcome = Result<Report, CommandError>;

fn golden_rotation() -> f64 {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    2.0 * PI / (phi * phi)
}

fn build_curve(c: &CurveArgs) -> Result<BoundaryCurve, CommandError> {
    let made = if let Some(ab) = &c.ellipse {
        make_ellipse(ab[0], ab[1])
    } else if let Some(r) = c.circle {
        make_circle(r)
    } else if let Some(h0) = c.support {
        make_support_curve(h0, c.cos.clone(), c.sin.clone())
    } else if let Some(path) = &c.curve {
        let doc = std::fs::read_to_string(path).map_err(|e| bad("curve", format!("{}: {e}", path.display())))?;
        BoundaryCurve::from_json(&doc)
    } else {
        make_ellipse(2.0, 1.0)
    };
    made.map_err(ctx("curve"))
}

fn build_profile(p: &ProfileArgs) -> Result<LiouvilleProfile, CommandError> {
    match (&p.ellipse, p.eps, p.n) {
        (Some(ab), _, _) => ellipse_profile(ab[0], ab[1]),
        (None, Some(eps), Some(n)) => ellipse_profile_from(eps, n),
        _ => ellipse_profile(2.0, 1.0),
    }
    .map_err(ctx("profile"))
}

fn value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn run(family: &Family, seed: u64) -> Outcome {
    match family {
        Family::Billiard(BilliardCmd::Orbit(a)) => billiard_orbit(a),
        Family::Billiard(BilliardCmd::Iterate(a)) => billiard_iterate(a),
        Family::Orbits(OrbitsCmd::Find(a)) => orbits_find(a),
        Family::Orbits(OrbitsCmd::Classify(a)) => orbits_classify(a),
        Family::Orbits(OrbitsCmd::Twist(a)) => orbits_twist(a),
        Family::Circles(CirclesCmd::Find(a)) => circles_find(a),
        Family::Circles(CirclesCmd::Beta(a)) => circles_beta(a),
        Family::Circles(CirclesCmd::Measure(a)) => circles_measure(a, seed),
        Family::Liouville(LiouvilleCmd::Twist(a)) => liouville_twist(a),
        Family::Liouville(LiouvilleCmd::Radon(a)) => liouville_radon(a),
        Family::Liouville(LiouvilleCmd::Resonances(a)) => liouville_resonances(a),
        Family::Liouville(LiouvilleCmd::Actions(a)) => liouville_actions(a),
        Family::Melrose(MelroseCmd::Compare(a)) => melrose_compare(a),
        Family::Kam(KamCmd::Step(a)) => kam_step_cmd(a),
        Family::Kam(KamCmd::Iterate(a)) => kam_iterate(a),
        Family::Kam(KamCmd::Schedule(a)) => kam_schedule(a),
        Family::Kam(KamCmd::Smooth(a)) => kam_smooth(a),
        Family::Quantize(QuantizeCmd::Search(a)) => quantize_search(a),
        Family::Quantize(QuantizeCmd::Solve(a)) => quantize_solve(a),
    }
}

fn billiard_orbit(a: &BilliardOrbit) -> Outcome {
    let curve = build_curve(&a.curve)?;
    let seg = iterate(&curve, PhasePoint::new(a.s, a.p), a.n).map_err(ctx("billiard orbit"))?;
    let mut t = Table::new("orbit", &["j", "s", "p", "chord"]);
    for (j, s, p, chord) in seg.rows() {
        t.push(vec![j.into(), s.into(), p.into(), chord.map(Cell::F).unwrap_or(Cell::S(String::new()))]);
    }
    let refl = seg.reflection_residual(&curve);
    Ok(Report {
        body: json!({
            "curve": value(curve.spec()),
            "perimeter": curve.perimeter(),
            "start": value(&seg.points[0]),
            "end": value(seg.points.last().unwrap()),
            "total_length": seg.total_length(),
            "reflection_residual": refl,
        }),
        tables: vec![t],
        checks: vec![Check::le("reflection_residual", refl, 1e-9)],
    })
}

fn billiard_iterate(a: &BilliardIterate) -> Outcome {
    let curve = build_curve(&a.curve)?;
    if a.orbits == 0 || !(a.p_min > -1.0 && a.p_max < 1.0 && a.p_min <= a.p_max) {
        return Err(bad("p-min/p-max", "need −1 < p-min ≤ p-max < 1 and at least one orbit"));
    }
    let mut t = Table::new("portrait", &["orbit", "j", "s", "p"]);
    let mut worst: f64 = 0.0;
    for o in 0..a.orbits {
        let p = if a.orbits == 1 { a.p_min } else { a.p_min + (a.p_max - a.p_min) * o as f64 / (a.orbits - 1) as f64 };
        let seg = iterate(&curve, PhasePoint::new(0.0, p), a.n).map_err(ctx("billiard iterate"))?;
        worst = worst.max(seg.reflection_residual(&curve));
        for (j, pt) in seg.points.iter().enumerate() {
            t.push(vec![o.into(), j.into(), pt.s.into(), pt.p.into()]);
        }
    }
    Ok(Report {
        body: json!({"curve": value(curve.spec()), "orbits": a.orbits, "iterates": a.n, "reflection_residual": worst}),
        tables: vec![t],
        checks: vec![Check::le("reflection_residual", worst, 1e-9)],
    })
}

fn periodic(a: &OrbitArgs) -> Result<(BoundaryCurve, PeriodicOrbit), CommandError> {
    let curve = build_curve(&a.curve)?;
    let seed = angular_seed(&curve, a.period, a.winding, a.theta0);
    let orbit = find_periodic(&curve, a.period, a.winding, &seed, &PeriodicOptions::default()).map_err(ctx("orbits find"))?;
    Ok((curve, orbit))
}

fn vertex_table(orbit: &PeriodicOrbit) -> Table {
    let mut t = Table::new("vertices", &["j", "s"]);
    for (j, s) in orbit.vertices.iter().enumerate() {
        t.push(vec![j.into(), (*s).into()]);
    }
    t
}

fn orbits_find(a: &OrbitArgs) -> Outcome {
    let (_, orbit) = periodic(a)?;
    Ok(Report {
        body: json!({"orbit": value(&orbit)}),
        tables: vec![vertex_table(&orbit)],
        checks: vec![Check::le("length_gradient", orbit.residual, 1e-9), Check::le("closure", orbit.closure, 1e-8)],
    })
}

fn orbits_classify(a: &OrbitArgs) -> Outcome {
    let (curve, orbit) = periodic(a)?;
    let rep = classify(&curve, &orbit, a.order);
    Ok(Report {
        body: json!({"orbit": value(&orbit), "classification": value(&rep)}),
        tables: vec![vertex_table(&orbit)],
        checks: vec![Check::le("determinant_defect", (rep.determinant - 1.0).abs(), 1e-8)],
    })
}

fn orbits_twist(a: &OrbitArgs) -> Outcome {
    let (curve, orbit) = periodic(a)?;
    let opts = TwistOptions { allow_resonant: a.allow_resonant, ..Default::default() };
    let rep = twist_at_elliptic(&curve, &orbit, &opts).map_err(ctx("orbits twist"))?;
    let mut t = Table::new("rotation_fit", &["action", "rotation"]);
    for [i, r] in &rep.fit_points {
        t.push(vec![(*i).into(), (*r).into()]);
    }
    let mut checks = Vec::new();
    if let Some(cr) = rep.cross_residual {
        checks.push(Check::le("route_agreement", cr, rep.cross_tolerance));
    }
    Ok(Report { body: json!({"orbit": value(&orbit), "twist": value(&rep)}), tables: vec![t], checks })
}

fn circle(curve: &BoundaryCurve, a: &CircleArgs, omega: f64, seed: CircleSeed) -> Result<InvariantCircleRecord, CommandError> {
    let spec = DiophantineSpec::new(a.kappa, a.tau, a.modes as u64).map_err(ctx("circles"))?;
    let mut opts = CircleOptions::new(a.modes, spec);
    opts.seed = seed;
    find_circle(curve, omega, &opts).map_err(ctx("circles find"))
}

fn coefficient_table(rec: &InvariantCircleRecord) -> Table {
    let mut t = Table::new("fourier", &["k", "u_cos", "u_sin", "v_cos", "v_sin"]);
    for k in 0..rec.u_cos.len() {
        t.push(vec![(k + 1).into(), rec.u_cos[k].into(), rec.u_sin[k].into(), rec.v_cos[k].into(), rec.v_sin[k].into()]);
    }
    t
}

fn circles_find(a: &CircleArgs) -> Outcome {
    let curve = build_curve(&a.curve)?;
    let omega = a.omega.unwrap_or_else(golden_rotation);
    let rec = circle(&curve, a, omega, CircleSeed::Auto)?;
    Ok(Report {
        body: json!({"curve": value(curve.spec()), "circle": value(&rec)}),
        tables: vec![coefficient_table(&rec)],
        checks: vec![Check::le("conjugacy_residual", rec.residual, 1e-10)],
    })
}

fn circles_beta(a: &CircleBetaArgs) -> Outcome {
    let c = &a.circle;
    let curve = build_curve(&c.curve)?;
    let omega = c.omega.unwrap_or_else(golden_rotation);
    let mid = circle(&curve, c, omega, CircleSeed::Auto)?;
    let mut recs = Vec::new();
    for h in [-a.spacing, a.spacing] {
        recs.push(circle(&curve, c, omega + h, CircleSeed::Coefficients(mid.u_cos.clone(), mid.u_sin.clone()))?);
    }
    recs.insert(1, mid.clone());
    let bnf = bnf_identity_residual(&recs).map_err(ctx("circles beta"))?;
    let birkhoff = birkhoff_beta(&curve, mid.point(0.0), a.iterations, AveragingScheme::Weighted).map_err(ctx("circles beta"))?;
    let mut t = Table::new("records", &["omega", "beta", "action", "residual"]);
    for r in &recs {
        t.push(vec![r.omega.into(), r.beta.into(), r.action.into(), r.residual.into()]);
    }
    Ok(Report {
        body: json!({
            "omega": omega,
            "beta_conjugacy": mid.beta,
            "beta_birkhoff": birkhoff,
            "iterations": a.iterations,
            "bnf_identity": value(&bnf),
        }),
        tables: vec![t],
        checks: vec![
            Check::le("beta_agreement", (mid.beta - birkhoff).abs(), a.tol),
            Check::le("dbeta_domega_minus_action", bnf.residual, 1e-5),
        ],
    })
}

fn circles_measure(a: &MeasureArgs, seed: u64) -> Outcome {
    let spec = DiophantineSpec::new(a.kappa, a.tau, a.kmax).map_err(ctx("circles measure"))?;
    if !(a.hi > a.lo) || a.samples == 0 {
        return Err(bad("lo/hi", "need lo < hi and samples > 0"));
    }
    let fraction = measure_omega_kappa((a.lo, a.hi), &spec, a.samples, seed);
    let golden = is_diophantine(golden_rotation(), &spec);
    Ok(Report {
        body: json!({"interval": [a.lo, a.hi], "spec": value(&spec), "samples": a.samples, "seed": seed,
                     "excluded_fraction": fraction, "golden_rotation": value(&golden)}),
        tables: vec![],
        checks: vec![Check::flag("fraction_in_unit_interval", (0.0..=1.0).contains(&fraction))],
    })
}

fn liouville_twist(a: &ProfileArgs) -> Outcome {
    let profile = build_profile(a)?;
    let rep = twist_report(&profile).map_err(ctx("liouville twist"))?;
    let mut checks = vec![Check::flag("twisted", rep.twisted)];
    if let Some(cf) = rep.closed_form {
        checks.push(Check::le("dk_di_vs_closed_form", (rep.numerical.dk_di - cf.dk_di).abs(), 1e-6));
        checks.push(Check::le(
            "d2k_di2_relative_vs_closed_form",
            ((rep.numerical.d2k_di2 - cf.d2k_di2) / cf.d2k_di2).abs(),
            1e-4,
        ));
    }
    if let Some(ig) = rep.integral {
        checks.push(Check::le("integral_route_dk_di", (ig.dk_di - rep.numerical.dk_di).abs(), 1e-8));
    }
    Ok(Report { body: json!({"ellipse": profile.ellipse_parameters(), "twist": value(&rep)}), tables: vec![], checks })
}

fn liouville_radon(a: &RadonArgs) -> Outcome {
    let profile = build_profile(&a.profile)?;
    let j = a.harmonic as f64;
    let k = move |x: f64| (2.0 * PI * j * x).cos();
    let qn = profile.q_boundary();
    let mut t = Table::new("radon", &["h", "radon"]);
    for l in 1..=a.levels {
        let h = qn * (1.0 - l as f64 / (a.levels + 1) as f64);
        t.push(vec![h.into(), radon(&profile, &k, h).map_err(ctx("liouville radon"))?.into()]);
    }
    let moments = radon_moments(&profile, &k, a.moments, SymmetryMode::Project).map_err(ctx("liouville radon"))?;
    // linearity on the sampled levels
    let h = 0.5 * qn;
    let two = |x: f64| 2.0 * k(x) + (2.0 * PI * x).cos().powi(2);
    let lin = (radon(&profile, &two, h).map_err(ctx("liouville radon"))?
        - 2.0 * radon(&profile, &k, h).map_err(ctx("liouville radon"))?
        - radon(&profile, &|x: f64| (2.0 * PI * x).cos().powi(2), h).map_err(ctx("liouville radon"))?)
    .abs();
    Ok(Report {
        body: json!({"harmonic": a.harmonic, "moments": value(&moments), "linearity_defect": lin}),
        tables: vec![t],
        checks: vec![Check::le("linearity_defect", lin, 1e-12)],
    })
}

fn liouville_resonances(a: &ResonanceArgs) -> Outcome {
    let levels = resonant_levels(a.eps, a.n_max);
    let mut t = Table::new("resonances", &["rho", "n", "residual"]);
    for l in &levels {
        t.push(vec![l.rho.into(), l.n.into(), l.residual.into()]);
    }
    let worst = levels.iter().map(|l| l.residual.abs()).fold(0.0, f64::max);
    Ok(Report {
        body: json!({"eps": a.eps, "levels": value(&levels)}),
        tables: vec![t],
        checks: vec![Check::flag("five_levels", levels.len() == 5), Check::le("equation_residual", worst, 1e-10)],
    })
}

fn liouville_actions(a: &ActionsArgs) -> Outcome {
    let profile = build_profile(&a.profile)?;
    if a.levels == 0 {
        return Err(bad("levels", "need at least one level"));
    }
    let a0 = profile.alpha0();
    let hs: Vec<f64> = (1..=a.levels).map(|j| a0 * j as f64 / a.levels as f64).collect();
    let rows = actions_table(&profile, &hs).map_err(ctx("liouville actions"))?;
    let mut t = Table::new("actions", &["h", "K", "I", "rho"]);
    for r in &rows {
        t.push(r.iter().map(|&x| Cell::F(x)).collect());
    }
    let last = rows.last().unwrap()[2].abs();
    Ok(Report {
        body: json!({"alpha0": a0, "levels": a.levels}),
        tables: vec![t],
        checks: vec![Check::le("action_vanishes_at_alpha0", last, 1e-10)],
    })
}

fn melrose_compare(a: &MelroseArgs) -> Outcome {
    let curve = build_curve(&a.curve)?;
    let omegas = boundary_frequencies(a.omega_max, a.count);
    let opts = FitOptions { degree: a.degree, max_omega: a.omega_max };
    let rep = compare(&curve, &omegas, a.modes, &opts).map_err(ctx("melrose compare"))?;
    let mut t = Table::new("omegas", &["omega"]);
    for w in &rep.omegas {
        t.push(vec![(*w).into()]);
    }
    Ok(Report {
        body: json!({"curve": value(curve.spec()), "report": value(&rep)}),
        tables: vec![t],
        checks: vec![
            Check::le("first_invariant_relative", rep.first_residual, 2e-3),
            Check::le("circle_residual", rep.max_circle_residual, 1e-9),
        ],
    })
}

fn chain(a: &KamStepArgs) -> CosineChain {
    let mut c = CosineChain {
        amplitude: a.amplitude,
        coupling: a.coupling,
        grid: a.grid,
        k0: a.truncation,
        sigma: a.sigma,
        eta: a.eta,
        s0: a.s,
        r0: a.r,
        ..Default::default()
    };
    if let Some(w) = a.omega {
        c.omega = w;
    }
    c
}

fn kam_step_cmd(a: &KamStepArgs) -> Outcome {
    let c = chain(a);
    let h = c.hamiltonian().map_err(ctx("kam step"))?;
    let params = KamStepParams { sigma: c.sigma, eta: c.eta, ..Default::default() };
    let res = kam_step(&h, &params).map_err(ctx("kam step"))?;
    let mut t = Table::new("conditions", &["name", "lhs", "rhs", "holds"]);
    for cond in &res.smallness {
        t.push(vec![cond.name.as_str().into(), cond.lhs.into(), cond.rhs.into(), cond.holds.into()]);
    }
    Ok(Report {
        body: json!({
            "setup": value(&c),
            "eps": res.eps,
            "eps_next": res.eps_next,
            "energy_shift": res.energy_shift,
            "frequency_shift": res.frequency_shift,
            "generator_mean": res.generator_mean,
            "homological_residual": res.homological_residual,
            "symplectic_defect": res.symplectic_defect,
            "diophantine_margin": res.diophantine_margin,
            "bound_constant": res.bound_constant,
            "flow": value(&res.flow),
            "truncation": res.k_used,
        }),
        tables: vec![t],
        checks: vec![
            Check::le("homological_residual", res.homological_residual, 1e-12),
            Check::le("symplectic_defect", res.symplectic_defect, 1e-8),
        ],
    })
}

fn kam_iterate(a: &KamIterateArgs) -> Outcome {
    let c = chain(&a.step);
    let rows = c.run(a.steps).map_err(ctx("kam iterate"))?;
    let order = convergence_order(&rows);
    let mut t = Table::new("steps", &["j", "eps", "eps_next", "s", "r", "homological_residual", "symplectic_defect"]);
    for r in &rows {
        t.push(vec![
            r.j.into(),
            r.eps.into(),
            r.eps_next.into(),
            r.s.into(),
            r.r.into(),
            r.homological_residual.into(),
            r.symplectic_defect.into(),
        ]);
    }
    let hom = rows.iter().map(|r| r.homological_residual).fold(0.0, f64::max);
    let sym = rows.iter().map(|r| r.symplectic_defect).fold(0.0, f64::max);
    Ok(Report {
        body: json!({"setup": value(&c), "steps": a.steps, "convergence_order": order, "rows": value(&rows)}),
        tables: vec![t],
        checks: vec![Check::le("homological_residual", hom, 1e-12), Check::le("symplectic_defect", sym, 1e-8)],
    })
}

fn kam_schedule(a: &ScheduleArgs) -> Outcome {
    let p = ScheduleParams {
        n: a.dim,
        tau: a.tau,
        theta: a.theta,
        theta0: a.theta0,
        theta1: a.theta1,
        sigma0: a.sigma0,
        e0: a.e0,
        big_c0: a.big_c0,
        m: a.m,
        jmax: a.jmax,
        ell0: if a.single_theta0 { Ell0Convention::SingleTheta0 } else { Ell0Convention::DoubleTheta0 },
        strict: a.strict,
        ..Default::default()
    };
    let sch = build_schedule(&p).map_err(ctx("kam schedule"))?;
    let names: Vec<String> = sch.rows.iter().flat_map(|r| r.conditions.iter().map(|c| c.name.clone())).fold(
        Vec::new(),
        |mut acc, n| {
            if !acc.contains(&n) {
                acc.push(n);
            }
            acc
        },
    );
    let mut header = vec!["j", "ln_s", "ln_sigma", "ln_eta", "ln_r", "ln_e", "ln_eps", "ln_k", "ln_h"];
    header.extend(names.iter().map(String::as_str));
    let mut t = Table::new("schedule", &header);
    for r in &sch.rows {
        let mut row: Vec<Cell> = vec![
            r.j.into(),
            r.ln_s.into(),
            r.ln_sigma.into(),
            r.ln_eta.into(),
            r.ln_r.into(),
            r.ln_e.into(),
            r.ln_eps.into(),
            r.ln_k.into(),
            r.ln_h.into(),
        ];
        for n in &names {
            row.push(match r.conditions.iter().find(|c| &c.name == n) {
                Some(c) => c.holds.into(),
                None => "".into(),
            });
        }
        t.push(row);
    }
    let mut checks = vec![Check::flag("all_conditions_hold", sch.all_hold), Check::le("q_mismatch", sch.q_mismatch, 1e-9)];
    for n in &names {
        let ok = sch.rows.iter().flat_map(|r| &r.conditions).filter(|c| &c.name == n).all(|c| c.holds);
        checks.push(Check::flag(n, ok));
    }
    Ok(Report {
        body: json!({
            "params": value(&sch.params),
            "delta": sch.delta,
            "s0": sch.s0,
            "j_of_m": sch.j_of_m,
            "ell0": sch.ell0,
            "ell_m": sch.ell_m,
            "all_hold": sch.all_hold,
            "first_failure": value(&sch.first_failure),
        }),
        tables: vec![t],
        checks,
    })
}

fn kam_smooth(a: &SmoothArgs) -> Outcome {
    if a.levels < 2 {
        return Err(bad("levels", "need at least two values of ρ"));
    }
    let rhos: Vec<f64> = (a.first..a.first + a.levels).map(|j| 0.5f64.powi(j)).collect();
    let kernel = SmoothingKernel::default();
    let mut t = Table::new("rates", &["ell", "rho", "error"]);
    let mut checks = Vec::new();
    let mut slopes = Vec::new();
    for &ell in &a.ell {
        let f = regularity_test_function(ell, a.grid);
        let rate = smoothing_rate(&f, &rhos, &kernel).map_err(ctx("kam smooth"))?;
        for (r, e) in rate.rhos.iter().zip(&rate.errors) {
            t.push(vec![ell.into(), (*r).into(), (*e).into()]);
        }
        checks.push(Check::le(&format!("slope_minus_ell_{ell}"), (rate.slope - ell).abs(), a.tol));
        slopes.push(json!({"ell": ell, "slope": rate.slope}));
    }
    Ok(Report { body: json!({"grid": a.grid, "slopes": slopes}), tables: vec![t], checks })
}

fn maslov(m: &MaslovArgs) -> Maslov {
    let mut out = match &m.maslov {
        Some(v) => Maslov::new(v[0], v[1]),
        None => Maslov::default(),
    };
    if m.maslov_minus {
        out.sign = MaslovSign::Minus;
    }
    out
}

struct Torus {
    action: f64,
    lagrangian: f64,
    omega: Option<f64>,
    data: Option<ChebyshevAction>,
    family_residual: Option<f64>,
}

fn torus(a: &TorusArgs, need_function: bool) -> Result<Torus, CommandError> {
    if let (Some(i), Some(l), false) = (a.action, a.lagrangian, need_function) {
        return Ok(Torus { action: i, lagrangian: l, omega: None, data: None, family_residual: None });
    }
    let curve = build_curve(&a.curve)?;
    let w0 = a.omega.unwrap_or_else(|| golden_rotation() - 0.3);
    let fam = circle_family(&curve, w0 - a.width, w0 + a.width, a.nodes, a.modes, 5).map_err(ctx("quantize circles"))?;
    let i = fam.action_at(w0);
    let l = fam.action.value(i).map_err(ctx("quantize"))?;
    Ok(Torus { action: i, lagrangian: l, omega: Some(w0), family_residual: Some(fam.max_residual), data: Some(fam.action) })
}

fn quantize_search(a: &SearchArgs) -> Outcome {
    let tor = torus(&a.torus, false)?;
    let opts = SearchOptions { maslov: maslov(&a.maslov), lambda_max: a.lambda_max, tol: a.tol, periodic_order: a.periodic_order };
    let hits = strong_search(tor.action, tor.lagrangian, &opts).map_err(ctx("quantize search"))?;
    let mut t = Table::new("hits", &["k", "kn", "lambda", "distance"]);
    for h in &hits {
        t.push(vec![h.q.0.into(), h.q.1.into(), h.lambda.into(), h.distance.into()]);
    }
    let worst = hits.iter().map(|h| h.distance).fold(0.0, f64::max);
    let sorted = hits.windows(2).all(|w| w[0].lambda <= w[1].lambda);
    Ok(Report {
        body: json!({
            "action": tor.action,
            "lagrangian": tor.lagrangian,
            "omega": tor.omega,
            "maslov": value(&opts.maslov),
            "hits": hits.len(),
        }),
        tables: vec![t],
        checks: vec![Check::flag("sorted_by_lambda", sorted), Check::flag("within_tolerance", hits.is_empty() || worst < a.tol)],
    })
}

fn quantize_solve(a: &SolveArgs) -> Outcome {
    let tor = torus(&a.torus, true)?;
    let data = tor.data.as_ref().expect("circle family data");
    let m = maslov(&a.maslov);
    if a.levels < 2 || a.batch == 0 || !(a.base >= 1.0) {
        return Err(bad("levels/batch/base", "need levels ≥ 2, batch ≥ 1, base ≥ 1"));
    }
    let mut t = Table::new("records", &["order", "level", "k", "kn", "mu0", "mu", "first_residual", "second_residual"]);
    let mut slopes = Vec::new();
    let mut checks = Vec::new();
    let mut det = f64::NAN;
    let mut first: f64 = 0.0;
    for order in 0..=a.order {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for lvl in 0..a.levels {
            let base = a.base * 2f64.powi(lvl as i32);
            let mut worst: f64 = 0.0;
            for b in 0..a.batch {
                let mu0 = base * (1.0 + 0.2 * b as f64 / a.batch as f64);
                let seed = QuantizationSeed::nearest(tor.action, tor.lagrangian, mu0, m);
                let rec = quasi_eigen(&seed, data, tor.action, order).map_err(ctx("quantize solve"))?;
                det = rec.determinant;
                first = first.max(rec.first_residual / rec.mu);
                worst = worst.max(rec.second_residual);
                t.push(vec![
                    order.into(),
                    lvl.into(),
                    rec.seed.q.0.into(),
                    rec.seed.q.1.into(),
                    mu0.into(),
                    rec.mu.into(),
                    rec.first_residual.into(),
                    rec.second_residual.into(),
                ]);
            }
            xs.push(base.ln());
            ys.push(worst.ln());
        }
        let slope = -linear_slope(&xs, &ys).0;
        slopes.push(json!({"order": order, "slope": slope}));
        if order >= 1 {
            checks.push(Check::le(&format!("slope_order_{order}"), (slope - (order as f64 + 1.0)).abs(), a.slope_tol));
        }
    }
    checks.push(Check::le("first_residual_relative", first, 1e-14));
    checks.push(Check::flag("positive_determinant", det > 0.0));
    Ok(Report {
        body: json!({
            "action": tor.action,
            "lagrangian": tor.lagrangian,
            "omega": tor.omega,
            "determinant": det,
            "family_residual": tor.family_residual,
            "maslov": value(&m),
            "slopes": slopes,
        }),
        tables: vec![t],
        checks,
    })
}
