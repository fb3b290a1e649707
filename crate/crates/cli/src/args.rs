//! Command-line surface.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "kamlab", version, about = "Billiard, invariant-circle and KAM experiments")]
pub struct Cli {
    /// Flat `key = value` file mirroring the flags; flags win on conflict.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $KAMLAB_OUT, then ./kamlab-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub family: Family,
}

#[derive(Debug, Subcommand)]
pub enum Family {
    #[command(subcommand)]
    Billiard(BilliardCmd),
    #[command(subcommand)]
    Orbits(OrbitsCmd),
    #[command(subcommand)]
    Circles(CirclesCmd),
    #[command(subcommand)]
    Liouville(LiouvilleCmd),
    #[command(subcommand)]
    Melrose(MelroseCmd),
    #[command(subcommand)]
    Kam(KamCmd),
    #[command(subcommand)]
    Quantize(QuantizeCmd),
}

impl Family {
    pub fn name(&self) -> (&'static str, &'static str) {
        match self {
            Family::Billiard(c) => ("billiard", match c {
                BilliardCmd::Orbit(_) => "orbit",
                BilliardCmd::Iterate(_) => "iterate",
            }),
            Family::Orbits(c) => ("orbits", match c {
                OrbitsCmd::Find(_) => "find",
                OrbitsCmd::Classify(_) => "classify",
                OrbitsCmd::Twist(_) => "twist",
            }),
            Family::Circles(c) => ("circles", match c {
                CirclesCmd::Find(_) => "find",
                CirclesCmd::Beta(_) => "beta",
                CirclesCmd::Measure(_) => "measure",
            }),
            Family::Liouville(c) => ("liouville", match c {
                LiouvilleCmd::Twist(_) => "twist",
                LiouvilleCmd::Radon(_) => "radon",
                LiouvilleCmd::Resonances(_) => "resonances",
                LiouvilleCmd::Actions(_) => "actions",
            }),
            Family::Melrose(MelroseCmd::Compare(_)) => ("melrose", "compare"),
            Family::Kam(c) => ("kam", match c {
                KamCmd::Step(_) => "step",
                KamCmd::Iterate(_) => "iterate",
                KamCmd::Schedule(_) => "schedule",
                KamCmd::Smooth(_) => "smooth",
            }),
            Family::Quantize(c) => ("quantize", match c {
                QuantizeCmd::Search(_) => "search",
                QuantizeCmd::Solve(_) => "solve",
            }),
        }
    }
}

/// Boundary curve: an ellipse, a circle, a support function or a JSON document.
#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    /// Semi-axes A B.
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with_all = ["circle", "support", "curve"])]
    pub ellipse: Option<Vec<f64>>,
    #[arg(long, conflicts_with_all = ["support", "curve"])]
    pub circle: Option<f64>,
    /// Constant term of the support function H(θ).
    #[arg(long, conflicts_with = "curve")]
    pub support: Option<f64>,
    /// cos kθ coefficients of H, k = 1, 2, …
    #[arg(long, num_args = 1.., allow_negative_numbers = true, requires = "support")]
    pub cos: Vec<f64>,
    /// sin kθ coefficients of H, k = 1, 2, …
    #[arg(long, num_args = 1.., allow_negative_numbers = true, requires = "support")]
    pub sin: Vec<f64>,
    /// Curve document (JSON).
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BilliardCmd {
    /// One orbit of the billiard map.
    Orbit(BilliardOrbit),
    /// Phase portrait: orbits from a column of momenta at s = 0.
    Iterate(BilliardIterate),
}

#[derive(Debug, Args)]
pub struct BilliardOrbit {
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub s: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub p: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct BilliardIterate {
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, default_value_t = -0.9, allow_negative_numbers = true)]
    pub p_min: f64,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub p_max: f64,
    #[arg(long, default_value_t = 9)]
    pub orbits: usize,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
}

#[derive(Debug, Subcommand)]
pub enum OrbitsCmd {
    /// Periodic orbit by length maximization.
    Find(OrbitArgs),
    /// Monodromy, trace and resonances of a periodic orbit.
    Classify(OrbitArgs),
    /// Twist coefficient at an elliptic periodic orbit.
    Twist(OrbitArgs),
}

#[derive(Debug, Args)]
pub struct OrbitArgs {
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, default_value_t = 2)]
    pub period: usize,
    #[arg(long, default_value_t = 1)]
    pub winding: i64,
    /// Normal angle of the first seed vertex.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub theta0: f64,
    /// Resonance order checked by the classification.
    #[arg(long, default_value_t = 4)]
    pub order: u32,
    /// Give the twist verdict from the rotation fit alone at resonant orbits.
    #[arg(long)]
    pub allow_resonant: bool,
}

#[derive(Debug, Subcommand)]
pub enum CirclesCmd {
    /// Invariant circle with a prescribed rotation number.
    Find(CircleArgs),
    /// β(ω) from the conjugacy, a Birkhoff average and the dβ/dω = I identity.
    Beta(CircleBetaArgs),
    /// Monte Carlo measure of frequencies failing the Diophantine condition.
    Measure(MeasureArgs),
}

#[derive(Debug, Args)]
pub struct CircleArgs {
    #[command(flatten)]
    pub curve: CurveArgs,
    /// Rotation number (default 2π/φ²).
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub modes: usize,
    #[arg(long, default_value_t = 0.01)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1.5)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct CircleBetaArgs {
    #[command(flatten)]
    pub circle: CircleArgs,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: usize,
    /// Frequency spacing of the three-record derivative.
    #[arg(long, default_value_t = 1e-3)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lo: f64,
    #[arg(long, default_value_t = std::f64::consts::TAU)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.1)]
    pub kappa: f64,
    #[arg(long, default_value_t = 2.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 2000)]
    pub kmax: u64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

/// Liouville profile: an ellipse by semi-axes or by (ε, N).
#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with_all = ["eps", "n"])]
    pub ellipse: Option<Vec<f64>>,
    #[arg(long, requires = "n")]
    pub eps: Option<f64>,
    #[arg(long, requires = "eps")]
    pub n: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum LiouvilleCmd {
    /// dK/dI and d²K/dI² at the elliptic bouncing-ball orbit.
    Twist(ProfileArgs),
    /// Radon transform and boundary moments of cos 2πjx.
    Radon(RadonArgs),
    /// Values of N where the bouncing-ball eigenphase is resonant.
    Resonances(ResonanceArgs),
    /// Action integrals K(h), I(h) and rotation over a level sweep.
    Actions(ActionsArgs),
}

#[derive(Debug, Args)]
pub struct RadonArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    /// Harmonic j of the boundary function cos 2πjx.
    #[arg(long, default_value_t = 2)]
    pub harmonic: u32,
    #[arg(long, default_value_t = 8)]
    pub levels: usize,
    #[arg(long, default_value_t = 4)]
    pub moments: usize,
}

#[derive(Debug, Args)]
pub struct ResonanceArgs {
    #[arg(long, default_value_t = 3f64.sqrt())]
    pub eps: f64,
    #[arg(long, default_value_t = 3.0)]
    pub n_max: f64,
}

#[derive(Debug, Args)]
pub struct ActionsArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = 16)]
    pub levels: usize,
}

#[derive(Debug, Subcommand)]
pub enum MelroseCmd {
    /// Boundary invariants from curvature integrals and from a circle fit.
    Compare(MelroseArgs),
}

#[derive(Debug, Args)]
pub struct MelroseArgs {
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, default_value_t = 0.2)]
    pub omega_max: f64,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 48)]
    pub modes: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
}

#[derive(Debug, Subcommand)]
pub enum KamCmd {
    /// One KAM step on P = a·cos θ·(1 + c·I).
    Step(KamStepArgs),
    /// Chained steps with the truncation doubled each step.
    Iterate(KamIterateArgs),
    /// Parameter schedule and its conditions.
    Schedule(ScheduleArgs),
    /// Smoothing-operator convergence rates on functions of given regularity.
    Smooth(SmoothArgs),
}

#[derive(Debug, Clone, Args)]
pub struct KamStepArgs {
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    pub amplitude: f64,
    /// Action coupling c.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub coupling: f64,
    /// Frequency (default π(√5 − 1)).
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub grid: usize,
    #[arg(long, default_value_t = 8)]
    pub truncation: usize,
    #[arg(long, default_value_t = 0.04)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.12)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub s: f64,
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
}

#[derive(Debug, Args)]
pub struct KamIterateArgs {
    #[command(flatten)]
    pub step: KamStepArgs,
    #[arg(long, default_value_t = 3)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.2)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.25)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.5)]
    pub theta0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub theta1: f64,
    #[arg(long, default_value_t = 0.025)]
    pub sigma0: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub e0: f64,
    #[arg(long, default_value_t = 2.0)]
    pub big_c0: f64,
    #[arg(long, default_value_t = 0)]
    pub m: usize,
    #[arg(long, default_value_t = 50)]
    pub jmax: usize,
    /// ℓ₀ = 2τ + 2 + ϑ₀ instead of 2τ + 2 + 2ϑ₀.
    #[arg(long)]
    pub single_theta0: bool,
    /// Reject E₀ ≥ η₀² instead of reporting it.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    #[arg(long, num_args = 1.., default_values_t = [2.0, 3.0])]
    pub ell: Vec<f64>,
    #[arg(long, default_value_t = 16384)]
    pub grid: usize,
    /// ρ = 2^{−j} for j in [first, first + levels).
    #[arg(long, default_value_t = 3)]
    pub first: i32,
    #[arg(long, default_value_t = 7)]
    pub levels: i32,
    #[arg(long, default_value_t = 0.15)]
    pub tol: f64,
}

#[derive(Debug, Subcommand)]
pub enum QuantizeCmd {
    /// Lattice hits of λ·(I, L).
    Search(SearchArgs),
    /// Quasi-eigenvalue recursion and residual scaling over μ⁰ doublings.
    Solve(SolveArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MaslovArgs {
    /// Maslov integers ϑ₀ ϑ (default 1 3, a placeholder).
    #[arg(long, num_args = 2, value_names = ["THETA0", "THETA"], allow_negative_numbers = true)]
    pub maslov: Option<Vec<i64>>,
    /// Use k_n − ϑ/4 in the second condition.
    #[arg(long)]
    pub maslov_minus: bool,
}

/// Torus data: explicit (I, L) or an invariant circle family at ω.
#[derive(Debug, Clone, Args)]
pub struct TorusArgs {
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, allow_negative_numbers = true, requires = "lagrangian")]
    pub action: Option<f64>,
    #[arg(long, allow_negative_numbers = true, requires = "action")]
    pub lagrangian: Option<f64>,
    /// Rotation number of the torus (default 2π/φ² − 0.3).
    #[arg(long)]
    pub omega: Option<f64>,
    /// Half-width of the frequency window of the circle family.
    #[arg(long, default_value_t = 0.2)]
    pub width: f64,
    #[arg(long, default_value_t = 28)]
    pub nodes: usize,
    #[arg(long, default_value_t = 64)]
    pub modes: usize,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub torus: TorusArgs,
    #[command(flatten)]
    pub maslov: MaslovArgs,
    #[arg(long, default_value_t = 1000.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    /// Order of the non-periodicity check; 0 disables it.
    #[arg(long, default_value_t = 20)]
    pub periodic_order: i64,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub torus: TorusArgs,
    #[command(flatten)]
    pub maslov: MaslovArgs,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 400.0)]
    pub base: f64,
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    /// Seeds per level; the largest residual is kept.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.3)]
    pub slope_tol: f64,
}
