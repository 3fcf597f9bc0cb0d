//! Per-vehicle optimal control: unconstrained arcs, terminal-time cases and
//! constrained-arc piecing, driven by the step-wise activation loop in [`algorithm`].

pub mod algorithm;
pub mod lateral;
pub mod newton;
pub mod safety;
pub mod saturation;
pub mod tracking;
pub mod unconstrained;
pub mod violations;

use serde::Serialize;
use thiserror::Error;

use crate::bounds::BoundsError;
use crate::model::ModelError;
use crate::trajectory::PiecewiseTrajectory;

pub use algorithm::{algorithm1, Activation, ConstraintKind, SolveReport};
pub use lateral::solve_lateral_interior;
pub use safety::{solve_safety_no_exit, solve_safety_with_exit, solve_safety_with_exit_joint};
pub use saturation::{extreme_profile, solve_umax_vmax, Direction};
pub use unconstrained::{solve_p0_free, solve_p1_fixed, solve_p1_follower, solve_prescribed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no convergence in {what}; final residual per start: {residuals:?}")]
    NoConvergence { what: &'static str, residuals: Vec<f64> },
    #[error("singular system in {0}")]
    Singular(&'static str),
    #[error("necessary-condition property violated: {0}")]
    Property(String),
    #[error("arc structure does not apply: {0}")]
    Structure(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("infeasible after {} activation round(s): {reason}", trace.len())]
    InfeasibleWithTrace { reason: String, trace: Vec<Activation> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

impl SolveError {
    pub(crate) fn newton(what: &'static str, trace: newton::NewtonTrace) -> Self {
        SolveError::NoConvergence { what, residuals: trace.residuals }
    }
}

/// How the exit time is determined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TerminalMode {
    /// Chosen optimally.
    Free,
    /// Imposed.
    Fixed(f64),
    /// Set by the headway to the same-lane leader at exit.
    Follower,
    /// Exit time and exit speed both imposed.
    Prescribed { tf: f64, vf: f64 },
}

/// Arc layout of a solved trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Structure {
    Unconstrained,
    FixedTime,
    FollowerTime,
    Prescribed,
    /// Full acceleration (then cruise at the speed limit).
    ExtremeAcceleration,
    /// Full deceleration (then cruise at the minimum speed).
    ExtremeDeceleration,
    SafetyNoExit,
    SafetyWithExit,
    LateralInterior,
    SaturatedAcceleration,
    SaturatedDeceleration,
}

/// Cubic coefficients (absolute time) and exit time of an unconstrained arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnconstrainedParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tf: f64,
}

/// Parameters of a rear-end constrained solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyArcParams {
    /// Unconstrained arc before the entry junction.
    pub entry_arc: UnconstrainedParams,
    /// Polynomial part of the first tracking arc (`a_i^k, b_i^k, c_i^k, d_i^k`).
    pub mirrored: [f64; 4],
    /// Amplitude of `e^(−t/φ)` on the first tracking arc, if representable in absolute time.
    pub c_e1: Option<f64>,
    /// Same for the tracking arc after the leader exits, if there is one.
    pub c_e2: Option<f64>,
    pub tau: f64,
    pub tau2: Option<f64>,
    /// Post-exit cubic `(e, r, q, m)`.
    pub exit_arc: Option<[f64; 4]>,
}

/// Costate on an arc where it is known in closed form:
/// `λ_p` constant and `λ_v(t) = −(slope·t + offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostateArc {
    pub t_start: f64,
    pub t_end: f64,
    pub lambda_p: f64,
    pub slope: f64,
    pub offset: f64,
}

impl CostateArc {
    pub fn lambda_v(&self, t: f64) -> f64 {
        -(self.slope * t + self.offset)
    }

    pub fn from_cubic(t_start: f64, t_end: f64, a: f64, b: f64) -> Self {
        Self { t_start, t_end, lambda_p: a, slope: a, offset: b }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MultiplierRecord {
    pub costates: Vec<CostateArc>,
    /// Multiplier of the exit headway condition.
    pub eta: Option<f64>,
    /// Jumps `(time, value)` at junctions.
    pub pi: Vec<(f64, f64)>,
    /// Interior-point multiplier of the merging-zone entry condition.
    pub zeta: Option<f64>,
    /// State-constraint multiplier just after entering / before leaving a tracking arc.
    pub nu: Vec<(f64, f64)>,
}

/// Output of every case solver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSolution {
    pub trajectory: PiecewiseTrajectory,
    pub structure: Structure,
    pub multipliers: MultiplierRecord,
    /// Arc junction times in order.
    pub junctions: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Set when the solve relies on a construction beyond the standard cases.
    pub extension: Option<String>,
    pub unconstrained: Option<UnconstrainedParams>,
    pub safety: Option<SafetyArcParams>,
}

impl CaseSolution {
    pub(crate) fn new(trajectory: PiecewiseTrajectory, structure: Structure) -> Self {
        Self {
            trajectory,
            structure,
            multipliers: MultiplierRecord::default(),
            junctions: Vec::new(),
            residual: 0.0,
            iterations: 0,
            extension: None,
            unconstrained: None,
            safety: None,
        }
    }
}
