//! Single-cubic solutions: free, fixed, follower-bound and fully prescribed exit.

use nalgebra::{Matrix4, Vector4};

use super::newton::{self, from_after, to_after, NewtonOptions};
use super::{CaseSolution, CostateArc, SolveError, Structure, UnconstrainedParams};
use crate::bounds::{follower_exit_time, t_lower_speed_control};
use crate::model::ScenarioConfig;
use crate::trajectory::{ArcKind, ArcSegment, PiecewiseTrajectory};

fn cubic_trajectory(p: &UnconstrainedParams, t0: f64) -> Result<PiecewiseTrajectory, SolveError> {
    let kind = ArcKind::CubicPosition { a: p.a, b: p.b, c: p.c, d: p.d };
    Ok(PiecewiseTrajectory::new(vec![ArcSegment::new(kind, t0, p.tf)])?)
}

fn pos(x: &[f64], t: f64) -> f64 {
    ((x[0] / 6.0 * t + 0.5 * x[1]) * t + x[2]) * t + x[3]
}

fn vel(x: &[f64], t: f64) -> f64 {
    (0.5 * x[0] * t + x[1]) * t + x[2]
}

fn finish(params: UnconstrainedParams, t0: f64, structure: Structure, residual: f64, iterations: usize) -> Result<CaseSolution, SolveError> {
    let mut sol = CaseSolution::new(cubic_trajectory(&params, t0)?, structure);
    sol.multipliers.costates.push(CostateArc::from_cubic(t0, params.tf, params.a, params.b));
    sol.residual = residual;
    sol.iterations = iterations;
    sol.unconstrained = Some(params);
    Ok(sol)
}

/// Solves the 4×4 boundary system with one step of iterative refinement.
fn linear_cubic(m: Matrix4<f64>, rhs: Vector4<f64>, what: &'static str) -> Result<(Vector4<f64>, f64), SolveError> {
    let lu = m.lu();
    let mut x = lu.solve(&rhs).ok_or(SolveError::Singular(what))?;
    if let Some(dx) = lu.solve(&(rhs - m * x)) {
        x += dx;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(SolveError::Singular(what));
    }
    let residual = (m * x - rhs).amax();
    Ok((x, residual))
}

fn boundary_rows(t0: f64, v0: f64, tf: f64, dist: f64) -> (Matrix4<f64>, Vector4<f64>) {
    let m = Matrix4::new(
        t0.powi(3) / 6.0, t0 * t0 / 2.0, t0, 1.0,
        t0 * t0 / 2.0, t0, 1.0, 0.0,
        tf.powi(3) / 6.0, tf * tf / 2.0, tf, 1.0,
        tf, 1.0, 0.0, 0.0,
    );
    (m, Vector4::new(0.0, v0, dist, 0.0))
}

/// Exit time imposed: zero terminal control, linear system.
pub fn solve_p1_fixed(t0: f64, v0: f64, tf: f64, cfg: &ScenarioConfig) -> Result<CaseSolution, SolveError> {
    if !(tf > t0) {
        return Err(SolveError::Singular("fixed exit time not after entry"));
    }
    let (m, rhs) = boundary_rows(t0, v0, tf, cfg.exit_position());
    let (x, residual) = linear_cubic(m, rhs, "fixed exit time")?;
    let params = UnconstrainedParams { a: x[0], b: x[1], c: x[2], d: x[3], tf };
    // Control a·(t − tf) keeps one sign and is monotone on [t0, tf].
    let u0 = params.a * t0 + params.b;
    if u0 * params.a > 1e-12 * params.a.abs().max(1.0) {
        return Err(SolveError::Property(format!("fixed-time control changes sign (u0={u0}, a={})", params.a)));
    }
    finish(params, t0, Structure::FixedTime, residual, 1)
}

/// Exit time and exit speed both imposed.
pub fn solve_prescribed(t0: f64, v0: f64, tf: f64, vf: f64, cfg: &ScenarioConfig) -> Result<CaseSolution, SolveError> {
    if !(tf > t0) {
        return Err(SolveError::Singular("prescribed exit time not after entry"));
    }
    let (mut m, mut rhs) = boundary_rows(t0, v0, tf, cfg.exit_position());
    m.set_row(3, &nalgebra::RowVector4::new(tf * tf / 2.0, tf, 1.0, 0.0));
    rhs[3] = vf;
    let (x, residual) = linear_cubic(m, rhs, "prescribed exit")?;
    let params = UnconstrainedParams { a: x[0], b: x[1], c: x[2], d: x[3], tf };
    let mut sol = finish(params, t0, Structure::Prescribed, residual, 1)?;
    sol.extension = Some("exit speed imposed in addition to exit time".into());
    Ok(sol)
}

/// Free exit time: boundary conditions, zero terminal control and zero Hamiltonian.
pub fn solve_p0_free(t0: f64, v0: f64, cfg: &ScenarioConfig) -> Result<CaseSolution, SolveError> {
    solve_p0_free_from(t0, v0, cfg, None)
}

/// As [`solve_p0_free`], trying `warm` (coefficients and exit time) first.
pub fn solve_p0_free_from(
    t0: f64,
    v0: f64,
    cfg: &ScenarioConfig,
    warm: Option<UnconstrainedParams>,
) -> Result<CaseSolution, SolveError> {
    let dist = cfg.exit_position();
    let gamma = cfg.gamma;
    let residual = |y: &[f64]| {
        let tf = to_after(y[4], t0);
        Some(vec![
            pos(y, t0),
            vel(y, t0) - v0,
            pos(y, tf) - dist,
            y[0] * tf + y[1],
            gamma - 0.5 * y[1] * y[1] + y[0] * y[2],
        ])
    };
    let pack = |p: &UnconstrainedParams| vec![p.a, p.b, p.c, p.d, from_after(p.tf, t0)];
    let mut starts = Vec::new();
    if let Some(w) = warm {
        starts.push(pack(&w));
    }
    let cruise = t0 + dist / v0;
    starts.push(pack(&UnconstrainedParams { a: 0.0, b: 0.0, c: v0, d: -v0 * t0, tf: cruise }));
    let (t_l, _) = t_lower_speed_control(t0, v0, cfg);
    let mut guesses: Vec<f64> = [0.95, 0.9, 0.85, 0.8, 0.7, 0.6].iter().map(|f| t0 + f * (cruise - t0)).collect();
    guesses.push(t_l.max(t0 + 0.5 * (cruise - t0)));
    for tf in guesses {
        if let Ok(s) = solve_p1_fixed(t0, v0, tf, cfg) {
            starts.push(pack(&s.unconstrained.unwrap()));
        }
    }
    starts.truncate(8);
    let sol = newton::solve(residual, &starts, NewtonOptions::default())
        .map_err(|t| SolveError::newton("free exit time", t))?;
    let x = &sol.x;
    let params = UnconstrainedParams { a: x[0], b: x[1], c: x[2], d: x[3], tf: to_after(x[4], t0) };
    // Nonnegative, nonincreasing control.
    let tol = 1e-9;
    let u0 = params.a * t0 + params.b;
    if params.a > tol || u0 < -tol {
        return Err(SolveError::Property(format!(
            "free-time control not nonnegative/nonincreasing: a={}, u(t0)={u0}",
            params.a
        )));
    }
    finish(params, t0, Structure::Unconstrained, sol.residual, sol.iterations)
}

/// Exit time set by the headway to the same-lane leader at exit.
pub fn solve_p1_follower(
    t0: f64,
    v0: f64,
    leader: &PiecewiseTrajectory,
    cfg: &ScenarioConfig,
    warm: Option<UnconstrainedParams>,
) -> Result<CaseSolution, SolveError> {
    let dist = cfg.exit_position();
    let (tk, vk) = (leader.tf(), leader.vf());
    if vk <= 0.0 {
        return Err(SolveError::Infeasible("leader exits at rest".into()));
    }
    let (gamma, phi, delta0) = (cfg.gamma, cfg.phi, cfg.delta0);
    let residual = |y: &[f64]| {
        let (eta, tf) = (y[4], to_after(y[5], t0));
        Some(vec![
            pos(y, t0),
            vel(y, t0) - v0,
            pos(y, tf) - dist,
            y[0] * tf + y[1] - eta * phi,
            gamma - 0.5 * y[1] * y[1] + y[0] * y[2] + eta * vk,
            tf - tk - (phi * vel(y, tf) + delta0) / vk,
        ])
    };
    let mut starts = Vec::new();
    let mut seeds: Vec<f64> = Vec::new();
    if let Some(w) = warm {
        seeds.push(follower_exit_time(tk, vk, vel(&[w.a, w.b, w.c, w.d], w.tf), cfg));
    }
    for vf in [v0, vk, 0.5 * (v0 + vk)] {
        seeds.push(follower_exit_time(tk, vk, vf, cfg));
    }
    for tf in seeds {
        if tf <= t0 {
            continue;
        }
        if let Ok(s) = solve_p1_fixed(t0, v0, tf, cfg) {
            let p = s.unconstrained.unwrap();
            for eta in [0.0, -0.01, 0.01] {
                starts.push(vec![p.a, p.b, p.c, p.d, eta, from_after(tf, t0)]);
            }
        }
    }
    starts.truncate(8);
    let sol = newton::solve(residual, &starts, NewtonOptions::default())
        .map_err(|t| SolveError::newton("follower exit time", t))?;
    let x = &sol.x;
    let params = UnconstrainedParams { a: x[0], b: x[1], c: x[2], d: x[3], tf: to_after(x[5], t0) };
    let mut out = finish(params, t0, Structure::FollowerTime, sol.residual, sol.iterations)?;
    out.multipliers.eta = Some(x[4]);
    Ok(out)
}
