//! Arcs that hold the rear-end headway with equality.
//!
//! On such an arc `p_i = p_k − φ v_i − δ0`, hence `φ u̇_i + u_i = u_k`. Each leader
//! arc is followed by one tracking arc whose control is the leader's polynomial part
//! shifted by `φ`, plus a homogeneous/forced exponential term.

use super::SolveError;
use crate::model::ScenarioConfig;
use crate::poly;
use crate::trajectory::{ArcKind, ArcSegment, ExpTerm, PiecewiseTrajectory, State};

/// Control the follower needs at `t` to keep the headway identity: `(v_k − v_i)/φ`.
pub fn required_control(leader: &PiecewiseTrajectory, v_i: f64, t: f64, phi: f64) -> f64 {
    (leader.eval_extended(t).v - v_i) / phi
}

/// Follower arcs on `[t_start, t_end]` (t_end may be infinite) starting from `(p, v)`.
pub fn track(
    leader: &PiecewiseTrajectory,
    cfg: &ScenarioConfig,
    t_start: f64,
    p_start: f64,
    v_start: f64,
    t_end: f64,
) -> Result<Vec<ArcSegment>, SolveError> {
    let phi = cfg.phi;
    if phi <= 0.0 {
        return Err(SolveError::Structure("headway tracking needs a positive reaction time".into()));
    }
    let mut out: Vec<ArcSegment> = Vec::new();
    let mut state = (p_start, v_start);
    for la in leader.extended_arcs(f64::INFINITY) {
        let ta = la.t_start.max(t_start);
        let tb = la.t_end.min(t_end);
        if !(tb > ta) {
            continue;
        }
        let (p_i, v_i) = state;
        let (alpha, beta) = la.control_line();
        let forced = match la.exp_term() {
            Some(e) => {
                if (e.phi - phi).abs() > 1e-12 * phi {
                    return Err(SolveError::Structure("leader tracks with a different reaction time".into()));
                }
                e.amp_u_at(ta)
            }
            None => Vec::new(),
        };
        let b_i = beta - phi * alpha;
        let u_req = (la.state(ta).v - v_i) / phi;
        let k = u_req - (alpha * ta + b_i);
        let amp = poly::add(&[k], &poly::scale(&poly::antiderivative(&forced), 1.0 / phi));
        let exp = ExpTerm::new(phi, ta, amp);
        let c_i = v_i - 0.5 * alpha * ta * ta - b_i * ta - exp.v(ta);
        let d_i = p_i - (alpha * ta.powi(3) / 6.0 + 0.5 * b_i * ta * ta + c_i * ta) - exp.p(ta);
        let arc = ArcSegment::new(ArcKind::ExponentialTracking { a: alpha, b: b_i, c: c_i, d: d_i, exp }, ta, tb);
        if tb.is_finite() {
            let s = arc.state(tb);
            state = (s.p, s.v);
        }
        out.push(arc);
    }
    Ok(out)
}

/// State on a run of arcs (last arc extended if `t` is past it).
pub fn state_on(arcs: &[ArcSegment], t: f64) -> State {
    let i = arcs.partition_point(|a| a.t_start <= t).saturating_sub(1);
    arcs[i].state(t)
}

/// `∫_τ^T e^(−(t−τ)/φ) u̇(t)/φ dt` over tracking arcs that start at `τ`.
///
/// This is the costate `λ_p(τ)` implied by a tracking arc whose costate is
/// continued backward from `T` with `λ_p(T)` weighted out by `e^(−(T−τ)/φ)`.
pub fn weighted_rate_integral(arcs: &[ArcSegment], tau: f64, t_end: f64, phi: f64) -> f64 {
    let k = 1.0 / phi;
    let mut total = 0.0;
    for arc in arcs {
        let ta = arc.t_start.max(tau);
        let tb = arc.t_end.min(t_end);
        if !(tb > ta) {
            continue;
        }
        let h = tb - ta;
        let (alpha, _) = arc.control_line();
        let mut piece = alpha * poly::moment(0, k, h);
        if let Some(e) = arc.exp_term() {
            let amp = e.amp_u_at(ta);
            let rate = poly::add(&poly::derivative(&amp), &poly::scale(&amp, -k));
            piece += poly::exp_integral(&rate, 2.0 * k, h);
        }
        total += (-(ta - tau) * k).exp() * piece * k;
    }
    total
}
