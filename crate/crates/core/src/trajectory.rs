//! Piecewise closed-form trajectories.

use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::poly;

/// Relative tolerance on position/speed agreement across breakpoints.
pub const BREAKPOINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub p: f64,
    pub v: f64,
    pub u: f64,
}

/// Exponential part `U(s)·e^(−s/φ)` of a tracking arc, with `s = t − anchor`.
///
/// The amplitude is a polynomial in `s`: it is constant when the leader is on an
/// unconstrained or saturated arc, and grows in degree along chains of tracking
/// vehicles. Anchoring at the arc start keeps `e^(−s/φ)` in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub phi: f64,
    pub anchor: f64,
    /// Amplitude of the control.
    pub amp_u: Vec<f64>,
    /// Amplitude of the speed, `−φ Σ φ^k U^(k)`.
    pub amp_v: Vec<f64>,
    /// Amplitude of the position.
    pub amp_p: Vec<f64>,
}

impl ExpTerm {
    pub fn new(phi: f64, anchor: f64, amp_u: Vec<f64>) -> Self {
        assert!(phi > 0.0, "exponential term needs a positive time constant");
        let amp_v = poly::exp_primitive(&amp_u, phi);
        let amp_p = poly::exp_primitive(&amp_v, phi);
        Self { phi, anchor, amp_u, amp_v, amp_p }
    }

    fn decay(&self, t: f64) -> (f64, f64) {
        let s = t - self.anchor;
        (s, (-s / self.phi).exp())
    }

    pub fn u(&self, t: f64) -> f64 {
        let (s, e) = self.decay(t);
        poly::eval(&self.amp_u, s) * e
    }

    pub fn v(&self, t: f64) -> f64 {
        let (s, e) = self.decay(t);
        poly::eval(&self.amp_v, s) * e
    }

    pub fn p(&self, t: f64) -> f64 {
        let (s, e) = self.decay(t);
        poly::eval(&self.amp_p, s) * e
    }

    /// Time derivative of the control part.
    pub fn du(&self, t: f64) -> f64 {
        let (s, e) = self.decay(t);
        let d = poly::derivative(&self.amp_u);
        (poly::eval(&d, s) - poly::eval(&self.amp_u, s) / self.phi) * e
    }

    /// Control amplitude re-expressed relative to `anchor`, exponential factor included.
    pub fn amp_u_at(&self, anchor: f64) -> Vec<f64> {
        let delta = anchor - self.anchor;
        poly::scale(&poly::shift(&self.amp_u, delta), (-delta / self.phi).exp())
    }

    /// `c_e` in `c_e·e^(−t/φ)` with absolute time, when the amplitude is constant
    /// and the value is representable.
    pub fn absolute_amplitude(&self) -> Option<f64> {
        if self.amp_u.iter().skip(1).any(|c| *c != 0.0) {
            return None;
        }
        let c = self.amp_u.first().copied().unwrap_or(0.0) * (self.anchor / self.phi).exp();
        c.is_finite().then_some(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArcKind {
    /// `u = a t + b`, absolute time.
    CubicPosition { a: f64, b: f64, c: f64, d: f64 },
    /// `u = a t + b + U(s) e^(−s/φ)` with matching speed/position integrals.
    ExponentialTracking { a: f64, b: f64, c: f64, d: f64, exp: ExpTerm },
    /// Constant control, measured from the segment start.
    SaturatedControl { u: f64, v_start: f64, p_start: f64 },
    /// Constant speed, measured from the segment start.
    Cruise { v: f64, p_start: f64 },
}

impl ArcKind {
    /// Cubic with control `a t + b` passing through `(p, v)` at `t`.
    pub fn cubic_through(t: f64, p: f64, v: f64, a: f64, b: f64) -> ArcKind {
        let c = v - 0.5 * a * t * t - b * t;
        let d = p - (a * t * t * t / 6.0 + 0.5 * b * t * t + c * t);
        ArcKind::CubicPosition { a, b, c, d }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcSegment {
    pub kind: ArcKind,
    pub t_start: f64,
    pub t_end: f64,
}

/// Interior stationary points of speed and control on one arc.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extrema {
    pub v: Vec<(f64, f64)>,
    pub u: Vec<(f64, f64)>,
}

fn cubic_state(a: f64, b: f64, c: f64, d: f64, t: f64) -> State {
    State {
        p: ((a / 6.0 * t + 0.5 * b) * t + c) * t + d,
        v: (0.5 * a * t + b) * t + c,
        u: a * t + b,
    }
}

impl ArcSegment {
    pub fn new(kind: ArcKind, t_start: f64, t_end: f64) -> Self {
        Self { kind, t_start, t_end }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ArcKind::CubicPosition { .. } => "cubic",
            ArcKind::ExponentialTracking { .. } => "tracking",
            ArcKind::SaturatedControl { .. } => "saturated",
            ArcKind::Cruise { .. } => "cruise",
        }
    }

    /// Closed-form state; valid for any `t`, not only inside the segment.
    pub fn state(&self, t: f64) -> State {
        match &self.kind {
            &ArcKind::CubicPosition { a, b, c, d } => cubic_state(a, b, c, d, t),
            ArcKind::ExponentialTracking { a, b, c, d, exp } => {
                let s = cubic_state(*a, *b, *c, *d, t);
                State { p: s.p + exp.p(t), v: s.v + exp.v(t), u: s.u + exp.u(t) }
            }
            &ArcKind::SaturatedControl { u, v_start, p_start } => {
                let h = t - self.t_start;
                State { p: p_start + v_start * h + 0.5 * u * h * h, v: v_start + u * h, u }
            }
            &ArcKind::Cruise { v, p_start } => {
                State { p: p_start + v * (t - self.t_start), v, u: 0.0 }
            }
        }
    }

    /// Time derivative of the control.
    pub fn du(&self, t: f64) -> f64 {
        match &self.kind {
            ArcKind::CubicPosition { a, .. } => *a,
            ArcKind::ExponentialTracking { a, exp, .. } => a + exp.du(t),
            _ => 0.0,
        }
    }

    /// Polynomial part `α t + β` of the control (the whole control except on tracking arcs).
    pub fn control_line(&self) -> (f64, f64) {
        match &self.kind {
            ArcKind::CubicPosition { a, b, .. } | ArcKind::ExponentialTracking { a, b, .. } => (*a, *b),
            ArcKind::SaturatedControl { u, .. } => (0.0, *u),
            ArcKind::Cruise { .. } => (0.0, 0.0),
        }
    }

    pub fn exp_term(&self) -> Option<&ExpTerm> {
        match &self.kind {
            ArcKind::ExponentialTracking { exp, .. } => Some(exp),
            _ => None,
        }
    }

    /// `∫ ½u² dt` over the segment.
    pub fn energy(&self) -> f64 {
        let h = self.duration();
        let (alpha, beta) = self.control_line();
        // Linear part in local time: w(s) = w0 + alpha s.
        let w = [alpha * self.t_start + beta, alpha];
        let lin = 0.5 * poly::eval(&poly::antiderivative(&poly::mul(&w, &w)), h);
        match self.exp_term() {
            None => lin,
            Some(exp) => {
                let amp = exp.amp_u_at(self.t_start);
                let k = 1.0 / exp.phi;
                lin + poly::exp_integral(&poly::mul(&w, &amp), k, h)
                    + 0.5 * poly::exp_integral(&poly::mul(&amp, &amp), 2.0 * k, h)
            }
        }
    }

    pub fn extrema(&self) -> Extrema {
        let mut out = Extrema::default();
        match &self.kind {
            &ArcKind::CubicPosition { a, b, .. } => {
                if a != 0.0 {
                    let t = -b / a;
                    if t > self.t_start && t < self.t_end {
                        out.v.push((t, self.state(t).v));
                    }
                }
            }
            ArcKind::ExponentialTracking { .. } => {
                for t in roots(|t| self.state(t).u, self.t_start, self.t_end) {
                    out.v.push((t, self.state(t).v));
                }
                for t in roots(|t| self.du(t), self.t_start, self.t_end) {
                    out.u.push((t, self.state(t).u));
                }
            }
            _ => {}
        }
        out
    }
}

/// Sign changes of `f` on `(a, b)`, located by sampling then bisection.
fn roots(f: impl Fn(f64) -> f64, a: f64, b: f64) -> Vec<f64> {
    const SAMPLES: usize = 256;
    let mut out = Vec::new();
    let h = (b - a) / SAMPLES as f64;
    let mut x0 = a;
    let mut f0 = f(a);
    for i in 1..=SAMPLES {
        let x1 = if i == SAMPLES { b } else { a + i as f64 * h };
        let f1 = f(x1);
        if f0 != 0.0 && f1 != 0.0 && f0.signum() != f1.signum() {
            let (mut lo, mut hi, mut flo) = (x0, x1, f0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 || hi - lo < 1e-13 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            let r = 0.5 * (lo + hi);
            if r > a && r < b {
                out.push(r);
            }
        } else if f1 == 0.0 && i < SAMPLES {
            out.push(x1);
        }
        x0 = x1;
        f0 = f1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cost {
    pub j: f64,
    pub travel_time: f64,
    pub energy: f64,
}

/// Ordered, contiguous arcs from entry to merging-zone exit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseTrajectory {
    arcs: Vec<ArcSegment>,
}

impl PiecewiseTrajectory {
    pub fn new(arcs: Vec<ArcSegment>) -> Result<Self, ModelError> {
        if arcs.is_empty() {
            return Err(ModelError::Empty);
        }
        for arc in &arcs {
            if !(arc.t_end > arc.t_start) || !arc.t_start.is_finite() || !arc.t_end.is_finite() {
                return Err(ModelError::DegenerateArc { t_start: arc.t_start, t_end: arc.t_end });
            }
        }
        for w in arcs.windows(2) {
            let t = w[0].t_end;
            if (w[1].t_start - t).abs() > BREAKPOINT_TOL * t.abs().max(1.0) {
                return Err(ModelError::NotContiguous { t });
            }
            let l = w[0].state(t);
            let r = w[1].state(t);
            let dp = (l.p - r.p).abs();
            let dv = (l.v - r.v).abs();
            if dp > BREAKPOINT_TOL * l.p.abs().max(1.0) || dv > BREAKPOINT_TOL * l.v.abs().max(1.0) {
                return Err(ModelError::Discontinuous { t, dp, dv });
            }
        }
        Ok(Self { arcs })
    }

    /// Skips the continuity checks; used to build deliberately broken trajectories.
    pub fn new_unchecked(arcs: Vec<ArcSegment>) -> Self {
        Self { arcs }
    }

    pub fn arcs(&self) -> &[ArcSegment] {
        &self.arcs
    }

    pub fn t0(&self) -> f64 {
        self.arcs[0].t_start
    }

    pub fn tf(&self) -> f64 {
        self.arcs[self.arcs.len() - 1].t_end
    }

    pub fn terminal(&self) -> State {
        let last = &self.arcs[self.arcs.len() - 1];
        last.state(last.t_end)
    }

    /// Exit speed.
    pub fn vf(&self) -> f64 {
        self.terminal().v
    }

    /// Interior breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.arcs[1..].iter().map(|a| a.t_start).collect()
    }

    pub fn arc_index(&self, t: f64) -> usize {
        let i = self.arcs.partition_point(|a| a.t_start <= t);
        i.saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> Result<State, ModelError> {
        let (t0, tf) = (self.t0(), self.tf());
        let slack = 1e-12 * tf.abs().max(1.0);
        if !(t >= t0 - slack && t <= tf + slack) {
            return Err(ModelError::Domain { t, t0, tf });
        }
        Ok(self.arcs[self.arc_index(t)].state(t))
    }

    /// Evaluation that continues at the exit speed after `tf`.
    pub fn eval_extended(&self, t: f64) -> State {
        if t > self.tf() {
            let end = self.terminal();
            State { p: end.p + end.v * (t - self.tf()), v: end.v, u: 0.0 }
        } else {
            self.arcs[self.arc_index(t)].state(t)
        }
    }

    /// Arcs followed by a cruise at the exit speed up to `horizon` (may be infinite).
    pub fn extended_arcs(&self, horizon: f64) -> Vec<ArcSegment> {
        let mut arcs = self.arcs.clone();
        if horizon > self.tf() {
            let end = self.terminal();
            arcs.push(ArcSegment::new(ArcKind::Cruise { v: end.v, p_start: end.p }, self.tf(), horizon));
        }
        arcs
    }

    pub fn cost(&self, gamma: f64) -> Cost {
        let energy: f64 = self.arcs.iter().map(ArcSegment::energy).sum();
        let travel_time = self.tf() - self.t0();
        Cost { j: gamma * travel_time + energy, travel_time, energy }
    }

    /// All interior speed/control extrema over the trajectory.
    pub fn extrema(&self) -> Extrema {
        let mut out = Extrema::default();
        for arc in &self.arcs {
            let e = arc.extrema();
            out.v.extend(e.v);
            out.u.extend(e.u);
        }
        out
    }

    /// First time the position reaches `p` (positions are nondecreasing when speeds are).
    pub fn time_at_position(&self, p: f64) -> Option<f64> {
        let (t0, tf) = (self.t0(), self.tf());
        if self.eval_extended(t0).p > p || self.terminal().p < p {
            return None;
        }
        let (mut lo, mut hi) = (t0, tf);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval_extended(mid).p < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Same trajectory with its final arc continued at the exit speed; used for leaders.
    pub fn with_cruise_extension(&self, horizon: f64) -> PiecewiseTrajectory {
        PiecewiseTrajectory { arcs: self.extended_arcs(horizon) }
    }
}
