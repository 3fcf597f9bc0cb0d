//! Direct-transcription oracle: piecewise-constant control on a uniform grid,
//! exact double-integrator rollout, projected gradient with quadratic penalties.
//!
//! The exit condition `p_N = L + S` and the control box are enforced exactly by
//! projection; speed limits, headway, merging-zone entry and the follower exit
//! condition by penalties whose weight is raised tenfold per stage.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::ScenarioConfig;
use crate::trajectory::PiecewiseTrajectory;

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    /// Largest grid step.
    pub dt: f64,
    /// Iteration budget per fixed-horizon solve, split over the stages.
    pub iterations: usize,
    pub stages: usize,
    pub initial_weight: f64,
    pub seed: u64,
    /// Exit-time bracket width at which the golden-section search stops.
    pub tf_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { dt: 0.01, iterations: 10_000, stages: 5, initial_weight: 1e2, seed: 0, tf_tol: 0.05 }
    }
}

/// One vehicle's problem as seen by the oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleProblem<'a> {
    pub t0: f64,
    pub v0: f64,
    /// Imposed exit time; otherwise searched within `tf_range`.
    pub tf: Option<f64>,
    pub tf_range: Option<(f64, f64)>,
    /// Same-lane leader whose headway must be kept.
    pub leader: Option<&'a PiecewiseTrajectory>,
    /// `(t_k^f, v_k^f)` of a leader whose exit headway bounds the exit time.
    pub follower_exit: Option<(f64, f64)>,
    /// Exit time of a conflicting vehicle; position must not exceed L before it.
    pub conflict_exit: Option<f64>,
}

impl<'a> OracleProblem<'a> {
    pub fn new(t0: f64, v0: f64) -> Self {
        Self { t0, v0, tf: None, tf_range: None, leader: None, follower_exit: None, conflict_exit: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    /// `γ·T + Σ ½u²Δt` of the returned control (penalties excluded).
    pub j: f64,
    pub tf: f64,
    pub step: f64,
    pub controls: Vec<f64>,
    /// Largest violation of any constraint by the returned control.
    pub max_violation: f64,
    pub iterations: usize,
}

impl OracleResult {
    pub fn feasible(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

struct Grid<'p, 'a> {
    prob: &'p OracleProblem<'a>,
    cfg: &'p ScenarioConfig,
    n: usize,
    h: f64,
    horizon: f64,
    /// Leader position at nodes 1..=n (index 0 unused).
    leader_p: Vec<f64>,
    /// `p_N` coefficients.
    coef: Vec<f64>,
    target: f64,
    scratch: RefCell<Scratch>,
}

struct Scratch {
    p: Vec<f64>,
    v: Vec<f64>,
    gp: Vec<f64>,
    gv: Vec<f64>,
}

impl<'p, 'a> Grid<'p, 'a> {
    fn new(prob: &'p OracleProblem<'a>, cfg: &'p ScenarioConfig, horizon: f64, n: usize) -> Self {
        let h = horizon / n as f64;
        let leader_p = match prob.leader {
            Some(l) => (0..=n).map(|j| l.eval_extended(prob.t0 + j as f64 * h).p).collect(),
            None => Vec::new(),
        };
        let coef = (0..n).map(|j| h * h * (n as f64 - j as f64 - 0.5)).collect();
        let target = cfg.exit_position() - prob.v0 * horizon;
        let scratch = RefCell::new(Scratch {
            p: vec![0.0; n + 1],
            v: vec![0.0; n + 1],
            gp: vec![0.0; n + 1],
            gv: vec![0.0; n + 1],
        });
        Self { prob, cfg, n, h, horizon, leader_p, coef, target, scratch }
    }

    fn rollout(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; self.n + 1];
        let mut v = vec![0.0; self.n + 1];
        self.rollout_into(u, &mut p, &mut v);
        (p, v)
    }

    fn rollout_into(&self, u: &[f64], p: &mut [f64], v: &mut [f64]) {
        let (mut pj, mut vj) = (0.0, self.prob.v0);
        p[0] = pj;
        v[0] = vj;
        for (j, &uj) in u.iter().enumerate() {
            pj += vj * self.h + 0.5 * uj * self.h * self.h;
            vj += uj * self.h;
            p[j + 1] = pj;
            v[j + 1] = vj;
        }
    }

    fn lateral_node(&self) -> Option<(usize, f64)> {
        let tc = self.prob.conflict_exit?;
        let s = tc - self.prob.t0;
        if s <= 0.0 {
            return None;
        }
        if s >= self.horizon {
            return Some((self.n, 0.0));
        }
        let m = ((s / self.h).floor() as usize).min(self.n - 1);
        Some((m, s - m as f64 * self.h))
    }

    fn speed_cap(&self) -> Option<f64> {
        let (tk, vk) = self.prob.follower_exit?;
        Some((vk * (self.prob.t0 + self.horizon - tk) - self.cfg.delta0) / self.cfg.phi)
    }

    fn cost(&self, u: &[f64]) -> f64 {
        self.cfg.gamma * self.horizon + 0.5 * self.h * u.iter().map(|x| x * x).sum::<f64>()
    }

    /// Raw constraint violations (not weighted).
    fn violation(&self, u: &[f64]) -> f64 {
        let (p, v) = self.rollout(u);
        let cfg = self.cfg;
        let mut worst: f64 = (p[self.n] - cfg.exit_position()).abs();
        for &x in u {
            worst = worst.max(x - cfg.u_max).max(cfg.u_min - x);
        }
        for j in 1..=self.n {
            worst = worst.max(v[j] - cfg.v_max).max(cfg.v_min - v[j]);
            if !self.leader_p.is_empty() {
                worst = worst.max(p[j] + cfg.phi * v[j] + cfg.delta0 - self.leader_p[j]);
            }
        }
        if let Some((m, s)) = self.lateral_node() {
            let pc = if m == self.n { p[m] } else { p[m] + v[m] * s + 0.5 * u[m] * s * s };
            worst = worst.max(pc - cfg.l);
        }
        if let Some(cap) = self.speed_cap() {
            worst = worst.max(v[self.n] - cap);
        }
        worst.max(0.0)
    }

    /// Penalised objective and its gradient.
    fn objective(&self, u: &[f64], w: f64, grad: &mut [f64]) -> f64 {
        let (n, h, cfg) = (self.n, self.h, self.cfg);
        let mut guard = self.scratch.borrow_mut();
        let Scratch { p, v, gp, gv } = &mut *guard;
        self.rollout_into(u, p, v);
        gp.iter_mut().for_each(|x| *x = 0.0);
        gv.iter_mut().for_each(|x| *x = 0.0);
        let mut direct_at = None;
        let mut f = self.cost(u);
        let has_leader = !self.leader_p.is_empty();
        for j in 1..=n {
            let hi = (v[j] - cfg.v_max).max(0.0);
            let lo = (cfg.v_min - v[j]).max(0.0);
            f += h * w * (hi * hi + lo * lo);
            gv[j] += 2.0 * h * w * (hi - lo);
            if has_leader {
                let m = (p[j] + cfg.phi * v[j] + cfg.delta0 - self.leader_p[j]).max(0.0);
                f += h * w * m * m;
                gp[j] += 2.0 * h * w * m;
                gv[j] += 2.0 * h * w * m * cfg.phi;
            }
        }
        if let Some((m, s)) = self.lateral_node() {
            let pc = if m == n { p[m] } else { p[m] + v[m] * s + 0.5 * u[m] * s * s };
            let x = (pc - cfg.l).max(0.0);
            f += w * x * x;
            gp[m] += 2.0 * w * x;
            if m < n {
                gv[m] += 2.0 * w * x * s;
                direct_at = Some((m, 2.0 * w * x * 0.5 * s * s));
            }
        }
        if let Some(cap) = self.speed_cap() {
            let x = (v[n] - cap).max(0.0);
            f += w * x * x;
            gv[n] += 2.0 * w * x;
        }
        let (mut sv, mut sp, mut spj) = (0.0, 0.0, 0.0);
        for i in (0..n).rev() {
            let j = i + 1;
            sv += gv[j];
            sp += gp[j];
            spj += j as f64 * gp[j];
            grad[i] = h * u[i] + h * sv + h * h * (spj - (i as f64 + 0.5) * sp);
        }
        if let Some((m, d)) = direct_at {
            grad[m] += d;
        }
        f
    }

    /// Projection onto the control box intersected with `p_N = L + S`.
    fn project(&self, y: &[f64], out: &mut [f64], lambda: &mut f64) {
        let (lo, hi) = (self.cfg.u_min, self.cfg.u_max);
        let c = &self.coef;
        let eval = |lam: f64, out: &mut [f64]| -> (f64, f64) {
            let (mut s, mut slope) = (0.0, 0.0);
            for j in 0..y.len() {
                let x = y[j] - lam * c[j];
                let xc = x.clamp(lo, hi);
                out[j] = xc;
                s += c[j] * xc;
                if x > lo && x < hi {
                    slope += c[j] * c[j];
                }
            }
            (s - self.target, slope)
        };
        // Newton on the monotone piecewise-linear map, safeguarded by a bracket.
        let mut lam = *lambda;
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..200 {
            let (r, slope) = eval(lam, out);
            if r.abs() <= 1e-13 * self.target.abs().max(1.0) {
                *lambda = lam;
                return;
            }
            if r > 0.0 {
                a = lam;
            } else {
                b = lam;
            }
            let newton = if slope > 0.0 { lam + r / slope } else { f64::NAN };
            lam = if newton.is_finite() && newton > a && newton < b {
                newton
            } else if a.is_finite() && b.is_finite() {
                0.5 * (a + b)
            } else if a.is_finite() {
                a + (a.abs() + 1.0) * 2.0
            } else {
                b - (b.abs() + 1.0) * 2.0
            };
            if a.is_finite() && b.is_finite() && (b - a) <= 1e-15 * (a.abs() + b.abs()) {
                break;
            }
        }
        *lambda = lam;
        eval(lam, out);
    }
}

/// Fixed-horizon solve on `n` steps. A warm start `init` skips the low-weight
/// stages and spends `budget` iterations at the final weight.
fn solve_horizon(
    prob: &OracleProblem<'_>,
    cfg: &ScenarioConfig,
    horizon: f64,
    n: usize,
    init: Option<&[f64]>,
    budget: usize,
    opts: &OracleOptions,
) -> OracleResult {
    let grid = Grid::new(prob, cfg, horizon, n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start: Vec<f64> = match init {
        Some(u) => u.to_vec(),
        None => (0..n).map(|_| 1e-6 * (rng.random::<f64>() - 0.5)).collect(),
    };
    let mut lambda = 0.0;
    let mut x = vec![0.0; n];
    grid.project(&start, &mut x, &mut lambda);
    let mut g = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let stages = opts.stages.max(1);
    let final_weight = opts.initial_weight * 10f64.powi(stages as i32 - 1);
    let schedule: Vec<(f64, usize)> = match init {
        Some(_) => vec![(final_weight, budget)],
        None => (0..stages).map(|s| (opts.initial_weight * 10f64.powi(s as i32), (budget / stages).max(1))).collect(),
    };
    let mut iterations = 0;
    for (w, per_stage) in schedule {
        let mut f = grid.objective(&x, w, &mut g);
        let mut alpha = 1.0 / grid.h;
        let mut best = (f, x.clone());
        let mut checkpoint = f;
        for it in 0..per_stage {
            iterations += 1;
            for j in 0..n {
                y[j] = x[j] - alpha * g[j];
            }
            grid.project(&y, &mut x_new, &mut lambda);
            let f_new = grid.objective(&x_new, w, &mut g_new);
            if !(f_new <= f + 1e-4 * f.abs().max(1.0)) && alpha > 1e-14 {
                alpha *= 0.25;
                continue;
            }
            let (mut ss, mut sy, mut step) = (0.0, 0.0, 0.0f64);
            for j in 0..n {
                let s = x_new[j] - x[j];
                ss += s * s;
                sy += s * (g_new[j] - g[j]);
                step = step.max(s.abs());
            }
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut g, &mut g_new);
            f = f_new;
            if step < 1e-13 {
                break;
            }
            if f < best.0 {
                best.0 = f;
                best.1.copy_from_slice(&x);
            }
            // No progress of the best value over a window ends the stage.
            if (it + 1) % 500 == 0 {
                if checkpoint - best.0 <= 1e-13 * best.0.abs().max(1.0) {
                    break;
                }
                checkpoint = best.0;
            }
            alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { 1.0 / grid.h };
        }
        if best.0 < f {
            x = best.1;
        }
    }
    OracleResult {
        j: grid.cost(&x),
        tf: prob.t0 + horizon,
        step: grid.h,
        max_violation: grid.violation(&x),
        controls: x,
        iterations,
    }
}

/// Control resampled onto `n` equal steps by step-function lookup.
fn resample(u: &[f64], n: usize) -> Vec<f64> {
    let m = u.len();
    (0..n).map(|j| u[(((j as f64 + 0.5) / n as f64) * m as f64) as usize % m.max(1)]).collect()
}

/// Best control found for `prob`. Free exit times are searched by golden section
/// on a grid five times coarser, then re-solved on the full grid.
pub fn transcription_oracle(prob: &OracleProblem<'_>, cfg: &ScenarioConfig, opts: &OracleOptions) -> OracleResult {
    assert!(opts.dt > 0.0 && opts.dt <= 0.01, "oracle grid step must be at most 0.01 s");
    if let Some(tf) = prob.tf {
        let horizon = tf - prob.t0;
        let n = (horizon / opts.dt).ceil() as usize;
        return solve_horizon(prob, cfg, horizon, n, None, opts.iterations, opts);
    }
    let dist = cfg.exit_position();
    let (lo, hi) = prob.tf_range.unwrap_or_else(|| {
        let fast = prob.t0 + dist / cfg.v_max.max(prob.v0);
        let slow = prob.t0 + 3.0 * dist / prob.v0.max(1.0);
        (fast, slow)
    });
    let (mut a, mut b) = (lo - prob.t0, hi - prob.t0);
    let coarse = (b / (5.0 * opts.dt)).ceil() as usize;
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut total = 0;
    // Each trial horizon is solved from scratch so the search sees a smooth cost.
    let eval = |t: f64, total: &mut usize| -> OracleResult {
        let r = solve_horizon(prob, cfg, t, coarse, None, opts.iterations, opts);
        *total += r.iterations;
        r
    };
    // Penalty residue is O(1/w); weigh it only enough to reject clearly infeasible trials.
    let score = |r: &OracleResult| r.j + 10.0 * r.max_violation;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut rc = eval(c, &mut total);
    let mut rd = eval(d, &mut total);
    while b - a > opts.tf_tol {
        if score(&rc) <= score(&rd) {
            b = d;
            d = c;
            rd = rc;
            c = b - ratio * (b - a);
            rc = eval(c, &mut total);
        } else {
            a = c;
            c = d;
            rc = rd;
            d = a + ratio * (b - a);
            rd = eval(d, &mut total);
        }
    }
    let best = if score(&rc) <= score(&rd) { rc } else { rd };
    let horizon = best.tf - prob.t0;
    let n = (horizon / opts.dt).ceil() as usize;
    let mut fine = solve_horizon(prob, cfg, horizon, n, Some(&resample(&best.controls, n)), opts.iterations, opts);
    fine.iterations += total;
    fine
}

/// Cost of a given piecewise-constant control on the oracle's grid, with its
/// constraint violation.
pub fn evaluate_control(prob: &OracleProblem<'_>, cfg: &ScenarioConfig, horizon: f64, u: &[f64]) -> (f64, f64) {
    let grid = Grid::new(prob, cfg, horizon, u.len());
    (grid.cost(u), grid.violation(u))
}

/// Analytic control sampled at the midpoints of `n` equal steps.
pub fn sample_midpoints(traj: &PiecewiseTrajectory, n: usize) -> Vec<f64> {
    let (t0, tf) = (traj.t0(), traj.tf());
    let h = (tf - t0) / n as f64;
    (0..n).map(|j| traj.eval_extended(t0 + (j as f64 + 0.5) * h).u).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_cruise_needs_no_control() {
        let cfg = ScenarioConfig { gamma: 0.0, ..Default::default() };
        let prob = OracleProblem { tf: Some(40.0), ..OracleProblem::new(0.0, 10.0) };
        let r = transcription_oracle(&prob, &cfg, &OracleOptions::default());
        assert!(r.j < 1e-10, "{}", r.j);
        assert!(r.controls.iter().all(|u| u.abs() < 1e-5));
    }

    #[test]
    fn projection_meets_exit_exactly() {
        let cfg = ScenarioConfig::default();
        let prob = OracleProblem::new(0.0, 10.0);
        let grid = Grid::new(&prob, &cfg, 35.0, 3500);
        let mut out = vec![0.0; 3500];
        let mut lam = 0.0;
        grid.project(&vec![0.3; 3500], &mut out, &mut lam);
        let (p, _) = grid.rollout(&out);
        assert!((p[3500] - 400.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = ScenarioConfig { v_max: 10.5, ..Default::default() };
        let leader = PiecewiseTrajectory::new(vec![crate::trajectory::ArcSegment::new(
            crate::trajectory::ArcKind::Cruise { v: 10.0, p_start: 8.0 },
            0.0,
            50.0,
        )])
        .unwrap();
        let prob = OracleProblem {
            leader: Some(&leader),
            conflict_exit: Some(0.35),
            follower_exit: Some((0.2, 10.0)),
            ..OracleProblem::new(0.0, 10.0)
        };
        let grid = Grid::new(&prob, &cfg, 0.5, 50);
        let u: Vec<f64> = (0..50).map(|j| 3.0 * (j as f64 * 0.3).sin()).collect();
        let mut g = vec![0.0; 50];
        grid.objective(&u, 1e3, &mut g);
        for i in [0, 7, 34, 49] {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let mut tmp = vec![0.0; 50];
            let fd = (grid.objective(&up, 1e3, &mut tmp) - grid.objective(&dn, 1e3, &mut tmp)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0), "i={i} fd={fd} g={}", g[i]);
        }
    }
}
