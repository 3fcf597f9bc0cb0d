//! Dense polynomial helpers and closed-form integrals of `q(s)·e^(−κs)`.
//!
//! Polynomials are coefficient slices in ascending order: `q[0] + q[1]·s + …`.

pub fn eval(q: &[f64], s: f64) -> f64 {
    q.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

pub fn derivative(q: &[f64]) -> Vec<f64> {
    q.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| c * k as f64)
        .collect()
}

/// Antiderivative vanishing at `s = 0`.
pub fn antiderivative(q: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len() + 1);
    out.push(0.0);
    out.extend(q.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64));
    out
}

pub fn add(p: &[f64], q: &[f64]) -> Vec<f64> {
    let n = p.len().max(q.len());
    (0..n)
        .map(|k| p.get(k).copied().unwrap_or(0.0) + q.get(k).copied().unwrap_or(0.0))
        .collect()
}

pub fn scale(q: &[f64], f: f64) -> Vec<f64> {
    q.iter().map(|c| c * f).collect()
}

pub fn mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    if p.is_empty() || q.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

/// Coefficients of `q(s + delta)`.
pub fn shift(q: &[f64], delta: f64) -> Vec<f64> {
    // Horner-style Taylor shift.
    let mut c = q.to_vec();
    let n = c.len();
    for i in 0..n {
        for j in (i..n.saturating_sub(1)).rev() {
            c[j] += delta * c[j + 1];
        }
    }
    c
}

/// `Q` with `Q' − Q/φ = q`, i.e. `∫ q e^(−s/φ) = Q e^(−s/φ)`: `Q = −φ Σ φ^k q^(k)`.
pub fn exp_primitive(q: &[f64], phi: f64) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    let mut d = q.to_vec();
    let mut w = -phi;
    while !d.is_empty() {
        for (k, &c) in d.iter().enumerate() {
            out[k] += w * c;
        }
        d = derivative(&d);
        w *= phi;
    }
    out
}

/// `∫_0^h s^n e^(−κs) ds` for `κ ≥ 0`; `h` may be infinite when `κ > 0`.
pub fn moment(n: usize, kappa: f64, h: f64) -> f64 {
    debug_assert!(kappa >= 0.0 && h >= 0.0);
    let np1 = (n + 1) as f64;
    if kappa == 0.0 {
        return h.powi(n as i32 + 1) / np1;
    }
    let fact = (1..=n).fold(1.0, |acc, k| acc * k as f64);
    let full = fact / kappa.powi(n as i32 + 1);
    if h.is_infinite() {
        return full;
    }
    let x = kappa * h;
    if x < np1 + 10.0 {
        // Lower incomplete gamma series; every term positive.
        let mut term = 1.0 / np1;
        let mut sum = term;
        let mut k = 1.0;
        loop {
            term *= x / (np1 + k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        h.powi(n as i32 + 1) * (-x).exp() * sum
    } else {
        // Upper tail is small here, so the complement does not cancel.
        let mut term = 1.0;
        let mut tail = 1.0;
        for j in 1..=n {
            term *= x / j as f64;
            tail += term;
        }
        full * (1.0 - (-x).exp() * tail)
    }
}

/// `∫_0^h q(s) e^(−κs) ds`.
pub fn exp_integral(q: &[f64], kappa: f64, h: f64) -> f64 {
    q.iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(n, &c)| c * moment(n, kappa, h))
        .sum()
}
