//! Gauss–Hermite quadrature in probabilists' normalization:
//! `Σ_i w_i f(n_i) ≈ E[f(Z)]` for standard-normal `Z`, exact for polynomials
//! of degree ≤ 2·degree − 1.
//!
//! Nodes are the roots of the probabilists' Hermite polynomial He_n, found by
//! degree-by-degree bisection on the orthonormal recurrence (roots of He_n
//! strictly interlace those of He_{n−1}), polished with Newton steps. Weights
//! come from the Christoffel–Darboux identity `w_i = 1 / Σ_{k<n} p_k(n_i)²`
//! with orthonormal `p_k`, which makes them positive and sum to one.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Orthonormal Hermite values `(p_n(x), p_{n−1}(x))`.
/// Recurrence: `p_{k+1} = (x·p_k − √k·p_{k−1}) / √(k+1)`.
fn orthonormal_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0; // p_{-1}
    let mut cur = 1.0; // p_0
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

fn p_n(n: usize, x: f64) -> f64 {
    orthonormal_pair(n, x).0
}

/// Roots of He_d given the (sorted) roots of He_{d−1}, via interlacing.
fn refine_roots(d: usize, lower: &[f64]) -> Vec<f64> {
    let bound = (4.0 * d as f64 + 2.0).sqrt();
    let mut brackets = Vec::with_capacity(d + 1);
    brackets.push(-bound);
    brackets.extend_from_slice(lower);
    brackets.push(bound);
    let mut roots = Vec::with_capacity(d);
    for w in brackets.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let mut fa = p_n(d, a);
        debug_assert!(fa * p_n(d, b) < 0.0, "interlacing bracket lost a sign change");
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid == a || mid == b {
                break;
            }
            let fm = p_n(d, mid);
            if fa * fm <= 0.0 {
                b = mid;
            } else {
                a = mid;
                fa = fm;
            }
        }
        let mut x = 0.5 * (a + b);
        for _ in 0..4 {
            let (p, plow) = orthonormal_pair(d, x);
            let dp = (d as f64).sqrt() * plow; // p_d' = √d · p_{d−1}
            if dp != 0.0 {
                x -= p / dp;
            }
        }
        roots.push(x);
    }
    // Roots of He_d are symmetric about zero; enforce it exactly.
    let mut sym = roots.clone();
    for i in 0..d {
        sym[i] = 0.5 * (roots[i] - roots[d - 1 - i]);
    }
    if d % 2 == 1 {
        sym[d / 2] = 0.0;
    }
    sym
}

/// Probabilists' Gauss–Hermite rule of the given degree (≥ 1).
pub fn gauss_hermite_rule(degree: usize) -> QuadratureRule {
    assert!(degree >= 1, "quadrature degree must be at least 1");
    let mut roots = vec![0.0]; // He_1 = x
    for d in 2..=degree {
        roots = refine_roots(d, &roots);
    }
    let weights: Vec<f64> = roots
        .iter()
        .map(|&x| {
            let mut prev = 0.0;
            let mut cur = 1.0;
            let mut sum_sq = 1.0; // p_0² = 1
            for k in 0..degree - 1 {
                let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
                prev = cur;
                cur = next;
                sum_sq += cur * cur;
            }
            1.0 / sum_sq
        })
        .collect();
    // Symmetric nodes get identical weights; average out roundoff.
    let n = roots.len();
    let weights: Vec<f64> = (0..n).map(|i| 0.5 * (weights[i] + weights[n - 1 - i])).collect();
    QuadratureRule { degree, nodes: roots, weights }
}

impl QuadratureRule {
    /// `Σ_i w_i f(node_i)`: the quadrature estimate of `E[f(Z)]`.
    ///
    /// Symmetric node pairs share a weight and are summed together first, so
    /// odd integrands cancel exactly instead of leaving product roundoff.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let n = self.nodes.len();
        let mut total = 0.0;
        for i in 0..n / 2 {
            total += self.weights[i] * (f(self.nodes[i]) + f(self.nodes[n - 1 - i]));
        }
        if n % 2 == 1 {
            total += self.weights[n / 2] * f(self.nodes[n / 2]);
        }
        total
    }
}
