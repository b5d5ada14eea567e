//! Gauss–Hermite rules for expectations over a standard normal `V`.
//!
//! Nodes start from the Golub–Welsch eigenvalues of the Jacobi matrix and
//! are polished by Newton steps on the orthonormal Hermite recurrence,
//! which also yields the weights `1 / Σ_k p_k(x_i)²`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

/// `(Σ_{k<n} p_k(x)², p_n(x), p_n'(x))` for the orthonormal probabilists'
/// Hermite polynomials.
fn recurrence(n: usize, x: f64) -> (f64, f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sumsq = 0.0;
    for k in 0..n {
        sumsq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (sumsq, cur, (n as f64).sqrt() * prev)
}

impl QuadratureRule {
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be >= 1"));
        }
        let n = order;
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let (_, p, dp) = recurrence(n, *x);
                if dp == 0.0 {
                    break;
                }
                let step = p / dp;
                *x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            weights.push(1.0 / recurrence(n, *x).0);
        }
        // Nodes come in ± pairs; enforce it exactly.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -x;
            nodes[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights, order })
    }

    /// `E[g(V)]` with `V ~ N(0, 1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }
}
