//! Composite Gauss-Legendre quadrature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-width panels, each integrated with an `order`-point Gauss-Legendre rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrature {
    pub panels: usize,
    pub order: usize,
}

impl Default for Quadrature {
    /// 512 nodes.
    fn default() -> Self {
        Self { panels: 64, order: 8 }
    }
}

impl Quadrature {
    pub fn nodes(&self) -> usize {
        self.panels * self.order
    }

    /// Same rule with twice as many panels.
    pub fn refined(&self) -> Self {
        Self {
            panels: 2 * self.panels,
            order: self.order,
        }
    }

    /// Absolute nodes and weights on `[a, b]`.
    pub fn grid(&self, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.panels == 0 || self.order == 0 || !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(format!("bad quadrature on [{a}, {b}]")));
        }
        let (xs, ws) = gauss_legendre(self.order);
        let h = (b - a) / self.panels as f64;
        let mut nodes = Vec::with_capacity(self.nodes());
        let mut weights = Vec::with_capacity(self.nodes());
        for p in 0..self.panels {
            let mid = a + (p as f64 + 0.5) * h;
            for (x, w) in xs.iter().zip(&ws) {
                nodes.push(mid + 0.5 * h * x);
                weights.push(0.5 * h * w);
            }
        }
        Ok((nodes, weights))
    }
}

/// Nodes and weights of the `n`-point rule on [-1, 1], by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Recurrence for P_n(x) and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}
