use serde::Deserialize;

/// Smoothness-driven product and order dependent weights
/// `gamma_u = sum_{nu in {1..alpha}^|u|} (|nu| + n)! prod_{j in u} c beta_j^nu_j`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SpodWeights {
    pub alpha: u32,
    pub n: u32,
    pub c: f64,
    pub beta: Vec<f64>,
}

pub(crate) fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

impl SpodWeights {
    pub fn new(alpha: u32, n: u32, c: f64, beta: Vec<f64>) -> Self {
        assert!(alpha >= 1, "alpha must be at least 1");
        assert!(c > 0.0 && beta.iter().all(|&b| b > 0.0), "c and beta must be positive");
        Self { alpha, n, c, beta }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// `ln gamma_u` for a set of 0-based coordinate indices.
    pub fn ln_gamma(&self, u: &[usize]) -> f64 {
        let alpha = self.alpha as usize;
        // coefficients of prod_j (sum_nu c beta_j^nu t^nu) in t, kept relative
        // to a running log scale so long products neither overflow nor vanish
        let mut poly = vec![1.0];
        let mut ln_scale = 0.0;
        for &j in u {
            let terms: Vec<f64> = (1..=alpha).map(|nu| self.c * self.beta[j].powi(nu as i32)).collect();
            let mut next = vec![0.0; poly.len() + alpha];
            for (k, &p) in poly.iter().enumerate() {
                for (i, &t) in terms.iter().enumerate() {
                    next[k + i + 1] += p * t;
                }
            }
            let peak = next.iter().fold(0.0_f64, |m, &v| m.max(v));
            ln_scale += peak.ln();
            poly = next.into_iter().map(|v| v / peak).collect();
        }
        let ln_terms: Vec<f64> = poly
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(k, &p)| ln_factorial(k + self.n as usize) + p.ln())
            .collect();
        let top = ln_terms.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        ln_scale + top + ln_terms.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
    }

    pub fn gamma(&self, u: &[usize]) -> f64 {
        self.ln_gamma(u).exp()
    }
}
