//! Base-2 polynomial lattice rules built component by component, QMC means
//! and successive-difference error estimates.

mod cbc;
pub mod gf2;
mod lattice;
mod spod;

pub use cbc::cbc_construct;
pub use lattice::{LatticeLevel, LatticeRule, PointSet};
pub use spod::SpodWeights;

use crate::error::{Error, Result};
use crate::par::pairwise_sum;

/// Mean of exactly `2^m` scalar samples.
pub fn qmc_mean(values: &[f64], m: u32) -> Result<f64> {
    let n = 1usize << m;
    if values.len() != n {
        return Err(Error::CountMismatch { expected: n, got: values.len() });
    }
    Ok(pairwise_sum(values) / n as f64)
}

/// Componentwise mean of `2^m` vector samples, summed pairwise over samples.
pub fn qmc_mean_fields(samples: &[Vec<f64>], m: u32) -> Result<Vec<f64>> {
    let n = 1usize << m;
    if samples.len() != n {
        return Err(Error::CountMismatch { expected: n, got: samples.len() });
    }
    let mut sum = pairwise_sum_fields(samples);
    sum.iter_mut().for_each(|v| *v /= n as f64);
    Ok(sum)
}

pub(crate) fn pairwise_sum_fields(samples: &[Vec<f64>]) -> Vec<f64> {
    match samples.len() {
        0 => Vec::new(),
        1 => samples[0].clone(),
        len => {
            let (a, b) = samples.split_at(len / 2);
            let mut left = pairwise_sum_fields(a);
            left.iter_mut().zip(pairwise_sum_fields(b)).for_each(|(x, y)| *x += y);
            left
        }
    }
}

/// `Z_m - Z_{m-1}`, the first-order estimate of the level-`m` quadrature error.
pub fn successive_difference(z_m: f64, z_prev: f64) -> f64 {
    z_m - z_prev
}

/// Componentwise successive difference for field-valued integrals.
pub fn successive_difference_fields(z_m: &[f64], z_prev: &[f64]) -> Result<Vec<f64>> {
    if z_m.len() != z_prev.len() {
        return Err(Error::DimensionMismatch { expected: z_m.len(), got: z_prev.len() });
    }
    Ok(z_m.iter().zip(z_prev).map(|(a, b)| a - b).collect())
}
