//! Convergence ladders: a manufactured FE problem under uniform refinement and
//! a smooth product integrand under increasing lattice level.

use serde::{Deserialize, Serialize};

use crate::coefficient::AffineCoefficient;
use crate::error::Result;
use crate::fem::{Discretization, Profile, Source};
use crate::mesh::TriangleMesh;
use crate::par::{try_map_indexed, Execution};
use crate::qmc::{qmc_mean, LatticeRule, SpodWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FemRow {
    pub level: usize,
    pub dofs: usize,
    pub h_max: f64,
    pub err_l2: f64,
    pub err_h1: f64,
    pub eta: f64,
    pub eta_l2: f64,
    pub eff_h1: f64,
    pub eff_l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FemConvergence {
    pub rows: Vec<FemRow>,
    /// Least-squares slopes of `log err` against `log h_max`.
    pub rate_l2: f64,
    pub rate_h1: f64,
}

impl FemConvergence {
    /// `max / min` of an efficiency column.
    pub fn spread(&self, col: impl Fn(&FemRow) -> f64) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(col).collect();
        v.iter().copied().fold(f64::MIN, f64::max) / v.iter().copied().fold(f64::MAX, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QmcRow {
    pub m: u32,
    pub z: f64,
    /// `|Z_m - Z_ref|`.
    pub err: f64,
    /// `|Z_m - Z_{m-1}|`.
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QmcConvergence {
    pub rows: Vec<QmcRow>,
    pub z_ref: f64,
    /// Slope of `log2 err` against `m`.
    pub rate: f64,
}

impl QmcConvergence {
    /// `(Z_ref - Z_m) / (Z_m - Z_{m-1})` at level `m`.
    pub fn difference_ratio(&self, m: u32) -> Option<f64> {
        let row = self.rows.iter().find(|r| r.m == m)?;
        let prev = self.rows.iter().find(|r| r.m + 1 == m)?;
        Some((self.z_ref - row.z) / (row.z - prev.z))
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fitted_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Parameter of the manufactured problem.
const MANUFACTURED_Y: f64 = 0.4;

/// `u = sin(pi x1) sin(pi x2)` for `a(., y)` the 16-mode sine coefficient at
/// `y_j = +-0.4` (alternating), with `f = -div(a grad u)` interpolated nodally.
/// Levels `0..=refinements` of the 41-vertex criss-cross mesh.
pub fn fem_convergence(refinements: usize, exec: Execution) -> Result<FemConvergence> {
    let coeff = AffineCoefficient::sine_modes_16();
    let y: Vec<f64> = (0..coeff.dim()).map(|j| if j % 2 == 0 { MANUFACTURED_Y } else { -MANUFACTURED_Y }).collect();
    let base = TriangleMesh::criss_cross_unit_square(4)?;
    let meshes: Vec<TriangleMesh> = (0..=refinements).map(|l| base.refined(l)).collect();
    let pi2 = std::f64::consts::PI.powi(2);
    let rows = try_map_indexed(exec, meshes.len(), |level| {
        let mesh = &meshes[level];
        let disc = Discretization::new(mesh, &coeff)?;
        let f: Vec<f64> = mesh
            .vertices()
            .iter()
            .map(|&x| {
                let (a, ga) = coeff.evaluate(x, &y)?;
                let gu = Profile::SinSin.gradient(x);
                Ok(2.0 * pi2 * a * Profile::SinSin.value(x) - (ga[0] * gu[0] + ga[1] * gu[1]))
            })
            .collect::<Result<_>>()?;
        let source = Source::nodal(f);
        let u = disc.solve_state(&y, &source)?;
        let err_l2 = disc.l2_error(&u.values, |x| Profile::SinSin.value(x));
        let err_h1 = disc.h1_error(&u.values, |x| Profile::SinSin.gradient(x));
        let eta = disc.eta_h1(&u, &source)?.total;
        let eta_l2 = disc.eta_l2(&u, &source)?.total;
        Ok::<_, crate::Error>(FemRow {
            level,
            dofs: mesh.num_vertices(),
            h_max: mesh.h_max(),
            err_l2,
            err_h1,
            eta,
            eta_l2,
            eff_h1: eta / err_h1,
            eff_l2: eta_l2 / err_l2,
        })
    })?;
    let log_h: Vec<f64> = rows.iter().map(|r| r.h_max.ln()).collect();
    let rate = |col: fn(&FemRow) -> f64| fitted_slope(&log_h, &rows.iter().map(|r| col(r).ln()).collect::<Vec<_>>());
    Ok(FemConvergence { rate_l2: rate(|r| r.err_l2), rate_h1: rate(|r| r.err_h1), rows })
}

/// `F(y) = prod_j (1 + y_j / (2 j^2))` on `[-1/2, 1/2]^s`, exact mean 1.
pub fn product_integrand(y: &[f64]) -> f64 {
    y.iter().enumerate().map(|(j, v)| 1.0 + v * product_decay(j)).product()
}

fn product_decay(j: usize) -> f64 {
    0.5 / ((j + 1) as f64).powi(2)
}

/// Lattice levels `m_min..=m_max` against level `m_ref`, product weights
/// `beta_j = 1 / (2 j^2)`, smoothness 2.
pub fn qmc_convergence(s: usize, m_min: u32, m_max: u32, m_ref: u32, exec: Execution) -> Result<QmcConvergence> {
    let weights = SpodWeights::new(2, 0, 1.0, (0..s).map(product_decay).collect());
    let mut rule = LatticeRule::new(weights);
    let lo = m_min.saturating_sub(1);
    let levels: Vec<u32> = (lo..=m_max).chain([m_ref]).collect();
    for &m in &levels {
        rule.ensure(m)?;
    }
    let means = try_map_indexed(exec, levels.len(), |i| {
        let pts = rule.points(levels[i])?;
        let values: Vec<f64> = pts.iter().map(product_integrand).collect();
        qmc_mean(&values, levels[i])
    })?;
    let z_ref = *means.last().expect("reference level");
    let rows: Vec<QmcRow> = (1..levels.len() - 1)
        .filter(|&i| levels[i] >= m_min)
        .map(|i| QmcRow { m: levels[i], z: means[i], err: (means[i] - z_ref).abs(), diff: (means[i] - means[i - 1]).abs() })
        .collect();
    let ms: Vec<f64> = rows.iter().map(|r| f64::from(r.m)).collect();
    let rate = fitted_slope(&ms, &rows.iter().map(|r| r.err.log2()).collect::<Vec<_>>());
    Ok(QmcConvergence { rows, z_ref, rate })
}
