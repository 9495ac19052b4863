//! Monte Carlo reference for the posterior ratio.
//!
//! Level `l` averages `(Theta'_l - Theta'_{l-1}, Theta_l - Theta_{l-1})` over
//! uniform `y`, both terms solved with the same `y` (the coarsest level has no
//! correction). Summing the level means gives `(Z'_ref, Z_ref)`. The standard
//! error of the ratio uses batch means per level and the delta method.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ProblemKind, RunConfig};
use crate::bip::BipProblem;
use crate::error::{Error, Result};
use crate::par::{map_indexed, pairwise_sum, try_map_indexed, Execution};

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceLevel {
    pub level: usize,
    pub dofs: usize,
    pub samples: usize,
    /// Level means of the `Z'` and `Z` corrections.
    pub zp: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceResult {
    pub ratio: f64,
    pub std_error: f64,
    pub z: f64,
    pub zp: f64,
    pub levels: Vec<ReferenceLevel>,
}

/// The uniform parameters of level `l`, drawn sequentially from stream `l`.
fn draw(seed: u64, level_index: usize, n: usize, s: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(level_index as u64);
    (0..n).map(|_| (0..s).map(|_| rng.random::<f64>() - 0.5).collect()).collect()
}

/// Means of `(zp, z)` over `batches` contiguous, nearly equal batches.
fn batch_means(values: &[(f64, f64)], batches: usize) -> Vec<(f64, f64)> {
    let n = values.len();
    (0..batches)
        .map(|k| {
            let chunk = &values[k * n / batches..(k + 1) * n / batches];
            let zp: Vec<f64> = chunk.iter().map(|v| v.0).collect();
            let z: Vec<f64> = chunk.iter().map(|v| v.1).collect();
            (pairwise_sum(&zp) / chunk.len() as f64, pairwise_sum(&z) / chunk.len() as f64)
        })
        .collect()
}

/// Covariance `[var zp, cov, var z]` of the batch-mean average.
fn mean_covariance(batches: &[(f64, f64)]) -> [f64; 3] {
    let b = batches.len() as f64;
    let (mp, mz) = batches.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0 / b, acc.1 + v.1 / b));
    let scale = 1.0 / (b * (b - 1.0));
    batches.iter().fold([0.0; 3], |acc, v| {
        let (dp, dz) = (v.0 - mp, v.1 - mz);
        [acc[0] + scale * dp * dp, acc[1] + scale * dp * dz, acc[2] + scale * dz * dz]
    })
}

pub fn reference_ratio(cfg: &RunConfig, exec: Execution) -> Result<ReferenceResult> {
    cfg.validate()?;
    if cfg.problem != ProblemKind::Bip {
        return Err(Error::Config("the Monte Carlo reference is defined for inversion runs".into()));
    }
    let r = &cfg.reference;
    if r.samples.contains(&0) {
        return Err(Error::EmptySampleBudget);
    }
    let coeff = cfg.coefficient.build()?;
    let setup = cfg.bip.setup(&cfg.mesh, &coeff)?;
    let mut levels = Vec::new();
    let mut cov = [0.0; 3];
    let mut coarse_mesh: Option<crate::mesh::TriangleMesh> = None;
    for (i, (&level, &n)) in r.levels.iter().zip(&r.samples).enumerate() {
        let fine_mesh = cfg.mesh.at_level(level)?;
        let problem = |mesh| BipProblem::new(mesh, &coeff, &setup, cfg.bip.source(), cfg.bip.variant, cfg.adaptive.c_star);
        let fine = problem(&fine_mesh)?;
        let coarse = coarse_mesh.as_ref().map(problem).transpose()?;
        let ys = draw(r.seed, i, n, coeff.dim());
        let diffs = try_map_indexed(exec, n, |k| {
            let f = fine.sample(&ys[k], false)?;
            let mut d = (f.theta_prime(), f.theta());
            if let Some(c) = &coarse {
                let c = c.sample(&ys[k], false)?;
                d = (d.0 - c.theta_prime(), d.1 - c.theta());
            }
            Ok::<_, Error>(d)
        })?;
        let zp: Vec<f64> = diffs.iter().map(|d| d.0).collect();
        let z: Vec<f64> = diffs.iter().map(|d| d.1).collect();
        let c = mean_covariance(&batch_means(&diffs, r.batches));
        cov.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        levels.push(ReferenceLevel {
            level,
            dofs: fine_mesh.num_vertices(),
            samples: n,
            zp: pairwise_sum(&zp) / n as f64,
            z: pairwise_sum(&z) / n as f64,
        });
        drop((fine, coarse));
        coarse_mesh = Some(fine_mesh);
    }
    let zp = pairwise_sum(&levels.iter().map(|l| l.zp).collect::<Vec<_>>());
    let z = pairwise_sum(&levels.iter().map(|l| l.z).collect::<Vec<_>>());
    if !(z > 0.0) {
        return Err(Error::NonPositiveDenominator);
    }
    let ratio = zp / z;
    let var = (cov[0] - 2.0 * ratio * cov[1] + ratio * ratio * cov[2]).max(0.0);
    Ok(ReferenceResult { ratio, std_error: var.sqrt() / z, z, zp, levels })
}

/// Plain MC of `y -> g(y)` with the same draws as level 0; used by tests.
pub fn mc_mean(seed: u64, n: usize, s: usize, exec: Execution, g: impl Fn(&[f64]) -> f64 + Sync + Send) -> f64 {
    let ys = draw(seed, 0, n, s);
    pairwise_sum(&map_indexed(exec, n, |k| g(&ys[k]))) / n as f64
}
